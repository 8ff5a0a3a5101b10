//! Experiment configuration: JSON-loadable description of a victim device,
//! its channel, and the collection plan. Every field has a default, so a
//! config file only needs to name what it changes.

use crate::error::{Error, Result};
use crate::locate::SweepGrid;
use crate::sim::{DeviceModel, InterferenceSource, NoiseMode, NoiseModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub f_clk: f64,
    pub f_rf: f64,
    /// Harmonic index -> relative amplitude, keyed by strings so the map
    /// stays plain JSON ("1", "-2", ...).
    pub harmonic_amps: BTreeMap<String, f64>,
    pub kernel_width: f64,
    pub leak_gain: f64,
    pub cp_duration: f64,
    pub inter_cp_gap: f64,
    pub sample_rate: f64,
    /// AES-128 key, 32 hex digits.
    pub key: String,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let dev = DeviceModel::default();
        DeviceConfig {
            f_clk: dev.f_clk,
            f_rf: dev.f_rf,
            harmonic_amps: dev
                .harmonic_amps
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            kernel_width: dev.kernel_width,
            leak_gain: dev.leak_gain,
            cp_duration: dev.cp_duration,
            inter_cp_gap: dev.inter_cp_gap,
            sample_rate: dev.sample_rate,
            key: hex::encode(dev.key),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub awgn_sigma: f64,
    /// "wired" or "wireless".
    pub mode: String,
    pub wireless_factor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let n = NoiseModel::default();
        NoiseConfig {
            awgn_sigma: n.awgn_sigma,
            mode: "wired".into(),
            wireless_factor: n.wireless_factor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererConfig {
    pub center: f64,
    pub bandwidth: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    /// Consecutive same-plaintext CPs averaged into one trace.
    pub time_diversity_n: usize,
    /// CPs per capture batch; rounded up to a diversity-group multiple.
    pub batch_cps: usize,
    /// CPs in the calibration capture used for period and pattern recovery.
    pub calibration_cps: usize,
    /// Segments per pattern-detection block.
    pub n_segs: usize,
    /// Pattern-detection blocks per frequency.
    pub n_tests: usize,
    pub seed: u64,
    /// Victim actually runs encryptions; false gives the no-CP control.
    pub cps_enabled: bool,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            time_diversity_n: 10,
            batch_cps: 500,
            calibration_cps: 50,
            n_segs: 50,
            n_tests: 10,
            seed: 0,
            cps_enabled: true,
        }
    }
}

fn default_sweep() -> SweepGrid {
    SweepGrid {
        f_start: 2.43e9,
        f_stop: 2.628e9,
        f_step: 1e6,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub device: DeviceConfig,
    pub noise: NoiseConfig,
    pub interferers: Vec<InterfererConfig>,
    pub sweep: SweepGrid,
    pub collection: CollectionConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            device: DeviceConfig::default(),
            noise: NoiseConfig::default(),
            interferers: Vec::new(),
            sweep: default_sweep(),
            collection: CollectionConfig::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.device_model()?.validate()?;
        self.noise_model()?;
        self.sweep.validate()?;
        let c = &self.collection;
        if c.time_diversity_n == 0 || c.batch_cps == 0 || c.calibration_cps == 0 {
            return Err(Error::Config(
                "time_diversity_n, batch_cps, and calibration_cps must be positive".into(),
            ));
        }
        if c.n_segs < 2 || c.n_tests == 0 {
            return Err(Error::Config(format!(
                "pattern detection needs n_segs >= 2 and n_tests >= 1, got {} and {}",
                c.n_segs, c.n_tests
            )));
        }
        for i in &self.interferers {
            if !(i.bandwidth > 0.0) || !(i.power >= 0.0) {
                return Err(Error::Config(format!(
                    "interferer at {} Hz: bandwidth {} Hz, power {}",
                    i.center, i.bandwidth, i.power
                )));
            }
        }
        Ok(())
    }

    pub fn device_model(&self) -> Result<DeviceModel> {
        let d = &self.device;
        let mut harmonic_amps = BTreeMap::new();
        for (k, &v) in &d.harmonic_amps {
            let n: i32 = k.parse().map_err(|_| {
                Error::Config(format!("harmonic index {k:?} is not an integer"))
            })?;
            harmonic_amps.insert(n, v);
        }
        let key_bytes = hex::decode(&d.key)
            .map_err(|e| Error::Config(format!("key hex: {e}")))?;
        let key: [u8; 16] = key_bytes
            .try_into()
            .map_err(|_| Error::Config("key must be 16 bytes of hex".into()))?;
        Ok(DeviceModel {
            f_clk: d.f_clk,
            f_rf: d.f_rf,
            harmonic_amps,
            kernel_width: d.kernel_width,
            leak_gain: d.leak_gain,
            cp_duration: d.cp_duration,
            inter_cp_gap: d.inter_cp_gap,
            sample_rate: d.sample_rate,
            key,
        })
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let mode = match self.noise.mode.as_str() {
            "wired" => NoiseMode::Wired,
            "wireless" => NoiseMode::Wireless,
            other => {
                return Err(Error::Config(format!(
                    "noise mode {other:?}, expected \"wired\" or \"wireless\""
                )))
            }
        };
        if !(self.noise.awgn_sigma >= 0.0) || !(self.noise.wireless_factor >= 1.0) {
            return Err(Error::Config(format!(
                "noise sigma {} with wireless factor {}",
                self.noise.awgn_sigma, self.noise.wireless_factor
            )));
        }
        Ok(NoiseModel {
            awgn_sigma: self.noise.awgn_sigma,
            mode,
            wireless_factor: self.noise.wireless_factor,
        })
    }

    pub fn interference(&self) -> Vec<InterferenceSource> {
        self.interferers
            .iter()
            .map(|i| InterferenceSource {
                center: i.center,
                bandwidth: i.bandwidth,
                power: i.power,
            })
            .collect()
    }
}
