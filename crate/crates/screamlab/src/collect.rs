//! Collection against the simulated victim: captures, calibration, and the
//! capture-segment-average pipeline that turns raw IQ into labeled trace
//! sets.
//!
//! Calibration happens once, at the strongest harmonic: a multi-CP capture
//! is taken and the CP period recovered from it. Each analysis frequency
//! then gets its own averaged single-CP pattern (leakage shape changes
//! across the band), and bulk collection cuts batches of raw captures with
//! that pattern. Time diversity averages N consecutive same-plaintext CPs
//! into one trace before the final 550 kHz low-pass; filtering after
//! averaging is equivalent to filtering each segment (both are linear) at a
//! fraction of the cost.
//!
//! Every random choice is drawn from a dedicated stream keyed by seed,
//! purpose, frequency, role, and batch, so any subset of the work can be
//! reproduced independently and collection order cannot leak between
//! frequencies.

use crate::dsp::{fir_lowpass, magnitude, AmplitudeTrace};
use crate::error::{Error, Result};
use crate::locate::SweepCollector;
use crate::rng::{freq_label, stream, tag};
use crate::scenario::Scenario;
use crate::segment::{
    estimate_cp_length, extract_pattern, segment_by_pattern_with, vt_segment, Pattern,
    SegmentConfig,
};
use crate::sim::{stratified_plaintexts, CpSynth, DeviceModel, InterferenceSource, NoiseModel};
use crate::store::{average_time_diversity, Role, TraceSet, TraceSetMeta};
use rand::Rng;
use std::sync::OnceLock;

pub const SEGMENT_CUTOFF_HZ: f64 = 550e3;
pub const SEGMENT_TAPS: usize = 129;

/// Search window around the nominal CP period, as a fraction.
const PERIOD_SEARCH_WINDOW: f64 = 0.02;

fn role_id(role: Role) -> u64 {
    match role {
        Role::Profiling => 1,
        Role::Attack => 2,
        Role::TtestSetA => 3,
        Role::TtestSetB => 4,
    }
}

/// Deterministic collector over the mixed-signal victim simulator.
pub struct SimCollector {
    scenario: Scenario,
    dev: DeviceModel,
    noise: NoiseModel,
    interferers: Vec<InterferenceSource>,
    synth: CpSynth,
    seed: u64,
    ttest_plaintexts: ([u8; 16], [u8; 16]),
    period: OnceLock<std::result::Result<f64, String>>,
}

impl SimCollector {
    pub fn new(scenario: Scenario) -> Result<SimCollector> {
        scenario.validate()?;
        let dev = scenario.device_model()?;
        let noise = scenario.noise_model()?;
        let interferers = scenario.interference();
        let synth = CpSynth::new(&dev)?;
        let seed = scenario.collection.seed;
        let mut rng = stream(seed, &[tag::TTEST_CLASSES]);
        let ttest_plaintexts = (rng.gen(), rng.gen());
        Ok(SimCollector {
            scenario,
            dev,
            noise,
            interferers,
            synth,
            seed,
            ttest_plaintexts,
            period: OnceLock::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn device(&self) -> &DeviceModel {
        &self.dev
    }

    pub fn key(&self) -> [u8; 16] {
        self.dev.key
    }

    /// The fixed plaintext pair behind the two t-test classes.
    pub fn ttest_pair(&self) -> ([u8; 16], [u8; 16]) {
        self.ttest_plaintexts
    }

    /// Strongest harmonic of the device, used for calibration captures.
    /// Harmonics sitting inside an interferer's band are skipped when a
    /// clean one exists: calibration only needs any frequency where the CP
    /// shape is visible, so it avoids polluted spots.
    pub fn calibration_frequency(&self) -> f64 {
        let jammed = |f: f64| {
            self.interferers
                .iter()
                .any(|i| (f - i.center).abs() < i.bandwidth / 2.0)
        };
        let pick = |skip_jammed: bool| {
            self.dev
                .harmonic_amps
                .iter()
                .map(|(n, amp)| (self.dev.f_rf + *n as f64 * self.dev.f_clk, *n, *amp))
                .filter(|(f, _, _)| !(skip_jammed && jammed(*f)))
                .max_by(|a, b| {
                    (a.2.abs(), -a.1.abs()) // strongest amp, then smallest |n|
                        .partial_cmp(&(b.2.abs(), -b.1.abs()))
                        .expect("amps are finite")
                })
                .map(|(f, _, _)| f)
        };
        pick(true).or_else(|| pick(false)).unwrap_or(self.dev.f_rf)
    }

    /// Raw amplitude capture holding `n_cps` CPs, with the acquisition
    /// padding trimmed so sample 0 is the first CP start.
    fn trimmed_capture(
        &self,
        f_hz: f64,
        plaintexts: &[[u8; 16]],
        rng: &mut impl Rng,
    ) -> Result<AmplitudeTrace> {
        let cap = self.synth.capture(
            &self.noise,
            &self.interferers,
            f_hz,
            plaintexts,
            self.scenario.collection.cps_enabled,
            rng,
        );
        let mag = magnitude(&cap)?;
        let pad = self.dev.cp_len_samples() / 2;
        let body = mag.samples.len() - 2 * pad;
        Ok(AmplitudeTrace {
            samples: mag.samples[pad..pad + body].to_vec(),
            sample_rate: mag.sample_rate,
        })
    }

    fn calibration_capture(&self, f_hz: f64) -> Result<AmplitudeTrace> {
        let mut rng = stream(self.seed, &[tag::CALIBRATION, freq_label(f_hz)]);
        let n = self.scenario.collection.calibration_cps;
        let plaintexts: Vec<[u8; 16]> = (0..n).map(|_| rng.gen()).collect();
        self.trimmed_capture(f_hz, &plaintexts, &mut rng)
    }

    /// CP period in samples, estimated once per collector from a calibration
    /// capture at the strongest harmonic. The outcome (success or failure)
    /// is cached.
    pub fn cp_period_samples(&self) -> Result<f64> {
        let cached = self.period.get_or_init(|| {
            let f_cal = self.calibration_frequency();
            let nominal = self.dev.cp_duration + self.dev.inter_cp_gap;
            self.calibration_capture(f_cal)
                .and_then(|raw| estimate_cp_length(&raw, nominal, PERIOD_SEARCH_WINDOW))
                .map(|l| l.samples_per_cp)
                .map_err(|e| e.to_string())
        });
        cached.clone().map_err(|details| Error::CollectionFailed {
            frequency_hz: self.calibration_frequency(),
            details,
        })
    }

    /// Averaged single-CP pattern at `f_hz`, recovered by virtual triggering
    /// on a fresh calibration capture.
    pub fn pattern_at(&self, f_hz: f64) -> Result<Pattern> {
        let period = self.cp_period_samples()?;
        let raw = self.calibration_capture(f_hz)?;
        let n_segs = ((raw.samples.len() as f64 / period).floor() as usize)
            .min(self.scenario.collection.calibration_cps);
        if n_segs < 2 {
            return Err(Error::CollectionFailed {
                frequency_hz: f_hz,
                details: format!("calibration capture holds only {n_segs} periods"),
            });
        }
        let segments = vt_segment(&raw, period, n_segs)?;
        extract_pattern(&segments, f_hz)
    }

    fn plaintexts_for(&self, f_hz: f64, role: Role, n_groups: usize) -> Vec<[u8; 16]> {
        let mut rng = stream(self.seed, &[tag::PLAINTEXT, freq_label(f_hz), role_id(role)]);
        match role {
            Role::Profiling => stratified_plaintexts(&self.dev.key, n_groups, &mut rng),
            Role::Attack => (0..n_groups).map(|_| rng.gen()).collect(),
            Role::TtestSetA => vec![self.ttest_plaintexts.0; n_groups],
            Role::TtestSetB => vec![self.ttest_plaintexts.1; n_groups],
        }
    }

    /// Collects `n_traces` averaged traces at `f_hz`: batches of CPs are
    /// captured, pattern-segmented, averaged over the diversity factor, and
    /// low-passed at 550 kHz.
    pub fn collect_set(&self, f_hz: f64, n_traces: usize, role: Role) -> Result<TraceSet> {
        if n_traces == 0 {
            return Err(Error::Config("cannot collect an empty set".into()));
        }
        let pattern = self.pattern_at(f_hz)?;
        let period = self.cp_period_samples()?;
        let n = self.scenario.collection.time_diversity_n;
        let group_plaintexts = self.plaintexts_for(f_hz, role, n_traces);

        let batch_groups =
            (self.scenario.collection.batch_cps.max(n) / n).min(n_traces).max(1);
        let cut_cfg = SegmentConfig {
            segment_cutoff: None,
            expected_period: Some(period),
            ..SegmentConfig::default()
        };

        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n_traces);
        let mut plaintexts = Vec::with_capacity(n_traces);
        for (batch, groups) in group_plaintexts.chunks(batch_groups).enumerate() {
            let cps: Vec<[u8; 16]> = groups
                .iter()
                .flat_map(|pt| std::iter::repeat(*pt).take(n))
                .collect();
            let mut rng = stream(
                self.seed,
                &[tag::NOISE, freq_label(f_hz), role_id(role), batch as u64],
            );
            let raw = self.trimmed_capture(f_hz, &cps, &mut rng)?;
            let seg = segment_by_pattern_with(&raw, &pattern, &cut_cfg).map_err(|e| {
                Error::CollectionFailed {
                    frequency_hz: f_hz,
                    details: format!("batch {batch}: {e}"),
                }
            })?;
            if seg.rows.len() != cps.len() {
                return Err(Error::CollectionFailed {
                    frequency_hz: f_hz,
                    details: format!(
                        "batch {batch}: {} CPs captured but {} segments found",
                        cps.len(),
                        seg.rows.len()
                    ),
                });
            }
            let (averaged, group_pts) = average_time_diversity(&seg.rows, &cps, n)?;
            for (avg, pt) in averaged.into_iter().zip(group_pts) {
                let filtered = fir_lowpass(
                    &AmplitudeTrace {
                        samples: avg,
                        sample_rate: self.dev.sample_rate,
                    },
                    SEGMENT_CUTOFF_HZ,
                    SEGMENT_TAPS,
                )?;
                rows.push(filtered.samples.iter().map(|&v| v as f32).collect());
                plaintexts.push(pt);
            }
        }

        let trace_len = pattern.samples.len();
        let set = TraceSet {
            meta: TraceSetMeta {
                center_frequency: f_hz,
                sample_rate: self.dev.sample_rate,
                n_traces: rows.len(),
                trace_len,
                time_diversity_n: n,
                plaintexts,
                key: (role == Role::Profiling).then_some(self.dev.key),
                role,
            },
            rows,
        };
        set.validate()?;
        Ok(set)
    }
}

impl SimCollector {
    /// Untrimmed IQ capture of `n_cps` varying-plaintext CPs at `f_hz`; the
    /// IQ twin of [`SweepCollector::detection_capture`], same stream, same
    /// plaintexts.
    pub fn raw_iq_capture(&self, f_hz: f64, n_cps: usize) -> crate::dsp::IqTrace {
        let mut rng = stream(self.seed, &[tag::DETECTION, freq_label(f_hz)]);
        let plaintexts: Vec<[u8; 16]> = (0..n_cps).map(|_| rng.gen()).collect();
        self.synth.capture(
            &self.noise,
            &self.interferers,
            f_hz,
            &plaintexts,
            self.scenario.collection.cps_enabled,
            &mut rng,
        )
    }
}

impl SweepCollector for SimCollector {
    fn class_sets(&self, f_hz: f64, n_per_set: usize) -> Result<(TraceSet, TraceSet)> {
        let a = self.collect_set(f_hz, n_per_set, Role::TtestSetA)?;
        let b = self.collect_set(f_hz, n_per_set, Role::TtestSetB)?;
        Ok((a, b))
    }

    fn detection_capture(&self, f_hz: f64, n_cps: usize) -> Result<AmplitudeTrace> {
        let cap = self.raw_iq_capture(f_hz, n_cps);
        let mag = magnitude(&cap)?;
        let pad = self.dev.cp_len_samples() / 2;
        let body = mag.samples.len() - 2 * pad;
        Ok(AmplitudeTrace {
            samples: mag.samples[pad..pad + body].to_vec(),
            sample_rate: mag.sample_rate,
        })
    }

    fn cp_period(&self) -> Result<f64> {
        self.cp_period_samples()
    }
}
