//! Synthetic victim: a mixed-signal chip whose AES-128 encryptions leak into
//! its radio band.
//!
//! The model works in baseband-equivalent terms. Digital switching at the CPU
//! clock mixes with the radio carrier, so leakage lines sit at
//! `f_rf + n * f_clk`. Tuning a receiver to `f_test` picks up the nearby lines
//! weighted by a unit-peak Gaussian kernel of width `kernel_width`:
//!
//!   E(f) = leak_gain * sum_n A_n * exp(-(f - f_rf - n*f_clk)^2 / (2 w^2))
//!
//! Each encryption (one "CP", for crypto primitive) contributes an amplitude
//! template scaled by E(f_test): a fixed AES-shaped envelope plus, at 16
//! evenly spaced points of interest, a bump proportional to the Hamming
//! weight of the first-round S-box output of the matching key byte.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::{fir_lowpass, AmplitudeTrace, IqTrace};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// AES S-box (FIPS-197).
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

/// First-round leakage target: S-box output of plaintext XOR key.
pub fn aes_intermediate(plaintext_byte: u8, key_byte: u8) -> u8 {
    SBOX[(plaintext_byte ^ key_byte) as usize]
}

pub fn hamming_weight(b: u8) -> u8 {
    b.count_ones() as u8
}

/// Plaintexts for profiling captures, stratified so every byte position
/// cycles through all nine Hamming weight classes of its S-box output.
///
/// Uniform plaintexts starve the hw 0 and hw 8 classes (each has probability
/// 1/256 per byte), so profiling sets in the low thousands would routinely
/// miss them; stratification guarantees floor(n/9) traces per class. The
/// profiling phase controls the device, so choosing plaintexts is fair game.
pub fn stratified_plaintexts(key: &[u8; 16], n: usize, rng: &mut impl Rng) -> Vec<[u8; 16]> {
    let mut pts = vec![[0u8; 16]; n];
    // Each byte gets its own shuffled class cycle: balance within a byte,
    // independence across bytes.
    for b in 0..16 {
        let mut by_class: [Vec<u8>; 9] = Default::default();
        for v in 0..=255u8 {
            by_class[hamming_weight(aes_intermediate(v, key[b])) as usize].push(v);
        }
        let mut classes = Vec::with_capacity(n + 9);
        while classes.len() < n {
            let mut block: [usize; 9] = std::array::from_fn(|c| c);
            for i in (1..9).rev() {
                block.swap(i, rng.gen_range(0..=i));
            }
            classes.extend_from_slice(&block);
        }
        for (pt, &class) in pts.iter_mut().zip(&classes) {
            let bucket = &by_class[class];
            pt[b] = bucket[rng.gen_range(0..bucket.len())];
        }
    }
    pts
}

// Fixed model constants. These play the role of physical characteristics of
// the victim: how strongly the carrier itself bleeds through, how tall a POI
// bump is per Hamming-weight unit, and how much fine texture the CP envelope
// carries (texture is what gives sub-sample alignment its contrast).
pub const CARRIER_AMP: f64 = 5.0;
pub const POI_ALPHA: f64 = 0.05;
pub const TEXTURE_AMP: f64 = 0.3;

/// The victim device.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub f_clk: f64,
    pub f_rf: f64,
    /// Relative amplitude A_n of the leakage line at f_rf + n*f_clk.
    pub harmonic_amps: BTreeMap<i32, f64>,
    /// Gaussian kernel width (Hz) of each leakage line as seen by the receiver.
    pub kernel_width: f64,
    pub leak_gain: f64,
    /// Duration of one crypto primitive execution (seconds).
    pub cp_duration: f64,
    pub inter_cp_gap: f64,
    pub key: [u8; 16],
    pub sample_rate: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        let mut harmonic_amps = BTreeMap::new();
        for (n, a) in [(1, 1.0), (2, 0.8), (3, 0.5), (4, 0.3)] {
            harmonic_amps.insert(n, a);
            harmonic_amps.insert(-n, a);
        }
        DeviceModel {
            f_clk: 64e6,
            f_rf: 2.4e9,
            harmonic_amps,
            kernel_width: 16e6,
            leak_gain: 1.0,
            cp_duration: 870e-6,
            inter_cp_gap: 0.0,
            key: [
                0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6, 0xab, 0xf7, 0x15, 0x88, 0x09,
                0xcf, 0x4f, 0x3c,
            ],
            sample_rate: 5e6,
        }
    }
}

impl DeviceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.f_clk > 0.0 && self.f_rf > 0.0) {
            return Err(Error::Config("rates and frequencies must be positive".into()));
        }
        if !(self.kernel_width > 0.0) {
            return Err(Error::Config("kernel_width must be positive".into()));
        }
        if !(self.cp_duration > 0.0) || self.inter_cp_gap < 0.0 {
            return Err(Error::Config("CP timing must be non-negative".into()));
        }
        if self.cp_len_samples() < 48 {
            return Err(Error::Config(format!(
                "cp_duration of {} samples is too short for 16 points of interest",
                self.cp_len_samples()
            )));
        }
        if !self.harmonic_amps.values().all(|a| a.is_finite()) {
            return Err(Error::Config("harmonic amplitudes must be finite".into()));
        }
        Ok(())
    }

    /// Template length in samples.
    pub fn cp_len_samples(&self) -> usize {
        (self.cp_duration * self.sample_rate).round() as usize
    }

    /// CP repetition period in samples (may be fractional).
    pub fn cp_period_samples(&self) -> f64 {
        (self.cp_duration + self.inter_cp_gap) * self.sample_rate
    }

    /// Largest leakage line amplitude, used to scale interference power.
    pub fn leak_peak(&self) -> f64 {
        self.leak_gain
            * self
                .harmonic_amps
                .iter()
                .filter(|(n, _)| **n != 0)
                .map(|(_, a)| a.abs())
                .fold(0.0, f64::max)
    }
}

/// Channel noise seen by the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Wired,
    Wireless,
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    /// Std-dev of the additive Gaussian noise per I/Q component.
    pub awgn_sigma: f64,
    pub mode: NoiseMode,
    /// Multiplier applied to awgn_sigma in wireless mode.
    pub wireless_factor: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            awgn_sigma: 0.2,
            mode: NoiseMode::Wired,
            wireless_factor: 3.0,
        }
    }
}

impl NoiseModel {
    pub fn effective_sigma(&self) -> f64 {
        match self.mode {
            NoiseMode::Wired => self.awgn_sigma,
            NoiseMode::Wireless => self.awgn_sigma * self.wireless_factor,
        }
    }
}

/// A band-limited co-channel transmitter (e.g. a busy WiFi network).
#[derive(Debug, Clone)]
pub struct InterferenceSource {
    pub center: f64,
    pub bandwidth: f64,
    /// Power relative to the squared leakage peak amplitude.
    pub power: f64,
}

fn gaussian_kernel(df: f64, width: f64) -> f64 {
    (-df * df / (2.0 * width * width)).exp()
}

/// Receiver-side leakage amplitude at `f`, per the model in the module docs.
pub fn spectral_envelope(dev: &DeviceModel, f: f64) -> f64 {
    dev.leak_gain
        * dev
            .harmonic_amps
            .iter()
            .map(|(&n, &a)| a * gaussian_kernel(f - dev.f_rf - n as f64 * dev.f_clk, dev.kernel_width))
            .sum::<f64>()
}

/// Precomputed CP synthesis state: base template, POI layout, bump pulse.
pub struct CpSynth {
    dev: DeviceModel,
    base: Vec<f64>,
    poi: [usize; 16],
    pulse: Vec<f64>,
}

impl CpSynth {
    pub fn new(dev: &DeviceModel) -> Result<Self> {
        dev.validate()?;
        let len = dev.cp_len_samples();

        // Fixed fine texture, band-limited to a fifth of the sample rate so it
        // survives the segmentation prefilter. Seeded by length only: it is a
        // device characteristic, not part of any experiment's randomness.
        let mut rng = stream(0, &[tag::DEVICE_TEXTURE, len as u64]);
        let white: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let white = AmplitudeTrace {
            samples: white,
            sample_rate: dev.sample_rate,
        };
        let filtered = fir_lowpass(&white, dev.sample_rate / 5.0, 65)?;
        let rms = (filtered.samples.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
        let texture: Vec<f64> = filtered.samples.iter().map(|v| v / rms).collect();

        let mut base = Vec::with_capacity(len);
        for t in 0..len {
            let u = t as f64 / len as f64;
            // Ten-round activity ripple with short ramps at both ends.
            let ripple = 0.55 + 0.45 * (10.0 * std::f64::consts::PI * u).sin().abs();
            let ramp_in = (u / 0.02).min(1.0);
            let ramp_out = ((1.0 - u) / 0.02).min(1.0);
            base.push(ripple * ramp_in * ramp_out + TEXTURE_AMP * texture[t]);
        }

        let mut poi = [0usize; 16];
        for (b, p) in poi.iter_mut().enumerate() {
            *p = ((b as f64 + 0.5) * len as f64 / 16.0).round() as usize;
        }

        let pulse_len = {
            let w = ((len as f64 * 0.003).round() as usize).max(3);
            if w % 2 == 0 {
                w + 1
            } else {
                w
            }
        };
        let pulse: Vec<f64> = (0..pulse_len)
            .map(|j| {
                0.5 * (1.0
                    - (2.0 * std::f64::consts::PI * j as f64 / (pulse_len - 1) as f64).cos())
            })
            .collect();

        Ok(CpSynth {
            dev: dev.clone(),
            base,
            poi,
            pulse,
        })
    }

    pub fn device(&self) -> &DeviceModel {
        &self.dev
    }

    pub fn poi_positions(&self) -> [usize; 16] {
        self.poi
    }

    pub fn base_template(&self) -> &[f64] {
        &self.base
    }

    /// Unscaled leakage template for one encryption of `plaintext`.
    pub fn template_for(&self, plaintext: &[u8; 16]) -> Vec<f64> {
        let mut tpl = self.base.clone();
        self.add_bumps(&mut tpl, plaintext);
        tpl
    }

    fn add_bumps(&self, tpl: &mut [f64], plaintext: &[u8; 16]) {
        let half = (self.pulse.len() - 1) / 2;
        for b in 0..16 {
            let hw = hamming_weight(aes_intermediate(plaintext[b], self.dev.key[b])) as f64;
            if hw == 0.0 {
                continue;
            }
            let amp = POI_ALPHA * hw;
            let start = self.poi[b] - half;
            for (j, &p) in self.pulse.iter().enumerate() {
                tpl[start + j] += amp * p;
            }
        }
    }

    /// Synthesizes a raw IQ capture at `f_test` holding `plaintexts.len()`
    /// consecutive CPs (when enabled), embedded in the carrier-leak baseline,
    /// channel noise, and any in-band interference. Half a CP of lead-in and
    /// lead-out padding surrounds the CP train.
    pub fn capture(
        &self,
        noise: &NoiseModel,
        interferers: &[InterferenceSource],
        f_test: f64,
        plaintexts: &[[u8; 16]],
        cps_enabled: bool,
        rng: &mut impl Rng,
    ) -> IqTrace {
        let dev = &self.dev;
        let len = self.base.len();
        let period = dev.cp_period_samples();
        let n_cps = plaintexts.len();
        let pad = len / 2;
        let total = 2 * pad
            + if n_cps == 0 {
                0
            } else {
                ((n_cps - 1) as f64 * period).ceil() as usize + len
            };

        let envelope = spectral_envelope(dev, f_test);
        let dc = CARRIER_AMP * dev.leak_gain * gaussian_kernel(f_test - dev.f_rf, dev.kernel_width);

        let interference_power: f64 = interferers
            .iter()
            .filter(|i| (f_test - i.center).abs() < i.bandwidth / 2.0)
            .map(|i| i.power * dev.leak_peak() * dev.leak_peak())
            .sum();
        // AWGN sigma is per component; interference power is total complex
        // power, so half lands on each component.
        let sigma = (noise.effective_sigma().powi(2) + interference_power / 2.0).sqrt();

        let mut re = vec![0.0f64; total];
        let mut im = vec![0.0f64; total];
        for t in 0..total {
            re[t] = dc + sigma * rng.sample::<f64, _>(StandardNormal);
            im[t] = sigma * rng.sample::<f64, _>(StandardNormal);
        }

        if cps_enabled && n_cps > 0 {
            let mut tpl = vec![0.0f64; len];
            let mut last_pt: Option<[u8; 16]> = None;
            for (c, pt) in plaintexts.iter().enumerate() {
                if last_pt != Some(*pt) {
                    tpl.copy_from_slice(&self.base);
                    self.add_bumps(&mut tpl, pt);
                    last_pt = Some(*pt);
                }
                let start = pad + (c as f64 * period).round_ties_even() as usize;
                for (t, &v) in tpl.iter().enumerate() {
                    re[start + t] += envelope * v;
                }
            }
        }

        let samples = re
            .into_iter()
            .zip(im)
            .map(|(r, i)| Complex64::new(r, i))
            .collect();
        IqTrace {
            samples,
            sample_rate: dev.sample_rate,
        }
    }
}

/// One-off template synthesis; see [`CpSynth::template_for`].
pub fn synth_cp_leakage(dev: &DeviceModel, plaintext: &[u8; 16]) -> Result<AmplitudeTrace> {
    let synth = CpSynth::new(dev)?;
    Ok(AmplitudeTrace {
        samples: synth.template_for(plaintext),
        sample_rate: dev.sample_rate,
    })
}

/// One-off capture synthesis; see [`CpSynth::capture`].
pub fn synth_raw_capture(
    dev: &DeviceModel,
    noise: &NoiseModel,
    interferers: &[InterferenceSource],
    f_test: f64,
    plaintexts: &[[u8; 16]],
    cps_enabled: bool,
    rng: &mut impl Rng,
) -> Result<IqTrace> {
    Ok(CpSynth::new(dev)?.capture(noise, interferers, f_test, plaintexts, cps_enabled, rng))
}
