//! Profiled correlation attack on the first AES round.
//!
//! Profiling picks one point of interest per key byte, the sample whose
//! class-conditional means separate most, and stores the mean amplitude for
//! each Hamming weight class hw(sbox(p ^ k)) in 0..=8. The attack phase
//! correlates, for every candidate key byte k, the predicted class means
//! against the observed amplitudes at the POI across traces; the true key
//! orders the predictions correctly and wins the correlation. Scores are
//! mapped to per-byte log probabilities through the Fisher z-transform,
//! z = atanh(r) * sqrt(n - 3), followed by a log-softmax, which makes the
//! 16 per-byte score vectors combinable by addition for key ranking.

use crate::error::{Error, Result};
use crate::sim::{aes_intermediate, hamming_weight};
use crate::store::{Role, TraceSet};
use serde::{Deserialize, Serialize};

pub const HW_CLASSES: usize = 9;

/// Minimum traces per Hamming weight class for a usable profile.
pub const MIN_CLASS_OCCUPANCY: usize = 5;

/// One key byte's leakage model: where it leaks and how much per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileByte {
    pub poi_index: usize,
    pub class_means: [f64; HW_CLASSES],
    pub class_counts: [u32; HW_CLASSES],
}

/// Leakage profile of a device at one frequency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    pub frequency: f64,
    pub n_traces: usize,
    pub bytes: Vec<ProfileByte>,
}

/// Builds a profile from a labeled trace set (role `profiling`, key known).
///
/// The POI per byte maximizes the count-weighted between-class variance
/// sum_c n_c (mu_c - mu)^2 over samples.
pub fn build_profile(set: &TraceSet) -> Result<Profile> {
    set.validate()?;
    if set.meta.role != Role::Profiling {
        return Err(Error::Config(format!(
            "profiling needs a profiling-role set, got {:?}",
            set.meta.role
        )));
    }
    let key = set.meta.key.ok_or_else(|| {
        Error::Config("profiling set carries no key".into())
    })?;
    let n = set.rows.len();
    let len = set.meta.trace_len;
    if n < HW_CLASSES * MIN_CLASS_OCCUPANCY {
        return Err(Error::Config(format!(
            "{n} traces cannot populate {HW_CLASSES} classes at {MIN_CLASS_OCCUPANCY} each"
        )));
    }

    let classes: Vec<[u8; 16]> = set
        .meta
        .plaintexts
        .iter()
        .map(|pt| {
            let mut c = [0u8; 16];
            for b in 0..16 {
                c[b] = hamming_weight(aes_intermediate(pt[b], key[b]));
            }
            c
        })
        .collect();

    let mut bytes = Vec::with_capacity(16);
    for b in 0..16 {
        let mut sums = vec![[0.0f64; HW_CLASSES]; len];
        let mut counts = [0u32; HW_CLASSES];
        for (row, cls) in set.rows.iter().zip(&classes) {
            let c = cls[b] as usize;
            counts[c] += 1;
            let acc = &mut sums;
            for (i, &v) in row.iter().enumerate() {
                acc[i][c] += v as f64;
            }
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                return Err(Error::InsufficientProfilingData { byte: b, class: c });
            }
        }

        let inv_n = 1.0 / n as f64;
        let mut best_i = 0;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..len {
            let total: f64 = sums[i].iter().sum();
            let mu = total * inv_n;
            let mut between = 0.0;
            for c in 0..HW_CLASSES {
                let mc = sums[i][c] / counts[c] as f64;
                between += counts[c] as f64 * (mc - mu) * (mc - mu);
            }
            if between > best_v {
                best_v = between;
                best_i = i;
            }
        }
        if !(best_v > 0.0) {
            return Err(Error::DegenerateProfile { byte: b });
        }

        let mut class_means = [0.0f64; HW_CLASSES];
        for c in 0..HW_CLASSES {
            class_means[c] = sums[best_i][c] / counts[c] as f64;
        }
        bytes.push(ProfileByte {
            poi_index: best_i,
            class_means,
            class_counts: counts,
        });
    }
    Ok(Profile {
        frequency: set.meta.center_frequency,
        n_traces: n,
        bytes,
    })
}

/// Per-byte candidate scores of an attack: raw correlations and the log
/// probabilities derived from them. Row b column k scores candidate key
/// byte k for byte position b.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub frequency: f64,
    pub n_traces: usize,
    pub scores: Vec<Vec<f64>>,
    pub logprobs: Vec<Vec<f64>>,
}

/// Fisher z-transform plus log-softmax: turns one byte's 256 correlations
/// into log probabilities that sum (in probability) to one.
pub fn scores_to_logprobs(scores: &[f64], n_traces: usize) -> Vec<f64> {
    let weight = ((n_traces as f64) - 3.0).max(1.0).sqrt();
    let clamp = 1.0 - 1e-6;
    let z: Vec<f64> = scores
        .iter()
        .map(|&s| s.clamp(-clamp, clamp).atanh() * weight)
        .collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Correlates profile predictions against observed POI amplitudes for every
/// candidate value of every key byte.
pub fn correlation_attack(set: &TraceSet, profile: &Profile) -> Result<ScoreMatrix> {
    set.validate()?;
    if (set.meta.center_frequency - profile.frequency).abs() > 1e-3 {
        return Err(Error::FrequencyMismatch {
            profile_hz: profile.frequency,
            set_hz: set.meta.center_frequency,
        });
    }
    if profile.bytes.len() != 16 {
        return Err(Error::ShapeError {
            context: format!("profile holds {} bytes", profile.bytes.len()),
        });
    }
    let n = set.rows.len();
    if n < 2 {
        return Err(Error::ShapeError {
            context: format!("correlation needs at least 2 traces, got {n}"),
        });
    }
    for pb in &profile.bytes {
        if pb.poi_index >= set.meta.trace_len {
            return Err(Error::ShapeError {
                context: format!(
                    "profile POI {} outside trace of {}",
                    pb.poi_index, set.meta.trace_len
                ),
            });
        }
    }

    let mut scores = Vec::with_capacity(16);
    for (b, pb) in profile.bytes.iter().enumerate() {
        // Group observations by plaintext byte value: correlation against
        // any candidate's predictions then needs only the 256 group sums.
        let mut count = [0.0f64; 256];
        let mut obs_sum = [0.0f64; 256];
        let mut total_o = 0.0f64;
        let mut total_oo = 0.0f64;
        for (row, pt) in set.rows.iter().zip(&set.meta.plaintexts) {
            let v = pt[b] as usize;
            let o = row[pb.poi_index] as f64;
            count[v] += 1.0;
            obs_sum[v] += o;
            total_o += o;
            total_oo += o * o;
        }
        if count.iter().filter(|&&c| c > 0.0).count() < 2 {
            return Err(Error::DegenerateAttackSet { byte: b });
        }
        let nf = n as f64;
        let var_o = total_oo - total_o * total_o / nf;

        let mut row_scores = Vec::with_capacity(256);
        for k in 0..256u16 {
            let k = k as u8;
            let mut total_p = 0.0f64;
            let mut total_pp = 0.0f64;
            let mut total_po = 0.0f64;
            for v in 0..256usize {
                if count[v] == 0.0 {
                    continue;
                }
                let hw = hamming_weight(aes_intermediate(v as u8, k)) as usize;
                let p = pb.class_means[hw];
                total_p += count[v] * p;
                total_pp += count[v] * p * p;
                total_po += p * obs_sum[v];
            }
            let var_p = total_pp - total_p * total_p / nf;
            let cov = total_po - total_p * total_o / nf;
            let denom = (var_p * var_o).sqrt();
            let r = if denom > 0.0 {
                (cov / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            row_scores.push(r);
        }
        scores.push(row_scores);
    }

    let logprobs = scores
        .iter()
        .map(|row| scores_to_logprobs(row, n))
        .collect();
    Ok(ScoreMatrix {
        frequency: set.meta.center_frequency,
        n_traces: n,
        scores,
        logprobs,
    })
}

impl ScoreMatrix {
    /// Highest-scoring candidate per byte.
    pub fn best_guess(&self) -> [u8; 16] {
        let mut guess = [0u8; 16];
        for (b, row) in self.scores.iter().enumerate() {
            let mut best = 0usize;
            for (k, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = k;
                }
            }
            guess[b] = best as u8;
        }
        guess
    }
}
