//! Key rank estimation: where does the true key sit in the candidate order
//! implied by per-byte scores?
//!
//! The full key's score is the sum of its bytes' log probabilities, so the
//! number of keys scoring above the true key is a convolution problem. Each
//! byte's log probabilities are quantized into a shared histogram; convolving
//! the byte histograms yields the distribution of full-key scores, and the
//! mass above the true key's quantized score bounds its rank. Quantization
//! smears each byte by at most one bin (inclusive, because the top bin is
//! clamped), so a slack of one bin per byte plus one separates the counts
//! that are certainly above or below from the uncertain window; the reported
//! estimate is the middle of that window. An exact enumeration oracle covers
//! small keyspaces for validation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 2048;

/// Attack outcome classes by estimated enumeration effort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankClass {
    /// Enumerable at small cost: rank at most 2^32.
    Green,
    /// Enumerable with serious effort: rank at most 2^35.
    Blue,
    /// Out of practical enumeration reach.
    Red,
}

impl RankClass {
    pub fn from_log2(log2_rank: f64) -> RankClass {
        if log2_rank <= 32.0 {
            RankClass::Green
        } else if log2_rank <= 35.0 {
            RankClass::Blue
        } else {
            RankClass::Red
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RankClass::Green => "green",
            RankClass::Blue => "blue",
            RankClass::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RankResult {
    pub log2_lower: f64,
    pub log2_estimate: f64,
    pub log2_upper: f64,
    pub n_bins: usize,
}

impl RankResult {
    pub fn class(&self) -> RankClass {
        RankClass::from_log2(self.log2_estimate)
    }
}

/// Histogram-convolution rank bounds for the key whose byte values are
/// `correct`. `logprobs[b][k]` scores candidate k of byte b; bytes may have
/// differing candidate counts.
pub fn histogram_rank(
    logprobs: &[Vec<f64>],
    correct: &[usize],
    n_bins: usize,
) -> Result<RankResult> {
    let n_bytes = logprobs.len();
    if n_bytes == 0 || n_bytes != correct.len() {
        return Err(Error::ShapeError {
            context: format!(
                "{} score rows against {} correct indices",
                n_bytes,
                correct.len()
            ),
        });
    }
    if n_bins < 2 {
        return Err(Error::Config(format!("n_bins {n_bins} too small")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (b, row) in logprobs.iter().enumerate() {
        if row.len() < 2 || correct[b] >= row.len() {
            return Err(Error::ShapeError {
                context: format!(
                    "byte {b}: {} candidates, correct index {}",
                    row.len(),
                    correct[b]
                ),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeError {
                context: format!("byte {b}: non-finite log probability"),
            });
        }
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }

    let total: f64 = logprobs.iter().map(|r| r.len() as f64).product();
    let log2_total = total.log2();

    // All scores equal: every key ties with the true one.
    if hi - lo <= 0.0 {
        return Ok(RankResult {
            log2_lower: 0.0,
            log2_estimate: ((total + 1.0) / 2.0).log2(),
            log2_upper: log2_total,
            n_bins,
        });
    }

    let width = (hi - lo) / n_bins as f64;
    let quantize = |v: f64| -> usize { (((v - lo) / width) as usize).min(n_bins - 1) };

    // Convolution over f64 counts; exact for keyspaces below 2^53 and a
    // faithful density beyond.
    let mut conv = vec![0.0f64; 1];
    conv[0] = 1.0;
    let mut correct_q = 0usize;
    for (b, row) in logprobs.iter().enumerate() {
        let mut hist = vec![0.0f64; n_bins];
        for &v in row {
            hist[quantize(v)] += 1.0;
        }
        correct_q += quantize(row[correct[b]]);
        let nonzero: Vec<(usize, f64)> = hist
            .into_iter()
            .enumerate()
            .filter(|&(_, h)| h != 0.0)
            .collect();
        let mut next = vec![0.0f64; conv.len() + n_bins - 1];
        for (i, &c) in conv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for &(j, h) in &nonzero {
                next[i + j] += c * h;
            }
        }
        conv = next;
    }

    // Sum the above-mass and the uncertainty window directly from the
    // convolution. Deriving the window by subtracting from the keyspace
    // total would cancel catastrophically: at 2^128 keys the f64 ulp is
    // 2^76, which would swamp any small window.
    let slack = n_bytes + 1;
    let hi_cut = (correct_q + slack).min(conv.len());
    let lo_cut = correct_q.saturating_sub(slack - 1);
    let above: f64 = conv[hi_cut..].iter().sum();
    let window: f64 = conv[lo_cut..hi_cut].iter().sum::<f64>().max(1.0);

    let lower = above + 1.0;
    let upper = above + window;
    let estimate = (above + (window + 1.0) / 2.0).clamp(lower, upper);
    Ok(RankResult {
        log2_lower: lower.log2().clamp(0.0, log2_total),
        log2_estimate: estimate.log2().clamp(0.0, log2_total),
        log2_upper: upper.log2().clamp(0.0, log2_total),
        n_bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactRank {
    /// 1-based rank counting strictly better keys.
    pub rank: u64,
    /// Other keys scoring exactly the same.
    pub ties: u64,
}

/// Exhaustive rank oracle for small keyspaces (at most 2^24 keys): counts
/// full-key score sums strictly above, and equal to, the true key's.
pub fn enumerate_rank_exact(logprobs: &[Vec<f64>], correct: &[usize]) -> Result<ExactRank> {
    let n_bytes = logprobs.len();
    if n_bytes == 0 || n_bytes != correct.len() {
        return Err(Error::ShapeError {
            context: format!(
                "{} score rows against {} correct indices",
                n_bytes,
                correct.len()
            ),
        });
    }
    let mut log2_size = 0.0f64;
    for (b, row) in logprobs.iter().enumerate() {
        if row.is_empty() || correct[b] >= row.len() {
            return Err(Error::ShapeError {
                context: format!("byte {b}: bad candidate row"),
            });
        }
        log2_size += (row.len() as f64).log2();
    }
    if log2_size > 24.0 {
        return Err(Error::OracleTooLarge { log2_size });
    }

    let target: f64 = logprobs
        .iter()
        .zip(correct)
        .map(|(row, &c)| row[c])
        .sum();

    let mut greater = 0u64;
    let mut equal = 0u64;
    let mut stack = vec![(0usize, 0.0f64)];
    while let Some((depth, sum)) = stack.pop() {
        if depth == n_bytes {
            if sum > target {
                greater += 1;
            } else if sum == target {
                equal += 1;
            }
            continue;
        }
        for &v in &logprobs[depth] {
            stack.push((depth + 1, sum + v));
        }
    }
    Ok(ExactRank {
        rank: greater + 1,
        ties: equal - 1,
    })
}
