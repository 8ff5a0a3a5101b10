//! Trace segmentation: cutting a raw capture into per-encryption traces.
//!
//! Two mechanisms build on each other. Virtual triggering (VT) cuts the
//! capture at a fixed fractional period and scores a candidate period by the
//! correlation of even- and odd-indexed segment averages; scanning that score
//! over candidate periods recovers the CP length to hundredths of a sample.
//! Pattern-matching segmentation then slides an averaged single-CP pattern
//! over the (low-passed) capture and cuts at correlation peaks, which also
//! works when CPs do not repeat back-to-back.

use crate::dsp::{
    find_peaks, fir_lowpass, pearson, sliding_correlation, AmplitudeTrace,
};
use crate::error::{Error, Result};

/// Estimated CP repetition period, in samples (fractional).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpLength {
    pub samples_per_cp: f64,
}

/// Averaged single-CP amplitude pattern, tied to the frequency it was
/// extracted at: leakage shape varies across the band, so patterns do not
/// transfer between frequencies.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub samples: Vec<f64>,
    pub source_frequency: f64,
}

/// Cuts `n_segs` segments of length floor(l), segment i starting at
/// round(i*l) (ties to even).
pub fn vt_segment(raw: &AmplitudeTrace, l: f64, n_segs: usize) -> Result<Vec<Vec<f64>>> {
    if !(l > 1.0) || !l.is_finite() {
        return Err(Error::ShapeError {
            context: format!("segment length {l} must exceed one sample"),
        });
    }
    if n_segs == 0 {
        return Err(Error::ShapeError {
            context: "need at least one segment".into(),
        });
    }
    let seg_len = l.floor() as usize;
    let mut rows = Vec::with_capacity(n_segs);
    for i in 0..n_segs {
        let start = (i as f64 * l).round_ties_even() as usize;
        let end = start + seg_len;
        if end > raw.samples.len() {
            return Err(Error::ShapeError {
                context: format!(
                    "segment {i} of {n_segs} ends at {end}, capture holds {}",
                    raw.samples.len()
                ),
            });
        }
        rows.push(raw.samples[start..end].to_vec());
    }
    Ok(rows)
}

/// Correlation of the even-indexed and odd-indexed segment averages.
///
/// With the right period the two averages converge on the same CP shape and
/// the score approaches 1; with a wrong period (or no CPs) they stay noise.
pub fn vt_similarity(segments: &[Vec<f64>]) -> Result<f64> {
    if segments.len() < 2 {
        return Err(Error::ShapeError {
            context: format!("{} segments cannot form two halves", segments.len()),
        });
    }
    let len = segments[0].len();
    if segments.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeError {
            context: "segments have differing lengths".into(),
        });
    }
    let mut even = vec![0.0f64; len];
    let mut odd = vec![0.0f64; len];
    let mut n_even = 0.0;
    let mut n_odd = 0.0;
    for (i, seg) in segments.iter().enumerate() {
        let (acc, n) = if i % 2 == 0 {
            (&mut even, &mut n_even)
        } else {
            (&mut odd, &mut n_odd)
        };
        for (a, v) in acc.iter_mut().zip(seg) {
            *a += v;
        }
        *n += 1.0;
    }
    for v in &mut even {
        *v /= n_even;
    }
    for v in &mut odd {
        *v /= n_odd;
    }
    pearson(&even, &odd)
}

const SIMILARITY_NOISE_FLOOR: f64 = 0.2;

/// Recovers the CP period by maximizing [`vt_similarity`] over candidate
/// periods around `nominal_cp_s * sample_rate`, within `+-search_window`
/// (a fraction). Coarse scan at half-sample steps, then a dense scan at
/// 0.01-sample resolution around the coarse winner.
///
/// The refinement is a grid rather than a bracketing search: segment starts
/// are rounded to whole samples, so the objective is piecewise constant with
/// jumps wherever a candidate period crosses a rounding boundary, and the
/// peak can be a plateau only a few hundredths of a sample wide. The fine
/// grid walks integer hundredths so exact half-sample periods are evaluated
/// without floating-point drift.
pub fn estimate_cp_length(
    raw: &AmplitudeTrace,
    nominal_cp_s: f64,
    search_window: f64,
) -> Result<CpLength> {
    if raw.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let l0 = nominal_cp_s * raw.sample_rate;
    if !(l0 > 2.0) || !(search_window > 0.0 && search_window < 1.0) {
        return Err(Error::ShapeError {
            context: format!("nominal period {l0} samples, window {search_window}"),
        });
    }
    let l_lo = l0 * (1.0 - search_window);
    let l_hi = l0 * (1.0 + search_window);
    let n_segs = ((raw.samples.len() as f64 / l_hi).floor() as usize).min(50);
    if n_segs < 4 {
        return Err(Error::EstimationFailed);
    }

    let score = |l: f64| -> f64 {
        match vt_segment(raw, l, n_segs).and_then(|s| vt_similarity(&s)) {
            Ok(v) => v,
            Err(_) => -1.0,
        }
    };

    let mut best_l = l_lo;
    let mut best_s = f64::NEG_INFINITY;
    let steps = ((l_hi - l_lo) / 0.5).ceil() as usize + 1;
    for i in 0..=steps {
        let l = (l_lo + i as f64 * 0.5).min(l_hi);
        let s = score(l);
        if s > best_s {
            best_s = s;
            best_l = l;
        }
    }
    if best_s < SIMILARITY_NOISE_FLOOR {
        return Err(Error::EstimationFailed);
    }

    let fine_lo = ((best_l - 0.6).max(l_lo) * 100.0).round() as i64;
    let fine_hi = ((best_l + 0.6).min(l_hi) * 100.0).round() as i64;
    for c in fine_lo..=fine_hi {
        let l = c as f64 / 100.0;
        let s = score(l);
        if s > best_s {
            best_s = s;
            best_l = l;
        }
    }
    Ok(CpLength {
        samples_per_cp: best_l,
    })
}

/// Averages segments into a single-CP pattern.
pub fn extract_pattern(segments: &[Vec<f64>], source_frequency: f64) -> Result<Pattern> {
    if segments.is_empty() || segments[0].is_empty() {
        return Err(Error::EmptyTrace);
    }
    let len = segments[0].len();
    if segments.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeError {
            context: "segments have differing lengths".into(),
        });
    }
    let mut mean = vec![0.0f64; len];
    for seg in segments {
        for (m, v) in mean.iter_mut().zip(seg) {
            *m += v;
        }
    }
    let inv = 1.0 / segments.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let mu = mean.iter().sum::<f64>() / len as f64;
    if mean.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() <= 0.0 {
        return Err(Error::ZeroVariance {
            context: "extracted pattern is flat",
        });
    }
    Ok(Pattern {
        samples: mean,
        source_frequency,
    })
}

/// Knobs of [`segment_by_pattern_with`]. Defaults follow the standard
/// pipeline: detection prefilter at a quarter of the sample rate, final
/// per-segment low-pass at 550 kHz.
#[derive(Debug, Clone)]
pub struct SegmentConfig {
    /// Prefilter cutoff for peak detection; `None` means sample_rate / 4.
    pub prefilter_cutoff: Option<f64>,
    /// Low-pass applied to each cut segment; `None` skips it.
    pub segment_cutoff: Option<f64>,
    pub num_taps: usize,
    pub peak_threshold: f64,
    /// Minimum peak spacing as a fraction of the pattern length.
    pub min_distance_frac: f64,
    /// Known CP repetition period in samples. When set, the strongest
    /// correlation peak anchors a periodic comb of cut points instead of
    /// cutting only at per-CP peaks: one confident CP fixes the phase for
    /// the whole capture, so weak CPs whose own peak falls under the
    /// threshold are still recovered. `None` cuts at detected peaks only.
    pub expected_period: Option<f64>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            prefilter_cutoff: None,
            segment_cutoff: Some(550e3),
            num_taps: 129,
            peak_threshold: 0.5,
            min_distance_frac: 0.8,
            expected_period: None,
        }
    }
}

/// Segments found by pattern matching, in temporal order.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub rows: Vec<Vec<f64>>,
    /// Start offset of each row in the raw capture.
    pub offsets: Vec<usize>,
}

/// Pattern-matching segmentation: low-pass the capture, slide the (equally
/// filtered) pattern, cut one pattern-length segment at each correlation peak
/// and low-pass it for analysis.
pub fn segment_by_pattern(raw: &AmplitudeTrace, pattern: &Pattern) -> Result<Vec<Vec<f64>>> {
    segment_by_pattern_with(raw, pattern, &SegmentConfig::default()).map(|s| s.rows)
}

pub fn segment_by_pattern_with(
    raw: &AmplitudeTrace,
    pattern: &Pattern,
    cfg: &SegmentConfig,
) -> Result<Segmentation> {
    if raw.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let m = pattern.samples.len();
    if m < 2 || m > raw.samples.len() {
        return Err(Error::ShapeError {
            context: format!(
                "pattern of {m} samples against capture of {}",
                raw.samples.len()
            ),
        });
    }
    let cutoff = cfg.prefilter_cutoff.unwrap_or(raw.sample_rate / 4.0);
    let filtered = fir_lowpass(raw, cutoff, cfg.num_taps)?;
    let pattern_trace = AmplitudeTrace {
        samples: pattern.samples.clone(),
        sample_rate: raw.sample_rate,
    };
    let pattern_filtered = fir_lowpass(&pattern_trace, cutoff, cfg.num_taps)?;
    let corr = sliding_correlation(&filtered, &pattern_filtered)?;
    let min_distance = ((cfg.min_distance_frac * m as f64).round() as usize).max(1);
    let mut offsets = find_peaks(&corr, cfg.peak_threshold, min_distance);
    if offsets.is_empty() {
        return Err(Error::NoMatches);
    }
    if let Some(period) = cfg.expected_period {
        if !(period > 1.0) || !period.is_finite() {
            return Err(Error::ShapeError {
                context: format!("comb period {period} must exceed one sample"),
            });
        }
        offsets = comb_offsets(&corr, &offsets, period, m, raw.samples.len());
    }

    let mut rows = Vec::with_capacity(offsets.len());
    for &p in &offsets {
        let cut = raw.samples[p..p + m].to_vec();
        let row = match cfg.segment_cutoff {
            Some(c) => {
                fir_lowpass(
                    &AmplitudeTrace {
                        samples: cut,
                        sample_rate: raw.sample_rate,
                    },
                    c,
                    cfg.num_taps,
                )?
                .samples
            }
            None => cut,
        };
        rows.push(row);
    }
    Ok(Segmentation { rows, offsets })
}

/// Lays a periodic comb of cut points through the capture, phased at the
/// strongest detected peak, covering every whole period that fits.
fn comb_offsets(
    corr: &[f64],
    peaks: &[usize],
    period: f64,
    pattern_len: usize,
    capture_len: usize,
) -> Vec<usize> {
    let anchor = peaks
        .iter()
        .copied()
        .max_by(|a, b| corr[*a].total_cmp(&corr[*b]))
        .expect("peaks are non-empty");
    let a = anchor as f64;
    let mut out = Vec::new();
    let mut k = ((-0.5 - a) / period).ceil() as i64;
    loop {
        let pos = (a + k as f64 * period).round_ties_even();
        k += 1;
        if pos < 0.0 {
            continue;
        }
        let o = pos as usize;
        if o + pattern_len > capture_len {
            break;
        }
        out.push(o);
    }
    out
}
