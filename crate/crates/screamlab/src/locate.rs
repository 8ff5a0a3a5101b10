//! Leakage localization: finding the frequencies where key-dependent signal
//! escapes.
//!
//! Two detectors sweep a frequency grid. The fixed-vs-fixed Welch t-test
//! needs two trace sets recorded with constant plaintexts per set and flags a
//! frequency when any sample's |t| clears 4.5. The pattern detector needs
//! only one unlabeled capture per frequency: it cuts the capture into 50-CP
//! blocks, splits each block into even and odd virtual-trigger segments, and
//! scores the correlation of their averages; repeated CP structure pushes the
//! score toward 1 while pure noise stays near 0, with 0.75 as the decision
//! threshold. The pattern detector trades statistical power for needing
//! roughly an order of magnitude less capture time per point.

use crate::dsp::AmplitudeTrace;
use crate::error::{Error, Result};
use crate::segment::{vt_segment, vt_similarity};
use crate::store::TraceSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A frequency flags as leaking when any sample's Welch |t| exceeds this.
pub const TTEST_THRESHOLD: f64 = 4.5;

/// A frequency flags as leaking when the mean even/odd segment-average
/// correlation exceeds this.
pub const PATTERN_THRESHOLD: f64 = 0.75;

/// Inclusive sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub f_start: f64,
    pub f_stop: f64,
    pub f_step: f64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_step > 0.0) || self.f_stop < self.f_start {
            return Err(Error::Config(format!(
                "bad sweep grid: start {} stop {} step {}",
                self.f_start, self.f_stop, self.f_step
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.f_stop - self.f_start) / self.f_step + 0.5).floor() as usize;
        (0..=n).map(|i| self.f_start + i as f64 * self.f_step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ttest,
    Pattern,
}

/// Per-sample Welch t statistics for one pair of trace sets.
#[derive(Debug, Clone)]
pub struct TTestResult {
    pub per_sample_t: Vec<f64>,
    pub max_abs_t: f64,
}

/// Welch's two-sample t statistic per sample, over rows of equal length.
///
/// t = (m1 - m2) / sqrt(v1/n1 + v2/n2) with unbiased variances. A sample
/// where both variances vanish yields 0 when the means agree and +-infinity
/// when they differ.
pub fn welch_t(set_a: &[Vec<f32>], set_b: &[Vec<f32>]) -> Result<TTestResult> {
    if set_a.len() < 2 || set_b.len() < 2 {
        return Err(Error::ShapeError {
            context: format!(
                "welch t needs at least 2 traces per set, got {} and {}",
                set_a.len(),
                set_b.len()
            ),
        });
    }
    let len = set_a[0].len();
    if len == 0 {
        return Err(Error::EmptyTrace);
    }
    if set_a.iter().chain(set_b).any(|r| r.len() != len) {
        return Err(Error::ShapeError {
            context: "trace lengths differ across sets".into(),
        });
    }

    let accumulate = |set: &[Vec<f32>]| {
        let mut sum = vec![0.0f64; len];
        let mut sumsq = vec![0.0f64; len];
        for row in set {
            for (i, &v) in row.iter().enumerate() {
                let v = v as f64;
                sum[i] += v;
                sumsq[i] += v * v;
            }
        }
        (sum, sumsq)
    };
    let (sum_a, sq_a) = accumulate(set_a);
    let (sum_b, sq_b) = accumulate(set_b);
    let na = set_a.len() as f64;
    let nb = set_b.len() as f64;

    let mut per_sample_t = Vec::with_capacity(len);
    let mut max_abs = 0.0f64;
    for i in 0..len {
        let ma = sum_a[i] / na;
        let mb = sum_b[i] / nb;
        let va = (sq_a[i] - sum_a[i] * ma).max(0.0) / (na - 1.0);
        let vb = (sq_b[i] - sum_b[i] * mb).max(0.0) / (nb - 1.0);
        let denom = (va / na + vb / nb).sqrt();
        let t = if denom > 0.0 {
            (ma - mb) / denom
        } else if ma == mb {
            0.0
        } else if ma > mb {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        if t.abs() > max_abs {
            max_abs = t.abs();
        }
        per_sample_t.push(t);
    }
    Ok(TTestResult {
        per_sample_t,
        max_abs_t: max_abs,
    })
}

/// Supplies captures for sweep detectors. Implementations are expected to be
/// deterministic for a fixed configuration and seed.
pub trait SweepCollector: Sync {
    /// Two trace sets at `f_hz`, each of `n_per_set` segmented and averaged
    /// traces, set A recorded under one fixed plaintext and set B under
    /// another.
    fn class_sets(&self, f_hz: f64, n_per_set: usize) -> Result<(TraceSet, TraceSet)>;

    /// One raw amplitude capture at `f_hz` holding `n_cps` consecutive CPs
    /// with varying plaintexts.
    fn detection_capture(&self, f_hz: f64, n_cps: usize) -> Result<AmplitudeTrace>;

    /// CP repetition period in samples, as estimated from calibration data.
    fn cp_period(&self) -> Result<f64>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepWarning {
    pub frequency_hz: f64,
    pub reason: String,
}

/// One detector's scores over a grid. `detected[i]` is `scores[i]` compared
/// against `threshold`; frequencies that failed to collect or score carry a
/// warning and count as not detected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: Method,
    pub threshold: f64,
    pub frequencies: Vec<f64>,
    pub scores: Vec<f64>,
    pub detected: Vec<bool>,
    pub warnings: Vec<SweepWarning>,
}

impl SweepReport {
    fn from_scores(
        method: Method,
        threshold: f64,
        frequencies: Vec<f64>,
        results: Vec<std::result::Result<f64, String>>,
    ) -> SweepReport {
        let mut scores = Vec::with_capacity(results.len());
        let mut detected = Vec::with_capacity(results.len());
        let mut warnings = Vec::new();
        for (f, r) in frequencies.iter().zip(results) {
            match r {
                Ok(s) => {
                    scores.push(s);
                    detected.push(s > threshold);
                }
                Err(reason) => {
                    scores.push(0.0);
                    detected.push(false);
                    warnings.push(SweepWarning {
                        frequency_hz: *f,
                        reason,
                    });
                }
            }
        }
        SweepReport {
            method,
            threshold,
            frequencies,
            scores,
            detected,
            warnings,
        }
    }

    /// CSV rows `frequency_hz,score,detected` with a header.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frequency_hz", "score", "detected"])
            .map_err(io_err)?;
        for i in 0..self.frequencies.len() {
            w.write_record([
                format!("{:.1}", self.frequencies[i]),
                format!("{:.6}", self.scores[i]),
                (if self.detected[i] { "1" } else { "0" }).to_string(),
            ])
            .map_err(io_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::StorageError(std::io::Error::other(e))
}

/// Sweeps the grid with the fixed-vs-fixed Welch t-test; the score per
/// frequency is max |t| over samples.
pub fn ttest_sweep(
    grid: &SweepGrid,
    collector: &dyn SweepCollector,
    n_per_set: usize,
) -> Result<SweepReport> {
    grid.validate()?;
    let freqs = grid.points();
    let results: Vec<_> = freqs
        .par_iter()
        .map(|&f| {
            collector
                .class_sets(f, n_per_set)
                .and_then(|(a, b)| welch_t(&a.rows, &b.rows))
                .map(|t| t.max_abs_t)
                .map_err(|e| e.to_string())
        })
        .collect();
    Ok(SweepReport::from_scores(
        Method::Ttest,
        TTEST_THRESHOLD,
        freqs,
        results,
    ))
}

/// Pattern-detection score of one capture: the capture is cut into
/// `n_tests` consecutive blocks of `n_segs` CPs, each block is split into
/// even/odd virtual-trigger segments of period `l`, and the block scores are
/// averaged.
pub fn pattern_detection_score(
    raw: &AmplitudeTrace,
    l: f64,
    n_segs: usize,
    n_tests: usize,
) -> Result<f64> {
    if n_tests == 0 || n_segs < 2 {
        return Err(Error::ShapeError {
            context: format!("pattern detection with n_segs {n_segs}, n_tests {n_tests}"),
        });
    }
    let block = (n_segs as f64 * l).ceil() as usize;
    if block * n_tests > raw.samples.len() {
        return Err(Error::ShapeError {
            context: format!(
                "capture of {} samples cannot hold {n_tests} blocks of {block}",
                raw.samples.len()
            ),
        });
    }
    let mut total = 0.0;
    for b in 0..n_tests {
        let chunk = AmplitudeTrace {
            samples: raw.samples[b * block..(b + 1) * block].to_vec(),
            sample_rate: raw.sample_rate,
        };
        let segs = vt_segment(&chunk, l, n_segs)?;
        total += vt_similarity(&segs)?;
    }
    Ok(total / n_tests as f64)
}

/// Sweeps the grid with the unlabeled pattern detector, using `n_tests`
/// blocks of `n_segs` CPs per frequency.
pub fn pattern_sweep(
    grid: &SweepGrid,
    collector: &dyn SweepCollector,
    n_segs: usize,
    n_tests: usize,
) -> Result<SweepReport> {
    grid.validate()?;
    let freqs = grid.points();
    let period = collector.cp_period();
    // One spare block of CPs absorbs the period-estimate tolerance: blocks
    // are cut at the estimated period, which can run a few hundredths of a
    // sample long per CP relative to the capture.
    let n_cps = n_segs * (n_tests + 1);
    let results: Vec<_> = freqs
        .par_iter()
        .map(|&f| {
            let l = period.as_ref().map_err(|e| e.to_string())?;
            collector
                .detection_capture(f, n_cps)
                .and_then(|raw| pattern_detection_score(&raw, *l, n_segs, n_tests))
                .map_err(|e| e.to_string())
        })
        .collect();
    Ok(SweepReport::from_scores(
        Method::Pattern,
        PATTERN_THRESHOLD,
        freqs,
        results,
    ))
}

/// Fraction of grid points on which the two reports' detection decisions
/// agree. The grids must match.
pub fn compare_reports(a: &SweepReport, b: &SweepReport) -> Result<f64> {
    if a.frequencies.len() != b.frequencies.len()
        || a.frequencies
            .iter()
            .zip(&b.frequencies)
            .any(|(x, y)| (x - y).abs() > 1e-3)
    {
        return Err(Error::GridMismatch {
            context: format!(
                "{} points vs {} points",
                a.frequencies.len(),
                b.frequencies.len()
            ),
        });
    }
    if a.frequencies.is_empty() {
        return Err(Error::GridMismatch {
            context: "empty grids".into(),
        });
    }
    let matches = a
        .detected
        .iter()
        .zip(&b.detected)
        .filter(|(x, y)| x == y)
        .count();
    Ok(matches as f64 / a.detected.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn welch_t_matches_hand_computation() {
        // A = {1,2,3}, B = {2,3,4}: means 2 and 3, variances 1 and 1,
        // t = -1 / sqrt(1/3 + 1/3) = -sqrt(3/2) = -sqrt(6)/2.
        let a = vec![vec![1.0f32], vec![2.0], vec![3.0]];
        let b = vec![vec![2.0f32], vec![3.0], vec![4.0]];
        let r = welch_t(&a, &b).unwrap();
        let expected = -(3.0f64 / 2.0).sqrt();
        assert!((r.per_sample_t[0] - expected).abs() < 1e-9);
        assert!((r.max_abs_t - expected.abs()).abs() < 1e-9);
    }

    #[test]
    fn welch_t_unequal_sizes_and_variances() {
        // A = {0,0,4,4} (m=2, v=16/3), B = {1,3} (m=2, v=2):
        // denom = sqrt(16/12 + 1) = sqrt(7/3), t = 0.
        let a = vec![vec![0.0f32], vec![0.0], vec![4.0], vec![4.0]];
        let b = vec![vec![1.0f32], vec![3.0]];
        let r = welch_t(&a, &b).unwrap();
        assert_eq!(r.per_sample_t[0], 0.0);

        // Shift B by 1: t = -1/sqrt(7/3).
        let b2 = vec![vec![2.0f32], vec![4.0]];
        let r2 = welch_t(&a, &b2).unwrap();
        assert!((r2.per_sample_t[0] + 1.0 / (7.0f64 / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn welch_t_is_zero_for_identical_sets() {
        let rows: Vec<Vec<f32>> = (0..5)
            .map(|i| (0..8).map(|j| (i * j) as f32).collect())
            .collect();
        let r = welch_t(&rows, &rows.clone()).unwrap();
        assert_eq!(r.max_abs_t, 0.0);
    }

    #[test]
    fn welch_t_handles_degenerate_variance() {
        let a = vec![vec![1.0f32], vec![1.0]];
        let b = vec![vec![1.0f32], vec![1.0]];
        assert_eq!(welch_t(&a, &b).unwrap().per_sample_t[0], 0.0);
        let b2 = vec![vec![2.0f32], vec![2.0]];
        assert_eq!(welch_t(&a, &b2).unwrap().per_sample_t[0], f64::NEG_INFINITY);
        assert!(welch_t(&a[..1], &b).is_err());
    }

    #[test]
    fn grid_points_are_inclusive() {
        let g = SweepGrid {
            f_start: 2.43e9,
            f_stop: 2.628e9,
            f_step: 1e6,
        };
        let pts = g.points();
        assert_eq!(pts.len(), 199);
        assert_eq!(pts[0], 2.43e9);
        assert!((pts[198] - 2.628e9).abs() < 1.0);
        assert!(SweepGrid {
            f_start: 1.0,
            f_stop: 0.0,
            f_step: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn pattern_score_high_on_repeats_low_on_noise() {
        let mut rng = crate::rng::stream(11, &[3]);
        let tpl: Vec<f64> = (0..100)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut repeats = Vec::new();
        for _ in 0..50 {
            repeats.extend_from_slice(&tpl);
        }
        let raw = AmplitudeTrace {
            samples: repeats,
            sample_rate: 5e6,
        };
        let s = pattern_detection_score(&raw, 100.0, 10, 5).unwrap();
        assert!(s > 0.99, "score {s}");

        let noise = AmplitudeTrace {
            samples: (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            sample_rate: 5e6,
        };
        let s = pattern_detection_score(&noise, 100.0, 10, 5).unwrap();
        assert!(s.abs() < 0.5, "score {s}");
    }

    struct FakeCollector {
        leak_at: f64,
    }

    impl SweepCollector for FakeCollector {
        fn class_sets(&self, f_hz: f64, n_per_set: usize) -> Result<(TraceSet, TraceSet)> {
            if f_hz < 0.0 {
                return Err(Error::CollectionFailed {
                    frequency_hz: f_hz,
                    details: "negative frequency".into(),
                });
            }
            let leak = if (f_hz - self.leak_at).abs() < 0.5 { 1.0f32 } else { 0.0 };
            let mut rng = crate::rng::stream(f_hz.to_bits(), &[1]);
            let mut make = |offset: f32| -> Vec<Vec<f32>> {
                (0..n_per_set)
                    .map(|_| {
                        (0..16)
                            .map(|_| offset + 0.1 * rng.sample::<f64, _>(StandardNormal) as f32)
                            .collect()
                    })
                    .collect()
            };
            let rows_a = make(0.0);
            let rows_b = make(leak);
            let meta = |rows: &Vec<Vec<f32>>| crate::store::TraceSetMeta {
                center_frequency: f_hz,
                sample_rate: 5e6,
                n_traces: rows.len(),
                trace_len: 16,
                time_diversity_n: 1,
                plaintexts: vec![[0u8; 16]; rows.len()],
                key: None,
                role: crate::store::Role::TtestSetA,
            };
            Ok((
                TraceSet { meta: meta(&rows_a), rows: rows_a },
                TraceSet { meta: meta(&rows_b), rows: rows_b },
            ))
        }

        fn detection_capture(&self, f_hz: f64, n_cps: usize) -> Result<AmplitudeTrace> {
            let mut rng = crate::rng::stream(f_hz.to_bits(), &[2]);
            let tpl: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
            let leak = if (f_hz - self.leak_at).abs() < 0.5 { 1.0 } else { 0.0 };
            let samples: Vec<f64> = (0..n_cps)
                .flat_map(|_| tpl.clone())
                .map(|v| leak * v + 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(AmplitudeTrace { samples, sample_rate: 5e6 })
        }

        fn cp_period(&self) -> Result<f64> {
            Ok(50.0)
        }
    }

    #[test]
    fn sweeps_flag_the_leaky_frequency_and_record_failures() {
        let grid = SweepGrid { f_start: 0.0, f_stop: 4.0, f_step: 1.0 };
        let coll = FakeCollector { leak_at: 2.0 };
        let t = ttest_sweep(&grid, &coll, 40).unwrap();
        assert_eq!(t.detected, vec![false, false, true, false, false]);
        let p = pattern_sweep(&grid, &coll, 10, 5).unwrap();
        assert_eq!(p.detected, vec![false, false, true, false, false]);
        assert!((compare_reports(&t, &p).unwrap() - 1.0).abs() < 1e-12);

        // A failing frequency scores 0 with a warning, and the sweep goes on.
        let grid2 = SweepGrid { f_start: -1.0, f_stop: 2.0, f_step: 1.0 };
        let t2 = ttest_sweep(&grid2, &coll, 40).unwrap();
        assert_eq!(t2.scores[0], 0.0);
        assert_eq!(t2.warnings.len(), 1);
        assert_eq!(t2.warnings[0].frequency_hz, -1.0);
        assert!(compare_reports(&t, &t2).is_err());
    }

    #[test]
    fn csv_output_is_stable() {
        let report = SweepReport {
            method: Method::Ttest,
            threshold: TTEST_THRESHOLD,
            frequencies: vec![2.43e9, 2.431e9],
            scores: vec![1.25, 7.5],
            detected: vec![false, true],
            warnings: vec![],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "frequency_hz,score,detected\n2430000000.0,1.250000,0\n2431000000.0,7.500000,1\n"
        );
    }
}
