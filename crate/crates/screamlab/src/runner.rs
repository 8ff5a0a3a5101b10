//! Experiment orchestration: end-to-end attacks over a frequency grid and
//! rank-versus-traces curves, with CSV output.

use crate::attack::{build_profile, correlation_attack, Profile};
use crate::collect::SimCollector;
use crate::error::{Error, Result};
use crate::keyrank::{histogram_rank, RankResult};
use crate::locate::SweepGrid;
use crate::store::{Role, TraceSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttackOutcome {
    Ok { rank: RankResult },
    Failed { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRow {
    pub frequency_hz: f64,
    #[serde(flatten)]
    pub outcome: AttackOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSweepReport {
    pub n_profile: usize,
    pub n_attack: usize,
    pub n_bins: usize,
    pub rows: Vec<AttackRow>,
}

fn key_indices(key: [u8; 16]) -> Vec<usize> {
    key.iter().map(|&b| b as usize).collect()
}

fn attack_once(
    collector: &SimCollector,
    profile: &Profile,
    attack_set: &TraceSet,
    n_bins: usize,
) -> Result<RankResult> {
    let scores = correlation_attack(attack_set, profile)?;
    histogram_rank(&scores.logprobs, &key_indices(collector.key()), n_bins)
}

/// Runs profile + attack + rank at every grid frequency. Per-frequency
/// failures (calibration, segmentation, profiling) become failed rows; the
/// sweep always completes.
pub fn run_attack_sweep(
    collector: &SimCollector,
    grid: &SweepGrid,
    n_profile: usize,
    n_attack: usize,
    n_bins: usize,
) -> Result<AttackSweepReport> {
    grid.validate()?;
    let rows: Vec<AttackRow> = grid
        .points()
        .par_iter()
        .map(|&f| {
            let outcome = collector
                .collect_set(f, n_profile, Role::Profiling)
                .and_then(|set| build_profile(&set))
                .and_then(|profile| {
                    let attack_set = collector.collect_set(f, n_attack, Role::Attack)?;
                    attack_once(collector, &profile, &attack_set, n_bins)
                });
            AttackRow {
                frequency_hz: f,
                outcome: match outcome {
                    Ok(rank) => AttackOutcome::Ok { rank },
                    Err(e) => AttackOutcome::Failed {
                        reason: e.to_string(),
                    },
                },
            }
        })
        .collect();
    Ok(AttackSweepReport {
        n_profile,
        n_attack,
        n_bins,
        rows,
    })
}

impl AttackSweepReport {
    /// CSV rows `frequency_hz,log2_rank,class,status`; failed frequencies
    /// leave rank and class empty and carry the reason in `status`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frequency_hz", "log2_rank", "class", "status"])
            .map_err(csv_err)?;
        for row in &self.rows {
            match &row.outcome {
                AttackOutcome::Ok { rank } => w.write_record([
                    format!("{:.1}", row.frequency_hz),
                    format!("{:.4}", rank.log2_estimate),
                    rank.class().as_str().to_string(),
                    "ok".to_string(),
                ]),
                AttackOutcome::Failed { reason } => w.write_record([
                    format!("{:.1}", row.frequency_hz),
                    String::new(),
                    String::new(),
                    reason.clone(),
                ]),
            }
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::StorageError(std::io::Error::other(e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub frequency_hz: f64,
    pub n_traces: usize,
    pub repeats: usize,
    pub log2_q1: f64,
    pub log2_median: f64,
    pub log2_q3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceCurve {
    pub points: Vec<CurvePoint>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Rank as a function of attack-set size: for each frequency, one shared
/// profile and one attack pool, split into `repeats` disjoint subsets per
/// trace count. Reported per (frequency, count): quartiles of the log2 rank
/// estimate over the repeats.
pub fn rank_vs_traces(
    collector: &SimCollector,
    frequencies: &[f64],
    counts: &[usize],
    repeats: usize,
    n_profile: usize,
    n_bins: usize,
) -> Result<TraceCurve> {
    if frequencies.is_empty() || counts.is_empty() || repeats == 0 {
        return Err(Error::Config(
            "rank_vs_traces needs frequencies, counts, and repeats >= 1".into(),
        ));
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Config("trace counts must be at least 2".into()));
    }
    let max_count = *counts.iter().max().expect("nonempty");
    let pool_size = max_count
        .checked_mul(repeats)
        .ok_or_else(|| Error::Config("trace pool size overflows".into()))?;

    let per_freq: Vec<Result<Vec<CurvePoint>>> = frequencies
        .par_iter()
        .map(|&f| {
            let profile =
                build_profile(&collector.collect_set(f, n_profile, Role::Profiling)?)?;
            let pool = collector.collect_set(f, pool_size, Role::Attack)?;
            let mut points = Vec::with_capacity(counts.len());
            for &count in counts {
                let needed = count * repeats;
                if needed > pool.rows.len() {
                    return Err(Error::SubsetError {
                        needed,
                        available: pool.rows.len(),
                    });
                }
                let mut ranks = Vec::with_capacity(repeats);
                for r in 0..repeats {
                    let subset = TraceSet {
                        meta: crate::store::TraceSetMeta {
                            n_traces: count,
                            plaintexts: pool.meta.plaintexts[r * count..(r + 1) * count]
                                .to_vec(),
                            ..pool.meta.clone()
                        },
                        rows: pool.rows[r * count..(r + 1) * count].to_vec(),
                    };
                    let rank = attack_once(collector, &profile, &subset, n_bins)?;
                    ranks.push(rank.log2_estimate);
                }
                ranks.sort_by(|a, b| a.partial_cmp(b).expect("ranks are finite"));
                points.push(CurvePoint {
                    frequency_hz: f,
                    n_traces: count,
                    repeats,
                    log2_q1: quantile(&ranks, 0.25),
                    log2_median: quantile(&ranks, 0.5),
                    log2_q3: quantile(&ranks, 0.75),
                });
            }
            Ok(points)
        })
        .collect();

    let mut points = Vec::new();
    for freq_points in per_freq {
        points.extend(freq_points?);
    }
    Ok(TraceCurve { points })
}

impl TraceCurve {
    /// CSV rows `frequency_hz,n_traces,repeats,log2_q1,log2_median,log2_q3`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "frequency_hz",
            "n_traces",
            "repeats",
            "log2_q1",
            "log2_median",
            "log2_q3",
        ])
        .map_err(csv_err)?;
        for p in &self.points {
            w.write_record([
                format!("{:.1}", p.frequency_hz),
                p.n_traces.to_string(),
                p.repeats.to_string(),
                format!("{:.4}", p.log2_q1),
                format!("{:.4}", p.log2_median),
                format!("{:.4}", p.log2_q3),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn mini_scenario() -> Scenario {
        let mut s = Scenario::default();
        s.device.cp_duration = 400.0 / 5e6;
        s.noise.awgn_sigma = 0.05;
        s.collection.calibration_cps = 30;
        s.collection.time_diversity_n = 2;
        s.collection.batch_cps = 120;
        s.collection.seed = 21;
        s
    }

    #[test]
    fn attack_sweep_ranks_harmonic_low_and_deadband_high() {
        let c = SimCollector::new(mini_scenario()).unwrap();
        // One harmonic point and one dead point between harmonics.
        let grid = SweepGrid {
            f_start: 2.464e9,
            f_stop: 2.496e9,
            f_step: 32e6,
        };
        let report = run_attack_sweep(&c, &grid, 90, 60, 512).unwrap();
        assert_eq!(report.rows.len(), 2);
        match &report.rows[0].outcome {
            AttackOutcome::Ok { rank } => {
                assert!(rank.log2_estimate < 20.0, "harmonic rank {}", rank.log2_estimate)
            }
            AttackOutcome::Failed { reason } => panic!("harmonic failed: {reason}"),
        }
        match &report.rows[1].outcome {
            AttackOutcome::Ok { rank } => {
                assert!(rank.log2_estimate > 100.0, "dead rank {}", rank.log2_estimate)
            }
            // Dead band may also fail segmentation outright; both are
            // accept failures of the attack, not of the sweep.
            AttackOutcome::Failed { .. } => {}
        }

        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("frequency_hz,log2_rank,class,status\n"));
        assert!(text.contains("2464000000.0,"));
    }

    #[test]
    fn curve_subsets_are_disjoint_and_quartiles_ordered() {
        let c = SimCollector::new(mini_scenario()).unwrap();
        let curve = rank_vs_traces(&c, &[2.464e9], &[4, 8], 3, 90, 512).unwrap();
        assert_eq!(curve.points.len(), 2);
        for p in &curve.points {
            assert!(p.log2_q1 <= p.log2_median + 1e-12);
            assert!(p.log2_median <= p.log2_q3 + 1e-12);
            assert_eq!(p.repeats, 3);
        }
        assert!(rank_vs_traces(&c, &[2.464e9], &[], 3, 90, 512).is_err());
    }

    #[test]
    fn single_count_curve_matches_attack_sweep_entry() {
        let c = SimCollector::new(mini_scenario()).unwrap();
        let f = 2.464e9;
        let grid = SweepGrid {
            f_start: f,
            f_stop: f,
            f_step: 1e6,
        };
        let report = run_attack_sweep(&c, &grid, 90, 24, 512).unwrap();
        let sweep_rank = match &report.rows[0].outcome {
            AttackOutcome::Ok { rank } => rank.log2_estimate,
            AttackOutcome::Failed { reason } => panic!("sweep failed: {reason}"),
        };
        let curve = rank_vs_traces(&c, &[f], &[24], 1, 90, 512).unwrap();
        assert_eq!(curve.points[0].log2_median, sweep_rank);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.25), 1.75);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
    }
}
