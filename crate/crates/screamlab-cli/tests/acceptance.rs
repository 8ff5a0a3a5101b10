//! Acceptance gate for the whole laboratory: nine end-to-end checks covering
//! the rank oracle, leakage localization, the profiled attack across the
//! band, interference effects, trace-count scaling, segmentation accuracy,
//! and storage determinism. Every check prints one `Cn PASS`/`Cn FAIL` line
//! directly on stderr (bypassing test capture) and the test fails if any
//! check failed.
//!
//! The full gate takes tens of minutes single-threaded. While iterating on
//! one check, set `SCREAMLAB_ACCEPTANCE_ONLY=c1,c9` (comma-separated tags)
//! to run a subset; the default runs everything.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use screamlab::attack::{build_profile, correlation_attack};
use screamlab::collect::SimCollector;
use screamlab::dsp::{magnitude, AmplitudeTrace, Complex64, IqTrace};
use screamlab::error::Result;
use screamlab::keyrank::{enumerate_rank_exact, histogram_rank, DEFAULT_BINS};
use screamlab::locate::{
    compare_reports, pattern_sweep, ttest_sweep, SweepGrid, SweepReport, TTEST_THRESHOLD,
};
use screamlab::rng;
use screamlab::runner::{rank_vs_traces, run_attack_sweep, AttackOutcome};
use screamlab::scenario::{InterfererConfig, Scenario};
use screamlab::segment::{
    estimate_cp_length, segment_by_pattern_with, Pattern, SegmentConfig,
};
use screamlab::sim::{spectral_envelope, CpSynth, DeviceModel, NoiseModel};
use screamlab::store::{
    read_container, read_iq_capture, write_container, write_iq_capture, Role, TraceSet,
    TraceSetMeta,
};

/// Shared experiment seed; every criterion derives its own streams from it.
const BASE_SEED: u64 = 42;

/// Localization grid: 200 points at 1 MHz spanning clock harmonics 1 to 3
/// of the 2.4 GHz carrier with shoulder room on both sides.
const FULL_GRID: SweepGrid = SweepGrid {
    f_start: 2.430e9,
    f_stop: 2.629e9,
    f_step: 1e6,
};

/// Attack grid: 150 points at 1 MHz, harmonics 1 to 3 inclusive.
const ATTACK_GRID: SweepGrid = SweepGrid {
    f_start: 2.450e9,
    f_stop: 2.599e9,
    f_step: 1e6,
};

/// Intermodulation harmonics of the default device inside the grids above.
const HARMONICS: [f64; 3] = [2.464e9, 2.528e9, 2.592e9];

/// Points whose spectral envelope clears this value collect reliably at the
/// default wired noise level; deeper points drown in channel noise before
/// segmentation can lock on.
const COLLECTABLE_ENVELOPE: f64 = 0.3;

fn scenario(seed: u64, grid: SweepGrid) -> Scenario {
    let mut s = Scenario::default();
    s.collection.seed = seed;
    s.sweep = grid;
    s
}

/// Writes straight to the process stderr so progress survives libtest's
/// output capture even when every check passes.
fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

struct Outcome {
    name: &'static str,
    pass: bool,
}

fn record(outcomes: &mut Vec<Outcome>, name: &'static str, result: Result<(bool, String)>) {
    let (pass, detail) = match result {
        Ok((pass, detail)) => (pass, detail),
        Err(e) => (false, format!("error: {e}")),
    };
    say(&format!(
        "{name} {}  {detail}",
        if pass { "PASS" } else { "FAIL" }
    ));
    outcomes.push(Outcome { name, pass });
}

fn subset() -> Option<BTreeSet<String>> {
    std::env::var("SCREAMLAB_ACCEPTANCE_ONLY").ok().map(|v| {
        v.split(',')
            .map(|s| s.trim().to_ascii_lowercase())
            .filter(|s| !s.is_empty())
            .collect()
    })
}

fn enabled(only: &Option<BTreeSet<String>>, tag: &str) -> bool {
    only.as_ref().map_or(true, |s| s.contains(tag))
}

#[test]
fn acceptance_criteria() {
    let only = subset();
    let started = Instant::now();
    let mut outcomes = Vec::new();

    if enabled(&only, "c1") {
        record(&mut outcomes, "C1", rank_oracle_agreement());
    }
    if enabled(&only, "c2") || enabled(&only, "c3") || enabled(&only, "c4") {
        match localization_sweeps() {
            Ok(sweeps) => {
                if enabled(&only, "c2") {
                    record(&mut outcomes, "C2", ttest_harmonic_windows(&sweeps));
                }
                if enabled(&only, "c3") {
                    record(&mut outcomes, "C3", detector_agreement(&sweeps));
                }
                if enabled(&only, "c4") {
                    record(&mut outcomes, "C4", detector_speedup(&sweeps));
                }
            }
            Err(e) => {
                for tag in ["c2", "c3", "c4"] {
                    if enabled(&only, tag) {
                        let name: &'static str = match tag {
                            "c2" => "C2",
                            "c3" => "C3",
                            _ => "C4",
                        };
                        record(
                            &mut outcomes,
                            name,
                            Ok((false, format!("localization sweeps failed: {e}"))),
                        );
                    }
                }
            }
        }
    }
    if enabled(&only, "c5") {
        record(&mut outcomes, "C5", attack_across_band());
    }
    if enabled(&only, "c6") {
        record(&mut outcomes, "C6", interference_steers_frequency_choice());
    }
    if enabled(&only, "c7") {
        record(&mut outcomes, "C7", rank_improves_with_traces());
    }
    if enabled(&only, "c8") {
        record(&mut outcomes, "C8", segmentation_accuracy());
    }
    if enabled(&only, "c9") {
        record(&mut outcomes, "C9", storage_and_cli_determinism());
    }

    let passed = outcomes.iter().filter(|o| o.pass).count();
    say(&format!(
        "acceptance: {passed}/{} passed in {:.1} s",
        outcomes.len(),
        started.elapsed().as_secs_f64()
    ));
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| o.name)
        .collect();
    assert!(
        failed.is_empty(),
        "failed acceptance checks: {}",
        failed.join(", ")
    );
}

/// C1: on 1000 random 4-byte keyspaces the histogram bounds must bracket the
/// exhaustive rank every time and the estimate must sit within 2 bits of it.
fn rank_oracle_agreement() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let mut bracketed = 0usize;
    let mut max_log2_err = 0.0f64;
    for case in 0..1000u64 {
        let mut r = rng::stream(BASE_SEED, &[100, case]);
        let logprobs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..16).map(|_| r.gen_range(-12.0..0.0)).collect())
            .collect();
        let correct: Vec<usize> = (0..4).map(|_| r.gen_range(0..16)).collect();
        let exact = enumerate_rank_exact(&logprobs, &correct)?;
        let bounds = histogram_rank(&logprobs, &correct, 2048)?;
        let lo = (exact.rank as f64).log2();
        let hi = ((exact.rank + exact.ties) as f64).log2();
        if bounds.log2_lower <= lo + 1e-9 && hi <= bounds.log2_upper + 1e-9 {
            bracketed += 1;
        }
        max_log2_err = max_log2_err.max((bounds.log2_estimate - lo).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = bracketed == 1000 && max_log2_err <= 2.0 && secs < 60.0;
    Ok((
        pass,
        format!(
            "bracketed {bracketed}/1000, max |log2 estimate error| {max_log2_err:.3} \
             (limit 2), {secs:.1} s (limit 60)"
        ),
    ))
}

struct LocalizationSweeps {
    ttest: SweepReport,
    ttest_secs: f64,
    pattern: SweepReport,
    pattern_secs: f64,
    control_detections: usize,
    grid_points: usize,
}

/// Runs both detectors once over the full grid plus the no-CP control;
/// C2, C3 and C4 all read from this single set of sweeps.
fn localization_sweeps() -> Result<LocalizationSweeps> {
    let collector = SimCollector::new(scenario(BASE_SEED, FULL_GRID))?;
    let n_points = FULL_GRID.points().len();

    let t0 = Instant::now();
    let ttest = ttest_sweep(&FULL_GRID, &collector, 250)?;
    let ttest_secs = t0.elapsed().as_secs_f64();
    say(&format!("  [sweep] t-test over {n_points} points: {ttest_secs:.1} s"));

    let cfg = collector.scenario().collection.clone();
    let t0 = Instant::now();
    let pattern = pattern_sweep(&FULL_GRID, &collector, cfg.n_segs, cfg.n_tests)?;
    let pattern_secs = t0.elapsed().as_secs_f64();
    say(&format!("  [sweep] pattern over {n_points} points: {pattern_secs:.1} s"));

    let mut control = scenario(BASE_SEED, FULL_GRID);
    control.collection.cps_enabled = false;
    let control_collector = SimCollector::new(control)?;
    let control_report = ttest_sweep(&FULL_GRID, &control_collector, 250)?;
    let control_detections = control_report.detected.iter().filter(|&&d| d).count();

    Ok(LocalizationSweeps {
        ttest,
        ttest_secs,
        pattern,
        pattern_secs,
        control_detections,
        grid_points: n_points,
    })
}

/// C2: Welch t on hand-computable inputs to 1e-9, zero statistic on
/// identical sets, every grid point within one kernel width of harmonics
/// 1-3 above threshold, under 1% false detections on the no-CP control,
/// and the sweep itself within its time budget.
fn ttest_harmonic_windows(sweeps: &LocalizationSweeps) -> Result<(bool, String)> {
    let a = vec![vec![1.0f32], vec![2.0], vec![3.0]];
    let b = vec![vec![2.0f32], vec![3.0], vec![4.0]];
    let hand1 = welch_scalar(&a, &b)?;
    let want1 = -(1.5f64).sqrt();

    let a = vec![vec![1.0f32], vec![2.0], vec![3.0], vec![4.0]];
    let b = vec![vec![10.0f32], vec![12.0]];
    let hand2 = welch_scalar(&a, &b)?;
    let want2 = -8.5 * (12.0f64 / 17.0).sqrt();

    let same = vec![
        vec![1.0f32, 2.0, 3.0, 4.0],
        vec![2.0, 2.0, 4.0, 4.0],
        vec![3.0, 1.0, 0.0, 5.0],
    ];
    let zeros = screamlab::locate::welch_t(&same, &same)?;
    let all_zero = zeros.per_sample_t.iter().all(|&t| t == 0.0);

    let dev = DeviceModel::default();
    let mut min_window_score = f64::INFINITY;
    let mut window_points = 0usize;
    let mut window_failures = 0usize;
    for (i, &f) in sweeps.ttest.frequencies.iter().enumerate() {
        let near = HARMONICS
            .iter()
            .any(|&h| (f - h).abs() <= dev.kernel_width + 0.5);
        if near {
            window_points += 1;
            min_window_score = min_window_score.min(sweeps.ttest.scores[i]);
            if !(sweeps.ttest.scores[i] > TTEST_THRESHOLD && sweeps.ttest.detected[i]) {
                window_failures += 1;
            }
        }
    }

    let control_rate = sweeps.control_detections as f64 / sweeps.grid_points as f64;

    let hand_ok = (hand1 - want1).abs() < 1e-9 && (hand2 - want2).abs() < 1e-9;
    let pass = hand_ok
        && all_zero
        && window_failures == 0
        && control_rate < 0.01
        && sweeps.ttest_secs < 600.0;
    Ok((
        pass,
        format!(
            "hand cases |err| {:.1e}/{:.1e}, identical-sets all zero: {all_zero}, \
             harmonic windows {window_points} points min |t| {min_window_score:.1} \
             ({} failures, threshold {TTEST_THRESHOLD}), control detections {}/{} , \
             sweep {:.1} s (limit 600)",
            (hand1 - want1).abs(),
            (hand2 - want2).abs(),
            window_failures,
            sweeps.control_detections,
            sweeps.grid_points,
            sweeps.ttest_secs
        ),
    ))
}

fn welch_scalar(a: &[Vec<f32>], b: &[Vec<f32>]) -> Result<f64> {
    Ok(screamlab::locate::welch_t(a, b)?.per_sample_t[0])
}

/// C3: the unlabeled pattern detector must agree with the t-test on at
/// least 90% of grid points under the same scenario.
fn detector_agreement(sweeps: &LocalizationSweeps) -> Result<(bool, String)> {
    let agreement = compare_reports(&sweeps.ttest, &sweeps.pattern)?;
    let total_secs = sweeps.ttest_secs + sweeps.pattern_secs;
    let pass = agreement >= 0.90 && total_secs < 600.0;
    Ok((
        pass,
        format!(
            "detector agreement {agreement:.4} (floor 0.90) over {} points, \
             both sweeps {total_secs:.1} s (limit 600)",
            sweeps.grid_points
        ),
    ))
}

/// C4: the pattern sweep must finish at least ten times faster than the
/// t-test sweep on the identical grid and scenario.
fn detector_speedup(sweeps: &LocalizationSweeps) -> Result<(bool, String)> {
    let ratio = sweeps.ttest_secs / sweeps.pattern_secs;
    let pass = sweeps.pattern_secs * 10.0 <= sweeps.ttest_secs;
    Ok((
        pass,
        format!(
            "pattern {:.1} s vs t-test {:.1} s, speedup {ratio:.1}x (floor 10x)",
            sweeps.pattern_secs, sweeps.ttest_secs
        ),
    ))
}

/// C5: profiled attack over the 150-point band. Every unpolluted harmonic
/// must rank the key below 2^32 and at least half of the non-harmonic
/// points inside the leakage envelope must do the same.
fn attack_across_band() -> Result<(bool, String)> {
    let collector = SimCollector::new(scenario(BASE_SEED, ATTACK_GRID))?;
    let dev = collector.device().clone();
    let t0 = Instant::now();
    let report = run_attack_sweep(&collector, &ATTACK_GRID, 2000, 2000, DEFAULT_BINS)?;
    let secs = t0.elapsed().as_secs_f64();

    let green = |f: f64| -> bool {
        report
            .rows
            .iter()
            .find(|r| (r.frequency_hz - f).abs() < 0.5)
            .map_or(false, |r| match &r.outcome {
                AttackOutcome::Ok { rank } => rank.log2_estimate < 32.0,
                AttackOutcome::Failed { .. } => false,
            })
    };

    let harmonic_failures: Vec<f64> = HARMONICS
        .iter()
        .copied()
        .filter(|&h| !green(h))
        .collect();

    let mut envelope_points = 0usize;
    let mut envelope_green = 0usize;
    for row in &report.rows {
        let f = row.frequency_hz;
        if HARMONICS.iter().any(|&h| (f - h).abs() < 0.5) {
            continue;
        }
        if spectral_envelope(&dev, f) >= COLLECTABLE_ENVELOPE {
            envelope_points += 1;
            if green(f) {
                envelope_green += 1;
            }
        }
    }
    let fraction = envelope_green as f64 / envelope_points.max(1) as f64;

    let pass = harmonic_failures.is_empty() && fraction >= 0.5 && secs < 1800.0;
    Ok((
        pass,
        format!(
            "harmonics below 2^32: {}/3, envelope points below 2^32: \
             {envelope_green}/{envelope_points} ({:.0}%, floor 50%), {secs:.1} s (limit 1800)",
            3 - harmonic_failures.len(),
            fraction * 100.0
        ),
    ))
}

/// C6: with broadband interferers parked on harmonics 1 and 2, the
/// best-ranked tuning frequency over repeated 750-trace attacks must be a
/// non-harmonic; collection failures score as a full 128-bit rank.
fn interference_steers_frequency_choice() -> Result<(bool, String)> {
    const N_PROFILE: usize = 1000;
    const N_ATTACK: usize = 750;
    const REPEATS: usize = 20;
    let polluted = [HARMONICS[0], HARMONICS[1]];

    let grid = SweepGrid {
        f_start: 2.456e9,
        f_stop: 2.536e9,
        f_step: 8e6,
    };
    let mut s = scenario(BASE_SEED + 1, grid);
    s.interferers = polluted
        .iter()
        .map(|&center| InterfererConfig {
            center,
            bandwidth: 20e6,
            power: 4.0,
        })
        .collect();
    let collector = SimCollector::new(s)?;
    let key_indices: Vec<usize> = collector.key().iter().map(|&b| b as usize).collect();

    let t0 = Instant::now();
    let mut means: Vec<(f64, f64)> = Vec::new();
    for f in grid.points() {
        let mean = match repeated_attacks(&collector, f, N_PROFILE, N_ATTACK, REPEATS, &key_indices)
        {
            Ok(m) => m,
            Err(_) => 128.0,
        };
        means.push((f, mean));
    }
    let secs = t0.elapsed().as_secs_f64();

    let &(best_f, best_mean) = means
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is non-empty");
    let harmonic_means: Vec<f64> = polluted
        .iter()
        .map(|&h| {
            means
                .iter()
                .find(|(f, _)| (f - h).abs() < 0.5)
                .expect("harmonics are on the grid")
                .1
        })
        .collect();

    let best_is_clean = polluted.iter().all(|&h| (best_f - h).abs() > 0.5);
    let harmonics_worse = harmonic_means.iter().all(|&m| m > best_mean);
    let pass = best_is_clean && harmonics_worse;
    Ok((
        pass,
        format!(
            "best frequency {:.3} GHz mean log2 rank {best_mean:.1}, polluted harmonics \
             {:.1}/{:.1} bits, {secs:.1} s",
            best_f / 1e9,
            harmonic_means[0],
            harmonic_means[1]
        ),
    ))
}

/// One profile, one pooled attack set cut into disjoint subsets; mean log2
/// rank estimate over the subsets.
fn repeated_attacks(
    collector: &SimCollector,
    f: f64,
    n_profile: usize,
    n_attack: usize,
    repeats: usize,
    key_indices: &[usize],
) -> Result<f64> {
    let profile_set = collector.collect_set(f, n_profile, Role::Profiling)?;
    let profile = build_profile(&profile_set)?;
    let pool = collector.collect_set(f, n_attack * repeats, Role::Attack)?;
    let mut total = 0.0;
    for r in 0..repeats {
        let subset = slice_traces(&pool, r * n_attack, n_attack);
        let scores = correlation_attack(&subset, &profile)?;
        let rank = histogram_rank(&scores.logprobs, key_indices, DEFAULT_BINS)?;
        total += rank.log2_estimate;
    }
    Ok(total / repeats as f64)
}

fn slice_traces(pool: &TraceSet, start: usize, n: usize) -> TraceSet {
    TraceSet {
        meta: TraceSetMeta {
            n_traces: n,
            plaintexts: pool.meta.plaintexts[start..start + n].to_vec(),
            ..pool.meta.clone()
        },
        rows: pool.rows[start..start + n].to_vec(),
    }
}

/// C7: at every tested frequency the median log2 rank over 20 seeds must be
/// non-increasing in the attack-set size, allowing one-step violations on at
/// most 5% of transitions.
fn rank_improves_with_traces() -> Result<(bool, String)> {
    const FREQS: [f64; 3] = [2.490e9, 2.528e9, 2.538e9];
    const COUNTS: [usize; 5] = [5, 10, 20, 40, 80];
    const N_SEEDS: u64 = 20;

    let t0 = Instant::now();
    let mut per_point: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); COUNTS.len()]; FREQS.len()];
    for seed in 0..N_SEEDS {
        let collector = SimCollector::new(scenario(7000 + seed, FULL_GRID))?;
        let curve = rank_vs_traces(&collector, &FREQS, &COUNTS, 1, 1000, DEFAULT_BINS)?;
        for p in &curve.points {
            let fi = FREQS
                .iter()
                .position(|&f| (f - p.frequency_hz).abs() < 0.5)
                .expect("curve frequency is one of the requested");
            let ci = COUNTS
                .iter()
                .position(|&c| c == p.n_traces)
                .expect("curve count is one of the requested");
            per_point[fi][ci].push(p.log2_median);
        }
    }
    let secs = t0.elapsed().as_secs_f64();

    let n_transitions = FREQS.len() * (COUNTS.len() - 1);
    let allowed = (n_transitions as f64 * 0.05).floor() as usize;
    let mut violations = 0usize;
    let mut summary = String::new();
    for (fi, &f) in FREQS.iter().enumerate() {
        let medians: Vec<f64> = per_point[fi].iter().map(|v| median(v)).collect();
        for w in medians.windows(2) {
            if w[1] > w[0] + 1e-9 {
                violations += 1;
            }
        }
        summary.push_str(&format!(
            " {:.3}GHz {:.1}->{:.1}b;",
            f / 1e9,
            medians[0],
            medians[COUNTS.len() - 1]
        ));
    }

    let pass = violations <= allowed;
    Ok((
        pass,
        format!(
            "median log2 rank over {N_SEEDS} seeds:{summary} violations \
             {violations}/{n_transitions} (allowed {allowed}), {secs:.1} s"
        ),
    ))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// C8: the period estimator must recover whole and half-sample CP lengths
/// to within 0.05 samples at 10 dB SNR, and pattern segmentation must find
/// at least 99% of planted CP offsets within 2 samples over 20 captures.
fn segmentation_accuracy() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let mut estimates = Vec::new();
    let mut estimate_ok = true;
    for (i, cp_duration) in [870e-6, 870.1e-6].iter().enumerate() {
        let dev = DeviceModel {
            cp_duration: *cp_duration,
            ..DeviceModel::default()
        };
        let synth = CpSynth::new(&dev)?;
        let noise = NoiseModel {
            awgn_sigma: sigma_for_10db(&synth),
            ..NoiseModel::default()
        };
        let mut r = rng::stream(BASE_SEED, &[800, i as u64]);
        let plaintexts: Vec<[u8; 16]> = (0..50).map(|_| r.gen()).collect();
        let iq = synth.capture(&noise, &[], HARMONICS[0], &plaintexts, true, &mut r);
        let mag = magnitude(&iq)?;
        let pad = synth.base_template().len() / 2;
        let body = AmplitudeTrace {
            samples: mag.samples[pad..mag.samples.len() - pad].to_vec(),
            sample_rate: mag.sample_rate,
        };
        let est = estimate_cp_length(&body, dev.cp_duration + dev.inter_cp_gap, 0.02)?;
        let truth = dev.cp_period_samples();
        estimates.push(format!(
            "{:.2}->{:.2}",
            truth, est.samples_per_cp
        ));
        if (est.samples_per_cp - truth).abs() > 0.05 {
            estimate_ok = false;
        }
    }

    let dev = DeviceModel::default();
    let synth = CpSynth::new(&dev)?;
    let noise = NoiseModel {
        awgn_sigma: sigma_for_10db(&synth),
        ..NoiseModel::default()
    };
    let period = dev.cp_period_samples();
    let pad = synth.base_template().len() / 2;
    let pattern = Pattern {
        samples: synth.base_template().to_vec(),
        source_frequency: HARMONICS[0],
    };
    let mut hits = 0usize;
    let mut total = 0usize;
    for seed in 0..20u64 {
        let mut r = rng::stream(BASE_SEED, &[801, seed]);
        let plaintexts: Vec<[u8; 16]> = (0..50).map(|_| r.gen()).collect();
        let iq = synth.capture(&noise, &[], HARMONICS[0], &plaintexts, true, &mut r);
        let mag = magnitude(&iq)?;
        let seg = segment_by_pattern_with(&mag, &pattern, &SegmentConfig::default())?;
        for c in 0..plaintexts.len() {
            let planted = pad + (c as f64 * period).round_ties_even() as usize;
            total += 1;
            if seg.offsets.iter().any(|&o| o.abs_diff(planted) <= 2) {
                hits += 1;
            }
        }
    }
    let hit_rate = hits as f64 / total as f64;
    let secs = t0.elapsed().as_secs_f64();

    let pass = estimate_ok && hit_rate >= 0.99;
    Ok((
        pass,
        format!(
            "period estimates [{}] (tolerance 0.05), planted offsets hit \
             {hits}/{total} ({:.2}%, floor 99%), {secs:.1} s",
            estimates.join(", "),
            hit_rate * 100.0
        ),
    ))
}

/// Noise sigma giving a 10 dB amplitude SNR against the CP template.
fn sigma_for_10db(synth: &CpSynth) -> f64 {
    let t = synth.base_template();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
    (var / 10.0).sqrt()
}

/// C9: container and IQ round-trips must be bit-exact and the CLI must be
/// byte-deterministic under a fixed seed.
fn storage_and_cli_determinism() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let mut r = rng::stream(BASE_SEED, &[900]);

    let n_traces = 8;
    let trace_len = 32;
    let rows: Vec<Vec<f32>> = (0..n_traces)
        .map(|_| (0..trace_len).map(|_| r.gen::<f32>() * 2.0 - 1.0).collect())
        .collect();
    let meta = TraceSetMeta {
        center_frequency: HARMONICS[0],
        sample_rate: 5e6,
        n_traces,
        trace_len,
        time_diversity_n: 3,
        plaintexts: (0..n_traces).map(|_| r.gen()).collect(),
        key: Some(r.gen()),
        role: Role::Attack,
    };
    let set = TraceSet {
        meta,
        rows,
    };
    let base = dir.path().join("roundtrip");
    write_container(&set, &base)?;
    let back = read_container(&base)?;
    let rows_exact = set.rows.len() == back.rows.len()
        && set
            .rows
            .iter()
            .zip(&back.rows)
            .all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            });
    let meta_exact = set.meta.center_frequency == back.meta.center_frequency
        && set.meta.sample_rate == back.meta.sample_rate
        && set.meta.n_traces == back.meta.n_traces
        && set.meta.trace_len == back.meta.trace_len
        && set.meta.time_diversity_n == back.meta.time_diversity_n
        && set.meta.plaintexts == back.meta.plaintexts
        && set.meta.key == back.meta.key
        && set.meta.role == back.meta.role;

    let iq = IqTrace {
        samples: (0..64)
            .map(|_| {
                Complex64::new(
                    (r.gen::<f32>() * 2.0 - 1.0) as f64,
                    (r.gen::<f32>() * 2.0 - 1.0) as f64,
                )
            })
            .collect(),
        sample_rate: 5e6,
    };
    let iq_base = dir.path().join("iq_roundtrip");
    write_iq_capture(&iq, HARMONICS[1], &iq_base)?;
    let (iq_back, iq_center) = read_iq_capture(&iq_base)?;
    let iq_exact = iq_center == HARMONICS[1]
        && iq.sample_rate == iq_back.sample_rate
        && iq.samples.len() == iq_back.samples.len()
        && iq
            .samples
            .iter()
            .zip(&iq_back.samples)
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits());

    let cli_identical = cli_scan_twice(dir.path())?;

    let pass = rows_exact && meta_exact && iq_exact && cli_identical;
    Ok((
        pass,
        format!(
            "container rows bit-exact: {rows_exact}, metadata equal: {meta_exact}, \
             IQ bit-exact: {iq_exact}, repeated CLI scans byte-identical: {cli_identical}"
        ),
    ))
}

fn cli_scan_twice(dir: &Path) -> Result<bool> {
    let cfg = dir.join("scenario.json");
    std::fs::write(
        &cfg,
        r#"{
            "device": {"cp_duration": 8e-5},
            "noise": {"awgn_sigma": 0.05},
            "sweep": {"f_start": 2.464e9, "f_stop": 2.472e9, "f_step": 8e6},
            "collection": {
                "time_diversity_n": 2,
                "batch_cps": 120,
                "calibration_cps": 30,
                "seed": 21
            }
        }"#,
    )?;
    let mut outputs = Vec::new();
    for name in ["first.csv", "second.csv"] {
        let out_path = dir.join(name);
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_screamlab"))
            .env_remove("SCREAMLAB_SEED")
            .args([
                "--config",
                cfg.to_str().expect("temp path is valid UTF-8"),
                "scan",
                "--method",
                "pattern",
                "--out",
                out_path.to_str().expect("temp path is valid UTF-8"),
            ])
            .output()?;
        if !out.status.success() {
            return Ok(false);
        }
        outputs.push(std::fs::read(&out_path)?);
    }
    Ok(!outputs[0].is_empty() && outputs[0] == outputs[1])
}
