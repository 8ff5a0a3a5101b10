//! Command-line front end for the screaming-channel laboratory.
//!
//! Exit codes: 0 on success, 1 when collection or analysis fails, 2 on
//! usage errors.

use clap::{Args, Parser, Subcommand};
use screamlab::attack::{build_profile, correlation_attack, Profile, ScoreMatrix};
use screamlab::collect::SimCollector;
use screamlab::error::{Error, Result};
use screamlab::keyrank::{histogram_rank, RankResult, DEFAULT_BINS};
use screamlab::locate::{pattern_sweep, ttest_sweep, SweepReport};
use screamlab::runner::{rank_vs_traces, run_attack_sweep};
use screamlab::scenario::Scenario;
use screamlab::store::{
    parse_hex16, read_container, write_container, write_iq_capture, Role,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "screamlab", version, about = "Screaming-channel leakage laboratory")]
struct Cli {
    /// Scenario config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed; overrides SCREAMLAB_SEED and the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a raw IQ capture and write it beside its metadata.
    Simulate(SimulateArgs),
    /// Sweep the configured grid with a leakage detector and write CSV.
    Scan(ScanArgs),
    /// Collect an averaged trace set at one frequency.
    Collect(CollectArgs),
    /// Build a leakage profile from a profiling trace set.
    Profile(ProfileArgs),
    /// Run the correlation attack: trace set + profile -> score matrix.
    Attack(AttackArgs),
    /// Rank the true key within a score matrix.
    Rank(RankArgs),
    /// Multi-stage experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct SimulateArgs {
    /// Tuned center frequency in Hz.
    #[arg(long)]
    frequency: f64,
    /// Number of consecutive CPs in the capture.
    #[arg(long, default_value_t = 50)]
    cps: usize,
    /// Output base path ("<base>.iqf32" and "<base>.json").
    #[arg(long)]
    out: PathBuf,
    /// Disable the victim's encryptions (no-CP control capture).
    #[arg(long)]
    no_cp: bool,
}

#[derive(Args)]
struct ScanArgs {
    /// Detection method.
    #[arg(long, value_parser = ["ttest", "pattern"])]
    method: String,
    /// Traces per class set (t-test method).
    #[arg(long, default_value_t = 250)]
    n_per_set: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    frequency: f64,
    /// Number of averaged traces to collect.
    #[arg(long)]
    n: usize,
    /// Set role: profiling, attack, ttest-a, ttest-b.
    #[arg(long, value_parser = ["profiling", "attack", "ttest-a", "ttest-b"])]
    role: String,
    /// Output base path ("<base>.json" and "<base>.f32").
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// Profiling trace set base path.
    #[arg(long)]
    traces: PathBuf,
    /// Output profile JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Attack trace set base path.
    #[arg(long)]
    traces: PathBuf,
    /// Profile JSON from `profile`.
    #[arg(long)]
    profile: PathBuf,
    /// Output score matrix JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Score matrix JSON from `attack`.
    #[arg(long)]
    scores: PathBuf,
    /// True key, 32 hex digits; defaults to the scenario key.
    #[arg(long)]
    key: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Profile + attack + rank at every grid frequency.
    AttackSweep(AttackSweepArgs),
    /// Rank quartiles as a function of attack-set size.
    RankVsTraces(RankVsTracesArgs),
}

#[derive(Args)]
struct AttackSweepArgs {
    #[arg(long, default_value_t = 2000)]
    n_profile: usize,
    #[arg(long, default_value_t = 2000)]
    n_attack: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RankVsTracesArgs {
    /// Comma-separated frequencies in Hz (e.g. "2.464e9,2.528e9").
    #[arg(long, value_delimiter = ',', required = true)]
    frequencies: Vec<f64>,
    /// Comma-separated attack-set sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 2000)]
    n_profile: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn load_scenario(cli: &Cli) -> Result<Scenario> {
    let mut scenario = match &cli.config {
        Some(path) => Scenario::from_path(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        scenario.collection.seed = seed;
    } else if let Ok(env_seed) = std::env::var("SCREAMLAB_SEED") {
        scenario.collection.seed = env_seed
            .parse()
            .map_err(|_| Error::Config(format!("SCREAMLAB_SEED {env_seed:?} is not a u64")))?;
    }
    Ok(scenario)
}

fn parse_role(s: &str) -> Role {
    match s {
        "profiling" => Role::Profiling,
        "attack" => Role::Attack,
        "ttest-a" => Role::TtestSetA,
        "ttest-b" => Role::TtestSetB,
        _ => unreachable!("clap validates roles"),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let scenario = load_scenario(&cli)?;

    match &cli.command {
        Command::Simulate(args) => {
            let mut scenario = scenario;
            if args.no_cp {
                scenario.collection.cps_enabled = false;
            }
            let collector = SimCollector::new(scenario)?;
            let capture = collector.raw_iq_capture(args.frequency, args.cps);
            write_iq_capture(&capture, args.frequency, &args.out)?;
            println!(
                "wrote {} samples to {}.iqf32",
                capture.samples.len(),
                args.out.display()
            );
        }
        Command::Scan(args) => {
            let grid = scenario.sweep;
            let n_segs = scenario.collection.n_segs;
            let n_tests = scenario.collection.n_tests;
            let collector = SimCollector::new(scenario)?;
            let report: SweepReport = match args.method.as_str() {
                "ttest" => ttest_sweep(&grid, &collector, args.n_per_set)?,
                _ => pattern_sweep(&grid, &collector, n_segs, n_tests)?,
            };
            let file = std::fs::File::create(&args.out)?;
            report.write_csv(file)?;
            if let Some(json) = &args.json {
                write_json(&report, json)?;
            }
            for w in &report.warnings {
                eprintln!("warning: {:.1} Hz: {}", w.frequency_hz, w.reason);
            }
            println!(
                "{} of {} frequencies above threshold {}",
                report.detected.iter().filter(|&&d| d).count(),
                report.detected.len(),
                report.threshold
            );
        }
        Command::Collect(args) => {
            let collector = SimCollector::new(scenario)?;
            let set = collector.collect_set(args.frequency, args.n, parse_role(&args.role))?;
            write_container(&set, &args.out)?;
            println!(
                "wrote {} traces of {} samples to {}.f32",
                set.meta.n_traces,
                set.meta.trace_len,
                args.out.display()
            );
        }
        Command::Profile(args) => {
            let set = read_container(&args.traces)?;
            let profile = build_profile(&set)?;
            write_json(&profile, &args.out)?;
            println!("wrote profile for {:.1} Hz to {}", profile.frequency, args.out.display());
        }
        Command::Attack(args) => {
            let set = read_container(&args.traces)?;
            let profile: Profile = read_json(&args.profile)?;
            let scores = correlation_attack(&set, &profile)?;
            write_json(&scores, &args.out)?;
            println!(
                "wrote scores for {} traces to {}",
                scores.n_traces,
                args.out.display()
            );
        }
        Command::Rank(args) => {
            let scores: ScoreMatrix = read_json(&args.scores)?;
            let key = match &args.key {
                Some(hex) => parse_hex16(hex)?,
                None => scenario.device_model()?.key,
            };
            let correct: Vec<usize> = key.iter().map(|&b| b as usize).collect();
            let rank: RankResult = histogram_rank(&scores.logprobs, &correct, args.bins)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "log2_lower": rank.log2_lower,
                    "log2_estimate": rank.log2_estimate,
                    "log2_upper": rank.log2_upper,
                    "class": rank.class().as_str(),
                }))
                .expect("rank serializes")
            );
        }
        Command::Experiment(ExperimentCommand::AttackSweep(args)) => {
            let grid = scenario.sweep;
            let collector = SimCollector::new(scenario)?;
            let report =
                run_attack_sweep(&collector, &grid, args.n_profile, args.n_attack, args.bins)?;
            let file = std::fs::File::create(&args.out)?;
            report.write_csv(file)?;
            if let Some(json) = &args.json {
                write_json(&report, json)?;
            }
            println!("wrote {} frequencies to {}", report.rows.len(), args.out.display());
        }
        Command::Experiment(ExperimentCommand::RankVsTraces(args)) => {
            let collector = SimCollector::new(scenario)?;
            let curve = rank_vs_traces(
                &collector,
                &args.frequencies,
                &args.counts,
                args.repeats,
                args.n_profile,
                args.bins,
            )?;
            let file = std::fs::File::create(&args.out)?;
            curve.write_csv(file)?;
            println!("wrote {} curve points to {}", curve.points.len(), args.out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: worker pool: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
