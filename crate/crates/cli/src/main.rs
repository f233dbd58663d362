//! striprw: simulate and verify transient random walks in random
//! environment on a strip — Lyapunov spectra, occupation profiles, trap
//! point processes, and stable-limit statistics.

mod artifacts;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use striprw_core::env::{sample_iid_environment, validate_environment};
use striprw_core::rng::CounterRng;
use striprw_core::stats::stable_sum_oracle;

use crate::artifacts::{fmt_f64, ArtifactDir};
use crate::config::ExperimentConfig;
use crate::pipeline::{
    describe, lyapunov_stage, points_rows, profile_stage, rcurve_stage, run_experiment,
    run_replicas, runs_rows, solve_s_stage, test_reports, tn_rows, traps_rows, POINTS_HEADER,
    RUNS_HEADER, TN_HEADER, TRAPS_HEADER,
};

#[derive(Parser)]
#[command(name = "striprw", version, about)]
struct Cli {
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config worker count
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the config output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WithConfig {
    /// Path to the experiment TOML
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and a sampled environment window against all invariants
    Validate(WithConfig),
    /// Run the replica walks and write runs.csv
    Simulate(WithConfig),
    /// Estimate the top Lyapunov exponent; writes lyap.json
    Lyapunov(WithConfig),
    /// Estimate the moment-Lyapunov curve r(alpha); writes rcurve.csv
    Rcurve(WithConfig),
    /// Solve r(s) = 1 for the stable index
    SolveS(WithConfig),
    /// Quenched occupation profile of replica 0's environment; writes profile.csv
    Profile(WithConfig),
    /// Detect traps across replica environments; writes traps.csv and points.csv
    Traps(WithConfig),
    /// Normalized occupation-time sample and limit diagnostics; writes tn.csv
    Limits(WithConfig),
    /// Sample the Poisson-sum stable oracle to stdout as CSV
    Oracle {
        /// stable index in (0, 2)
        #[arg(long)]
        s_index: f64,
        /// small-point cutoff delta
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fast self-checks of the configured law and sampler determinism
    Test(WithConfig),
    /// Full pipeline: all artifacts plus manifest.json
    Run(WithConfig),
    /// Dry-run plan: stages, window sizes, burn-ins, cutoff and memory estimates
    Describe(WithConfig),
}

fn load(cli: &Cli, with: &WithConfig) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::from_toml_file(&with.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn require_valid(cfg: &ExperimentConfig) -> Result<(), String> {
    let diags = cfg.diagnostics();
    if diags.is_empty() {
        Ok(())
    } else {
        Err(format!("invalid config:\n  {}", diags.join("\n  ")))
    }
}

fn solved_s(cfg: &ExperimentConfig) -> Result<Option<f64>, String> {
    let s = solve_s_stage(cfg)?;
    Ok((!s.diffusive).then_some(s.s_hat))
}

fn replica_outcomes(
    cfg: &ExperimentConfig,
    s_hat: Option<f64>,
) -> Result<Vec<pipeline::ReplicaOutcome>, String> {
    run_replicas(cfg, s_hat).map_err(|(_, e)| e)
}

fn cmd_validate(cfg: &ExperimentConfig) -> Result<(), String> {
    require_valid(cfg)?;
    // exercise the sampled window too, not just the law parameters
    let env = sample_iid_environment(&cfg.law, -10, 10, cfg.seed).map_err(|e| e.to_string())?;
    let violations = validate_environment(&env);
    if violations.is_empty() {
        println!("config valid: m = {}, epsilon = {}", cfg.law.m(), cfg.law.epsilon());
        Ok(())
    } else {
        Err(violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"))
    }
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(), String> {
    require_valid(cfg)?;
    let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
    let outcomes = replica_outcomes(cfg, None)?;
    dir.write_csv("runs.csv", &RUNS_HEADER, &runs_rows(&outcomes)).map_err(|e| e.to_string())?;
    println!("wrote {} runs to {}", outcomes.len(), dir.path("runs.csv").display());
    Ok(())
}

fn cmd_traps(cfg: &ExperimentConfig) -> Result<(), String> {
    require_valid(cfg)?;
    let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
    let s_hat = solved_s(cfg)?;
    if s_hat.is_none() {
        return Err("law is diffusive: trap scaling undefined".into());
    }
    let outcomes = replica_outcomes(cfg, s_hat)?;
    dir.write_csv("traps.csv", &TRAPS_HEADER, &traps_rows(&outcomes))
        .map_err(|e| e.to_string())?;
    dir.write_csv("points.csv", &POINTS_HEADER, &points_rows(&outcomes))
        .map_err(|e| e.to_string())?;
    let total: usize = outcomes.iter().map(|o| o.records.len()).sum();
    println!("wrote {} trap records to {}", total, dir.path("traps.csv").display());
    Ok(())
}

fn cmd_limits(cfg: &ExperimentConfig) -> Result<(), String> {
    require_valid(cfg)?;
    let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
    let s_hat = solved_s(cfg)?.ok_or("law is diffusive: stable normalization undefined")?;
    let outcomes = replica_outcomes(cfg, Some(s_hat))?;
    let rows = tn_rows(cfg, &outcomes, s_hat)?;
    dir.write_csv("tn.csv", &TN_HEADER, &rows).map_err(|e| e.to_string())?;
    for report in test_reports(&outcomes) {
        println!("{report}");
    }
    Ok(())
}

fn cmd_oracle(s_index: f64, delta: f64, count: u64, seed: u64) -> Result<(), String> {
    if !(s_index > 0.0 && s_index < 2.0) {
        return Err(format!("s_index = {s_index} outside (0, 2)"));
    }
    println!("replica,value");
    for i in 0..count {
        let mut rng = CounterRng::for_replica(seed, i);
        let v = stable_sum_oracle(s_index, delta, &mut rng).map_err(|e| e.to_string())?;
        println!("{i},{}", fmt_f64(v));
    }
    Ok(())
}

fn cmd_test(cfg: &ExperimentConfig) -> Result<(), String> {
    require_valid(cfg)?;
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{name}: {}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };
    let a = sample_iid_environment(&cfg.law, -50, 50, cfg.seed).map_err(|e| e.to_string())?;
    let b = sample_iid_environment(&cfg.law, -50, 50, cfg.seed).map_err(|e| e.to_string())?;
    check("sampler determinism", a.triples == b.triples);
    // a shifted window must reproduce the overlap layer for layer
    let c = sample_iid_environment(&cfg.law, -10, 80, cfg.seed).map_err(|e| e.to_string())?;
    let overlap_ok = (-10..=50).all(|n| a.triple(n) == c.triple(n));
    check("window-shift consistency", overlap_ok);
    check("sampled window elliptic", validate_environment(&a).is_empty());
    let round_trip = a.to_jsonl();
    let back = striprw_core::EnvironmentWindow::from_jsonl(&round_trip, cfg.law.epsilon())
        .map_err(|e| e.to_string())?;
    check("jsonl round trip", back.triples == a.triples);
    if failures == 0 {
        Ok(())
    } else {
        Err(format!("{failures} self-check(s) failed"))
    }
}

fn dispatch(cli: &Cli) -> Result<(), String> {
    match &cli.command {
        Command::Validate(w) => cmd_validate(&load(cli, w)?),
        Command::Simulate(w) => cmd_simulate(&load(cli, w)?),
        Command::Lyapunov(w) => {
            let cfg = load(cli, w)?;
            require_valid(&cfg)?;
            let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
            let v = lyapunov_stage(&cfg, &dir)?;
            println!("{v}");
            Ok(())
        }
        Command::Rcurve(w) => {
            let cfg = load(cli, w)?;
            require_valid(&cfg)?;
            let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
            rcurve_stage(&cfg, &dir)?;
            println!("wrote {}", dir.path("rcurve.csv").display());
            Ok(())
        }
        Command::SolveS(w) => {
            let cfg = load(cli, w)?;
            require_valid(&cfg)?;
            let s = solve_s_stage(&cfg)?;
            println!(
                "{}",
                json!({
                    "s_hat": s.s_hat,
                    "ci_lo": s.ci_lo,
                    "ci_hi": s.ci_hi,
                    "diffusive": s.diffusive,
                })
            );
            Ok(())
        }
        Command::Profile(w) => {
            let cfg = load(cli, w)?;
            require_valid(&cfg)?;
            let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
            profile_stage(&cfg, &dir)?;
            println!("wrote {}", dir.path("profile.csv").display());
            Ok(())
        }
        Command::Traps(w) => cmd_traps(&load(cli, w)?),
        Command::Limits(w) => cmd_limits(&load(cli, w)?),
        Command::Oracle { s_index, delta, count, seed } => {
            cmd_oracle(*s_index, *delta, *count, *seed)
        }
        Command::Test(w) => cmd_test(&load(cli, w)?),
        Command::Run(w) => {
            let cfg = load(cli, w)?;
            let result = run_experiment(&cfg)?;
            println!("{}", result.manifest);
            Ok(())
        }
        Command::Describe(w) => {
            let cfg = load(cli, w)?;
            let plan = describe(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&plan).map_err(|e| e.to_string())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
