//! Command-line driver: one subcommand per experiment plus `all`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 invariant violation
//! detected during the run, 1 other runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use privaudit_core::config::{ExperimentConfig, ExperimentKind};
use privaudit_core::experiment::run_experiment;
use privaudit_core::report::{emit_report, ExperimentResults, Report};
use privaudit_core::Error;

const OUT_DIR_ENV: &str = "PRIVAUDIT_OUT";

#[derive(Parser)]
#[command(
    name = "privaudit",
    version,
    about = "Membership-inference evaluation, condensation baselines, DP-SGD accounting and worst-case privacy audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the subset-restricted and full-universe attack protocols
    ProtocolGap(RunArgs),
    /// Exactness properties of the linear distribution-matching transform
    DmProperties(RunArgs),
    /// Accuracy / privacy / attack-advantage comparison table
    DpsgdTable(RunArgs),
    /// Empirical epsilon lower bounds vs the naive read-off, plus subgroups
    EpsEstimation(RunArgs),
    /// Worst-case neighboring-dataset audits (DM and DP-SGD pipelines)
    Audit(RunArgs),
    /// Exhaustive exponential-mechanism privacy-bound check
    EmCheck(RunArgs),
    /// Run every experiment, one output subdirectory each
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration (defaults are built in)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config value
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and CSV tables
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trial count; overrides the config value
    #[arg(long)]
    trials: Option<usize>,
    /// Parallel worker threads for independent trials
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::ProtocolGap(a) => run_one(ExperimentKind::ProtocolGap, &a),
        Command::DmProperties(a) => run_one(ExperimentKind::DmProperties, &a),
        Command::DpsgdTable(a) => run_one(ExperimentKind::DpsgdTable, &a),
        Command::EpsEstimation(a) => run_one(ExperimentKind::EpsEstimation, &a),
        Command::Audit(a) => run_one(ExperimentKind::Audit, &a),
        Command::EmCheck(a) => run_one(ExperimentKind::EmCheck, &a),
        Command::All(a) => run_all(&a),
    };
    ExitCode::from(code)
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default_for(kind),
    };
    // The subcommand decides what runs; flags beat env, env beats the file.
    cfg.kind = kind;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.out_dir = Some(PathBuf::from(dir));
        }
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_one(kind: ExperimentKind, args: &RunArgs) -> u8 {
    let cfg = match load_config(kind, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("privaudit: {e}");
            return 2;
        }
    };
    execute(&cfg)
}

fn run_all(args: &RunArgs) -> u8 {
    let mut worst = 0u8;
    for kind in ExperimentKind::ALL {
        let cfg = match load_config(kind, args) {
            Ok(mut c) => {
                if let Some(dir) = c.out_dir.take() {
                    c.out_dir = Some(dir.join(kind.as_str()));
                }
                c
            }
            Err(e) => {
                eprintln!("privaudit: {e}");
                return 2;
            }
        };
        println!("== {} ==", kind.as_str());
        worst = worst.max(execute(&cfg));
    }
    worst
}

fn execute(cfg: &ExperimentConfig) -> u8 {
    let report = match run_experiment(cfg) {
        Ok(r) => r,
        Err(Error::Config(msg)) => {
            eprintln!("privaudit: configuration error: {msg}");
            return 2;
        }
        Err(e) => {
            eprintln!("privaudit: {e}");
            return 1;
        }
    };
    print_summary(&report);
    if let Some(out) = &cfg.out_dir {
        match emit_report(&report, out) {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            }
            Err(e) => {
                eprintln!("privaudit: {e}");
                return 1;
            }
        }
    }
    if report.invariant_violations.is_empty() {
        0
    } else {
        for v in &report.invariant_violations {
            eprintln!("invariant violation: {v}");
        }
        3
    }
}

fn print_summary(report: &Report) {
    match &report.results {
        ExperimentResults::ProtocolGap(r) => {
            println!(
                "subset-restricted advantage (mean over {} trials): {:.4}",
                r.trials.len(),
                r.mean_subset_advantage
            );
            println!(
                "full-universe advantage:                           {:.4} (95% CI half-width {:.4})",
                r.mean_full_universe_advantage, r.full_universe_ci_half_width
            );
            println!(
                "subset-oracle expectation r_ipc = {:.4}, stated cap 2*r_ipc = {:.4}",
                r.oracle_advantage_r_ipc, r.advantage_cap_two_r_ipc
            );
        }
        ExperimentResults::DmProperties(r) => {
            println!("pairs checked: {}", r.pairs_checked);
            println!("max relative mean error: {:.3e}", r.max_mean_relative_error);
            println!("centered identity exact: {}", r.centered_identity_exact);
            println!(
                "mean(T)-only dependence bitwise: {}",
                r.t_replacement_bitwise_identical
            );
        }
        ExperimentResults::DpsgdTable(r) => {
            println!(
                "{:<26} {:>10} {:>12} {:>8} {:>12}",
                "technique", "accuracy", "dp epsilon", "formal", "advantage"
            );
            for row in &r.rows {
                println!(
                    "{:<26} {:>10.3} {:>12} {:>8} {:>12.4}",
                    row.technique,
                    row.test_accuracy,
                    row.epsilon
                        .map(|e| format!("{e:.3}"))
                        .unwrap_or_else(|| "n/a".into()),
                    if row.formal_guarantee { "yes" } else { "no" },
                    row.attack_advantage
                );
            }
            println!("(delta = {:e})", r.delta);
        }
        ExperimentResults::EpsEstimation(r) => {
            println!(
                "true epsilon {:.4}: eps_lb exceeded it in {}/{} repeats; naive read-off in {}/{}",
                r.true_epsilon,
                r.lb_exceed_count,
                r.repeats.len(),
                r.naive_exceed_count,
                r.repeats.len()
            );
            println!(
                "subgroup disparity: global eps_lb {:.4}, subgroup {:.4}, complement {:.4}",
                r.subgroup.global.eps_lower_bound,
                r.subgroup.subgroup.eps_lower_bound,
                r.subgroup.complement.eps_lower_bound
            );
        }
        ExperimentResults::Audit(r) => {
            println!(
                "dm_linear audit: detection {:.4}, eps_lb {:.4}",
                r.dm.detection_rate, r.dm.eps_lower
            );
            println!(
                "dp-sgd audit (sigma {:.3}): detection {:.4}, eps_lb {:.4}, region check {:?}",
                r.dpsgd_sigma, r.dpsgd.detection_rate, r.dpsgd.eps_lower, r.dpsgd.dp_check
            );
        }
        ExperimentResults::EmCheck(r) => {
            println!(
                "{} neighboring pairs checked: max log-ratio {:.6} <= bound {:.6}",
                r.pairs_checked, r.max_log_ratio, r.epsilon_bound
            );
        }
    }
}
