//! `cfsets`: run, verify, report on and audit conformal-set bandit experiments.
//!
//! Exit codes: 0 on success, 1 when input fails validation, 2 when a run
//! fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfsets_core::conformal::build_grid;
use cfsets_core::experiment::{
    coverage_audit, report_bundle, run_experiment, verify_replay_coverage, ExperimentConfig, ExpertConfig,
};
use cfsets_core::synthetic::{draw_calibration_ids, ClassifierModel};
use cfsets_core::{io, Error};

#[derive(Parser)]
#[command(name = "cfsets", version, about = "Bandits over conformal prediction sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, realization) job of a config and write the bundle.
    Run {
        config: PathBuf,
        /// Overrides `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Draw rounds as a permutation of the pool.
        #[arg(long)]
        faithful_replay: bool,
    },
    /// Check that a replay log covers every reachable (sample, set) pair.
    Verify { config: PathBuf },
    /// Aggregate a finished bundle into regret curves and a summary.
    Report { bundle: PathBuf },
    /// Audit empirical coverage of every arm on the evaluation pool.
    Coverage {
        config: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Write the audit as JSON here instead of printing a table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic score table and calibration ids.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1200)]
        samples: usize,
        #[arg(long, default_value_t = 120)]
        calibration: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            config,
            seed,
            jobs,
            out,
            faithful_replay,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.base_seed = seed;
            }
            if let Some(jobs) = jobs {
                cfg.jobs = jobs;
            }
            if let Some(out) = out {
                cfg.output = out;
            }
            cfg.faithful_replay |= faithful_replay;
            let manifest = run_experiment(&cfg)?;
            println!(
                "wrote {} jobs to {} (m={}, pool={}, best alpha {:.4} at accuracy {:.4})",
                cfg.algorithms.len() * cfg.realizations,
                cfg.output.display(),
                manifest.m,
                manifest.pool_size,
                manifest.best_alpha,
                manifest.best_accuracy
            );
            Ok(())
        }
        Command::Verify { config } => verify(&config),
        Command::Report { bundle } => {
            let report = report_bundle(&bundle)?;
            println!("{:<12} {:>12} {:>10}", "algorithm", "mean R(T)", "stderr");
            for a in &report.algorithms {
                println!(
                    "{:<12} {:>12.3} {:>10.3}",
                    a.algorithm.name(),
                    a.final_mean_regret,
                    a.final_stderr
                );
            }
            println!("ordering: {}", report.ordering.join(" < "));
            Ok(())
        }
        Command::Coverage { config, delta, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ing = io::ingest(&cfg.data.scores, &cfg.data.calibration, None)?;
            let grid = build_grid(&ing.calibration)?;
            let rows = coverage_audit(&grid, &ing.pool, delta)?;
            if let Some(out) = out {
                return io::write_json(&out, &rows);
            }
            println!("{:>5} {:>8} {:>8} {:>9} {:>7}", "arm", "alpha", "target", "empirical", "within");
            for r in &rows {
                println!(
                    "{:>5} {:>8.4} {:>8.4} {:>9.4} {:>7}",
                    r.alpha_index, r.alpha, r.target, r.empirical, r.within
                );
            }
            let inside = rows.iter().filter(|r| r.within).count();
            println!(
                "{inside}/{} arms within epsilon {:.4}",
                rows.len(),
                rows.first().map_or(0.0, |r| r.epsilon)
            );
            Ok(())
        }
        Command::Synth {
            out,
            samples,
            calibration,
            seed,
        } => {
            let table = ClassifierModel::default().generate(samples, seed)?;
            let ids = draw_calibration_ids(&table, calibration, seed + 1)?;
            io::write_scores(&out.join("scores.csv"), &table)?;
            io::write_calibration_ids(&out.join("calibration.txt"), &ids)?;
            println!("wrote {samples} samples and {calibration} calibration ids to {}", out.display());
            Ok(())
        }
    }
}

fn verify(config: &Path) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    let ExpertConfig::Replay { log, mode } = &cfg.expert else {
        return Err(Error::Validation(
            "verify needs an expert of kind \"replay\"".to_string(),
        ));
    };
    let ing = io::ingest(&cfg.data.scores, &cfg.data.calibration, Some(log))?;
    let grid = build_grid(&ing.calibration)?;
    let log = ing.log.expect("log path given");
    let report = verify_replay_coverage(&log, &grid, &ing.pool, *mode);
    println!(
        "checked {} (sample, set) pairs in {} mode, {} missing",
        report.checked,
        mode.as_str(),
        report.missing.len()
    );
    for (id, sig) in &report.missing {
        println!("missing: {id} [{sig}]");
    }
    if report.is_complete() {
        Ok(())
    } else {
        Err(Error::ReplayCoverage {
            missing: report.missing,
        })
    }
}
