//! Experiment configuration, seeded multi-realization runs and result
//! bundles.
//!
//! A bundle directory holds `manifest.json`, `arm_accuracy.csv`, one
//! `runs/<algorithm>/r<NNN>/` directory per job with `trajectory.csv`,
//! `regret.csv` and `summary.json`, and `reports/` after aggregation. A
//! `PARTIAL` marker exists while a run is in progress or after it failed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{aggregate_curves, arm_accuracy_oracle, ArmAccuracyTable, RegretSummary};
use crate::bandit::{compute_regret, draw_rounds, run, Algorithm, BanditEnv, StreamMode, Trajectory};
use crate::conformal::{build_grid, empirical_coverage, AlphaGrid, ScoreTable};
use crate::error::{Error, Result};
use crate::expert::{
    AdversarialExpert, Expert, Mode, MonotoneExpert, PredictionLog, ReplayExpert, SuccessCurve,
};
use crate::io;

pub const PARTIAL_MARKER: &str = "PARTIAL";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub scores: PathBuf,
    pub calibration: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertConfig {
    Monotone {
        #[serde(default)]
        curve: SuccessCurve,
    },
    Adversarial {
        #[serde(default)]
        curve: SuccessCurve,
        #[serde(default = "default_min_success")]
        min_success: f64,
        /// Sample ids on which the expert breaks monotonicity.
        #[serde(default)]
        designated: Vec<String>,
    },
    Replay {
        log: PathBuf,
        #[serde(default = "default_mode")]
        mode: Mode,
    },
}

fn default_min_success() -> f64 {
    0.3
}

fn default_mode() -> Mode {
    Mode::Strict
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    pub horizon: usize,
    pub realizations: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    pub expert: ExpertConfig,
    pub data: DataPaths,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Draw rounds as a permutation of the pool instead of with replacement.
    #[serde(default)]
    pub faithful_replay: bool,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.data.scores);
        resolve(&mut cfg.data.calibration);
        resolve(&mut cfg.output);
        if let ExpertConfig::Replay { log, .. } = &mut cfg.expert {
            resolve(log);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn stream_mode(&self) -> StreamMode {
        if self.faithful_replay {
            StreamMode::Faithful
        } else {
            StreamMode::WithReplacement
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        let distinct: BTreeSet<_> = self.algorithms.iter().collect();
        if distinct.len() != self.algorithms.len() {
            return Err(Error::Config("an algorithm is listed twice".into()));
        }
        let mut paths = vec![&self.data.scores, &self.data.calibration];
        match &self.expert {
            ExpertConfig::Replay { log, .. } => paths.push(log),
            ExpertConfig::Monotone { curve } => curve.validate()?,
            ExpertConfig::Adversarial {
                curve, min_success, ..
            } => {
                curve.validate()?;
                if !(0.0..=1.0).contains(min_success) {
                    return Err(Error::Config("min_success must lie in [0, 1]".into()));
                }
            }
        }
        if let Some(p) = paths.into_iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Builds the expert described by `cfg`.
pub fn build_expert(
    cfg: &ExpertConfig,
    n_labels: usize,
    log: Option<PredictionLog>,
) -> Result<Box<dyn Expert>> {
    Ok(match cfg {
        ExpertConfig::Monotone { curve } => Box::new(MonotoneExpert::new(curve.clone(), n_labels)),
        ExpertConfig::Adversarial {
            curve,
            min_success,
            designated,
        } => Box::new(AdversarialExpert {
            curve: curve.clone(),
            n_labels,
            designated: designated.iter().cloned().collect(),
            min_success: *min_success,
        }),
        ExpertConfig::Replay { mode, .. } => Box::new(ReplayExpert {
            log: log.ok_or_else(|| Error::Config("replay expert needs a log".into()))?,
            mode: *mode,
            n_labels,
        }),
    })
}

/// Reachable (sample, displayed set) pairs and the ones the log lacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub checked: usize,
    pub missing: Vec<(String, String)>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Checks every distinct displayed set of every pool sample once.
pub fn verify_replay_coverage(
    log: &PredictionLog,
    grid: &AlphaGrid,
    pool: &ScoreTable,
    mode: Mode,
) -> CoverageReport {
    let n = pool.n_labels();
    let mut checked = 0;
    let mut missing = Vec::new();
    for s in pool.samples() {
        let mut seen = BTreeSet::new();
        for arm in 0..grid.m() {
            let set = grid.set_for_arm(s, arm);
            let sig = PredictionLog::display_signature(&set.labels, n);
            if !seen.insert(sig.clone()) {
                continue;
            }
            checked += 1;
            if log.lookup(&s.id, &set.labels, n, mode).is_none() {
                missing.push((s.id.clone(), sig));
            }
        }
    }
    CoverageReport { checked, missing }
}

/// Trajectories of every (algorithm, realization) job; realization `r`
/// uses seed `base_seed + r`, so all algorithms in a realization share
/// samples and noise.
pub fn run_batch(
    env: BanditEnv<'_>,
    algorithms: &[Algorithm],
    horizon: usize,
    realizations: usize,
    base_seed: u64,
    mode: StreamMode,
) -> Result<Vec<(Algorithm, Vec<Trajectory>)>> {
    let jobs: Vec<(usize, usize)> = (0..algorithms.len())
        .flat_map(|a| (0..realizations).map(move |r| (a, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(a, r)| {
            let rounds = draw_rounds(env.pool.len(), horizon, base_seed + r as u64, mode)?;
            run(algorithms[a], env, &rounds)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<(Algorithm, Vec<Trajectory>)> =
        algorithms.iter().map(|&a| (a, Vec::with_capacity(realizations))).collect();
    for (&(a, _), tr) in jobs.iter().zip(results) {
        out[a].1.push(tr);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub realization: usize,
    pub seed: u64,
    pub horizon: usize,
    pub final_active_arms: Vec<usize>,
    pub chosen_arm: Option<usize>,
    pub chosen_alpha: Option<f64>,
    pub final_regret: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub stream_mode: StreamMode,
    pub m: usize,
    pub n_labels: usize,
    pub pool_size: usize,
    pub best_arm: usize,
    pub best_alpha: f64,
    pub best_accuracy: f64,
}

pub fn job_dir(out: &Path, algorithm: Algorithm, realization: usize) -> PathBuf {
    out.join("runs")
        .join(algorithm.name())
        .join(format!("r{realization:03}"))
}

/// Inputs shared by every job of a run.
pub struct Prepared {
    pub pool: ScoreTable,
    pub grid: AlphaGrid,
    pub expert: Box<dyn Expert>,
    pub accuracy: ArmAccuracyTable,
}

/// Ingests data, builds the grid and expert, checks replay coverage and
/// computes the per-arm accuracy table.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let log_path = match &cfg.expert {
        ExpertConfig::Replay { log, .. } => Some(log.as_path()),
        _ => None,
    };
    let ing = io::ingest(&cfg.data.scores, &cfg.data.calibration, log_path)?;
    let grid = build_grid(&ing.calibration)?;
    if cfg.faithful_replay && cfg.horizon > ing.pool.len() {
        return Err(Error::Config(format!(
            "faithful replay needs horizon {} <= pool size {}",
            cfg.horizon,
            ing.pool.len()
        )));
    }
    if let (ExpertConfig::Replay { mode, .. }, Some(log)) = (&cfg.expert, &ing.log) {
        let report = verify_replay_coverage(log, &grid, &ing.pool, *mode);
        if !report.is_complete() {
            return Err(Error::ReplayCoverage {
                missing: report.missing,
            });
        }
    }
    let expert = build_expert(&cfg.expert, ing.table.n_labels(), ing.log)?;
    let accuracy = arm_accuracy_oracle(&grid, expert.as_ref(), &ing.pool)?;
    Ok(Prepared {
        pool: ing.pool,
        grid,
        expert,
        accuracy,
    })
}

/// Runs every job of `cfg` and writes the bundle to `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    let prep = prepare(cfg)?;
    let out = &cfg.output;
    fs::create_dir_all(out)?;
    let marker = out.join(PARTIAL_MARKER);
    fs::write(&marker, "run in progress\n")?;
    match write_bundle(cfg, &prep) {
        Ok(manifest) => {
            fs::remove_file(&marker)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("run failed: {e}\n"));
            Err(Error::Runtime(e.to_string()))
        }
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Runtime(e.to_string()))
}

fn write_bundle(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Manifest> {
    let out = &cfg.output;
    let env = BanditEnv {
        grid: &prep.grid,
        pool: prep.pool.samples(),
        expert: prep.expert.as_ref(),
    };
    io::atomic_write(
        &out.join("arm_accuracy.csv"),
        &io::accuracy_table_csv(&prep.accuracy)?,
    )?;
    let mode = cfg.stream_mode();
    let jobs: Vec<(Algorithm, usize)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.realizations).map(move |r| (a, r)))
        .collect();
    thread_pool(cfg.jobs)?.install(|| {
        jobs.par_iter().try_for_each(|&(alg, r)| {
            let start = Instant::now();
            let seed = cfg.base_seed + r as u64;
            let rounds = draw_rounds(env.pool.len(), cfg.horizon, seed, mode)?;
            let tr = run(alg, env, &rounds)?;
            let regret = compute_regret(&tr, &prep.accuracy.accuracy)?;
            let dir = job_dir(out, alg, r);
            io::atomic_write(&dir.join("trajectory.csv"), &io::trajectory_csv(&tr, r)?)?;
            io::atomic_write(&dir.join("regret.csv"), &io::regret_csv(&regret)?)?;
            let summary = RunSummary {
                algorithm: alg,
                realization: r,
                seed,
                horizon: cfg.horizon,
                final_active_arms: tr.final_active.clone(),
                chosen_arm: tr.chosen_arm,
                chosen_alpha: tr.chosen_arm.map(|a| prep.grid.alpha(a)),
                final_regret: regret.last().copied().unwrap_or(0.0),
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            io::write_json(&dir.join("summary.json"), &summary)
        })
    })?;
    let best = prep.accuracy.best_arm();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.hash(),
        config: cfg.clone(),
        stream_mode: mode,
        m: prep.grid.m(),
        n_labels: prep.pool.n_labels(),
        pool_size: prep.pool.len(),
        best_arm: best,
        best_alpha: prep.grid.alpha(best),
        best_accuracy: prep.accuracy.best_accuracy(),
    };
    io::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmReport {
    pub algorithm: Algorithm,
    pub final_mean_regret: f64,
    pub final_stderr: f64,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub config_sha256: String,
    pub horizon: usize,
    pub algorithms: Vec<AlgorithmReport>,
    /// Algorithm names by ascending mean final regret.
    pub ordering: Vec<String>,
}

/// Aggregates every algorithm's regret curves in a finished bundle into
/// `reports/regret_<algorithm>.csv` and `reports/summary.json`.
pub fn report_bundle(out: &Path) -> Result<BundleReport> {
    if out.join(PARTIAL_MARKER).exists() {
        return Err(Error::Validation(format!(
            "{} holds a partial run",
            out.display()
        )));
    }
    let text = fs::read_to_string(out.join(MANIFEST))
        .map_err(|e| Error::Validation(format!("no manifest in {}: {e}", out.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let cfg = &manifest.config;
    let mut algorithms = Vec::new();
    for &alg in &cfg.algorithms {
        let curves = (0..cfg.realizations)
            .map(|r| io::read_regret(&job_dir(out, alg, r).join("regret.csv")))
            .collect::<Result<Vec<_>>>()?;
        let summary = if cfg.horizon == 0 {
            RegretSummary {
                mean: Vec::new(),
                stderr: Vec::new(),
                realizations: curves.len(),
            }
        } else {
            aggregate_curves(&curves)?
        };
        io::atomic_write(
            &out.join("reports").join(format!("regret_{}.csv", alg.name())),
            &io::regret_summary_csv(&summary)?,
        )?;
        algorithms.push(AlgorithmReport {
            algorithm: alg,
            final_mean_regret: summary.final_mean(),
            final_stderr: summary.final_stderr(),
            realizations: summary.realizations,
        });
    }
    let mut ordering: Vec<&AlgorithmReport> = algorithms.iter().collect();
    ordering.sort_by(|a, b| a.final_mean_regret.total_cmp(&b.final_mean_regret));
    let report = BundleReport {
        config_sha256: manifest.config_sha256.clone(),
        horizon: cfg.horizon,
        ordering: ordering.iter().map(|a| a.algorithm.name().to_string()).collect(),
        algorithms,
    };
    io::write_json(&out.join("reports").join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub alpha_index: usize,
    pub alpha: f64,
    pub target: f64,
    pub empirical: f64,
    /// PAC tolerance implied by the calibration size at the given δ.
    pub epsilon: f64,
    pub within: bool,
}

/// Empirical coverage of every arm over `pool` against `1 - α ± ε`, with
/// `ε = sqrt(ln(2/δ) / (2m))`.
pub fn coverage_audit(grid: &AlphaGrid, pool: &ScoreTable, delta: f64) -> Result<Vec<CoverageRow>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta {delta} outside (0, 1)")));
    }
    let m = grid.m();
    let epsilon = ((2.0 / delta).ln() / (2.0 * m as f64)).sqrt();
    (0..m)
        .map(|arm| {
            let empirical = empirical_coverage(grid, arm, pool)?;
            let target = 1.0 - grid.alpha(arm);
            Ok(CoverageRow {
                alpha_index: arm,
                alpha: grid.alpha(arm),
                target,
                empirical,
                epsilon,
                within: (empirical - target).abs() <= epsilon,
            })
        })
        .collect()
}
