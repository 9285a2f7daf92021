//! Bandit algorithms over the coverage grid.
//!
//! Six algorithms share one round protocol: draw a sample, serve the pulled
//! arm's prediction set, observe the expert's pick and the true label, then
//! update per-arm counters. They differ in which arm is pulled and in how
//! many arms receive a reward from a single observation.

mod inference;
mod ledger;
mod regret;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use inference::{
    assumption_free_inference, counterfactual_update, median_arm, menu_sizes,
    monotone_inference, Inference, RoundGeometry,
};
pub use ledger::{ArmLedger, ArmUpdate};
pub use regret::compute_regret;

use crate::conformal::{AlphaGrid, Sample};
use crate::error::{Error, Result};
use crate::expert::{Expert, ExpertExogenous};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "se")]
    VanillaSe,
    #[serde(rename = "ucb1")]
    VanillaUcb1,
    #[serde(rename = "cf-se")]
    CounterfactualSe,
    #[serde(rename = "cf-ucb1")]
    CounterfactualUcb1,
    #[serde(rename = "af-cf-se")]
    AfCounterfactualSe,
    #[serde(rename = "af-cf-ucb1")]
    AfCounterfactualUcb1,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::VanillaSe,
        Algorithm::VanillaUcb1,
        Algorithm::CounterfactualSe,
        Algorithm::CounterfactualUcb1,
        Algorithm::AfCounterfactualSe,
        Algorithm::AfCounterfactualUcb1,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::VanillaSe => "se",
            Algorithm::VanillaUcb1 => "ucb1",
            Algorithm::CounterfactualSe => "cf-se",
            Algorithm::CounterfactualUcb1 => "cf-ucb1",
            Algorithm::AfCounterfactualSe => "af-cf-se",
            Algorithm::AfCounterfactualUcb1 => "af-cf-ucb1",
        }
    }

    fn inference(&self) -> InferenceKind {
        match self {
            Algorithm::VanillaSe | Algorithm::VanillaUcb1 => InferenceKind::None,
            Algorithm::CounterfactualSe | Algorithm::CounterfactualUcb1 => InferenceKind::Monotone,
            Algorithm::AfCounterfactualSe | Algorithm::AfCounterfactualUcb1 => {
                InferenceKind::AssumptionFree
            }
        }
    }

    fn is_elimination(&self) -> bool {
        matches!(
            self,
            Algorithm::VanillaSe | Algorithm::CounterfactualSe | Algorithm::AfCounterfactualSe
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InferenceKind {
    None,
    Monotone,
    AssumptionFree,
}

/// How the per-round sample sequence is drawn from the evaluation pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamMode {
    /// i.i.d. with replacement.
    #[default]
    WithReplacement,
    /// A seeded permutation; requires a horizon no larger than the pool.
    Faithful,
}

/// One round's sample (index into the pool) and expert noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub sample: usize,
    pub exo: ExpertExogenous,
}

/// The full round sequence for one seed. Every algorithm run with the same
/// seed sees the same samples and noise.
pub fn draw_rounds(pool_len: usize, horizon: usize, seed: u64, mode: StreamMode) -> Result<Vec<Round>> {
    if horizon > 0 && pool_len == 0 {
        return Err(Error::domain("cannot draw rounds from an empty pool"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Option<Vec<usize>> = match mode {
        StreamMode::WithReplacement => None,
        StreamMode::Faithful => {
            if horizon > pool_len {
                return Err(Error::domain(format!(
                    "faithful replay needs horizon {horizon} <= pool size {pool_len}"
                )));
            }
            let mut idx: Vec<usize> = (0..pool_len).collect();
            idx.shuffle(&mut rng);
            Some(idx)
        }
    };
    Ok((0..horizon)
        .map(|t| {
            let sample = match &order {
                Some(o) => o[t],
                None => rng.random_range(0..pool_len),
            };
            let u = rng.random::<f64>();
            let v_seed = rng.random::<u64>();
            Round {
                sample,
                exo: ExpertExogenous::new(u, v_seed),
            }
        })
        .collect())
}

/// Read-only inputs shared by every run.
#[derive(Clone, Copy)]
pub struct BanditEnv<'a> {
    pub grid: &'a AlphaGrid,
    pub pool: &'a [Sample],
    pub expert: &'a dyn Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub t: usize,
    pub arm: usize,
    pub sample_index: usize,
    pub sample_id: String,
    pub set: Vec<usize>,
    pub prediction: usize,
    pub reward: bool,
    pub updates: Vec<ArmUpdate>,
    /// Active arms when the arm was pulled.
    pub active_arms: usize,
    pub exo: ExpertExogenous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub m: usize,
    pub horizon: usize,
    pub records: Vec<RoundRecord>,
    pub final_active: Vec<usize>,
    /// The arm the run would deploy: best surviving mean for elimination
    /// algorithms, most-pulled arm for index algorithms.
    pub chosen_arm: Option<usize>,
    pub ledger: ArmLedger,
}

impl Trajectory {
    pub fn pulled_arms(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.arm)
    }
}

struct Runner<'a> {
    env: BanditEnv<'a>,
    rounds: &'a [Round],
    ledger: ArmLedger,
    records: Vec<RoundRecord>,
    inference: InferenceKind,
}

impl<'a> Runner<'a> {
    fn t(&self) -> usize {
        self.records.len()
    }

    fn done(&self) -> bool {
        self.t() >= self.rounds.len()
    }

    /// Serves `arm` for the next round and applies updates to the arms in
    /// `eligible`; resolved arms are removed from it.
    fn pull(&mut self, arm: usize, eligible: &mut BTreeSet<usize>, active: usize) -> Result<()> {
        let round = self.rounds[self.t()];
        let sample = self.env.pool.get(round.sample).ok_or_else(|| {
            Error::domain(format!("round sample index {} outside pool", round.sample))
        })?;
        let set = self.env.grid.set_for_arm(sample, arm);
        let prediction = self.env.expert.predict(sample, &set, &round.exo)?;
        let reward = prediction == sample.true_label;
        self.ledger.record_pull(arm);

        let inf = match self.inference {
            InferenceKind::None => Inference {
                updates: vec![ArmUpdate::reward(arm, reward)],
                resolved: vec![arm],
            },
            InferenceKind::Monotone => {
                monotone_inference(RoundGeometry::new(self.env.grid, sample), arm, reward)
            }
            InferenceKind::AssumptionFree => assumption_free_inference(
                RoundGeometry::new(self.env.grid, sample),
                &menu_sizes(self.env.grid, sample),
                arm,
                reward,
            ),
        };
        let updates = inference::apply_within(eligible, &mut self.ledger, inf);

        self.records.push(RoundRecord {
            t: self.t() + 1,
            arm,
            sample_index: round.sample,
            sample_id: sample.id.clone(),
            set: set.labels,
            prediction,
            reward,
            updates,
            active_arms: active,
            exo: round.exo,
        });
        Ok(())
    }

    fn finish(self, algorithm: Algorithm, final_active: Vec<usize>, chosen_arm: Option<usize>) -> Trajectory {
        Trajectory {
            algorithm,
            m: self.env.grid.m(),
            horizon: self.rounds.len(),
            records: self.records,
            final_active,
            chosen_arm,
            ledger: self.ledger,
        }
    }
}

/// Runs `algorithm` over the given rounds; the horizon is `rounds.len()`.
pub fn run(algorithm: Algorithm, env: BanditEnv<'_>, rounds: &[Round]) -> Result<Trajectory> {
    let runner = Runner {
        env,
        rounds,
        ledger: ArmLedger::new(env.grid.m(), rounds.len()),
        records: Vec::with_capacity(rounds.len()),
        inference: algorithm.inference(),
    };
    if algorithm.is_elimination() {
        successive_elimination(algorithm, runner)
    } else {
        ucb1(algorithm, runner)
    }
}

/// Draws the rounds for `seed` and runs `algorithm`.
pub fn run_seeded(
    algorithm: Algorithm,
    env: BanditEnv<'_>,
    horizon: usize,
    seed: u64,
    mode: StreamMode,
) -> Result<Trajectory> {
    let rounds = draw_rounds(env.pool.len(), horizon, seed, mode)?;
    run(algorithm, env, &rounds)
}

/// Sweeps pull arms until every active arm has a fresh reward, then the
/// deactivation rule prunes. Vanilla sweeps go round-robin in ascending α;
/// counterfactual sweeps pull the median unexplored arm. Once one arm
/// survives it is pulled until the horizon.
fn successive_elimination(algorithm: Algorithm, mut run: Runner<'_>) -> Result<Trajectory> {
    let m = run.env.grid.m();
    let mut active: Vec<usize> = (0..m).collect();
    while !run.done() && active.len() > 1 {
        let mut unexplored: BTreeSet<usize> = active.iter().copied().collect();
        while !unexplored.is_empty() && !run.done() {
            let arm = match run.inference {
                InferenceKind::None => *unexplored.first().expect("nonempty"),
                _ => median_arm(&unexplored).expect("nonempty"),
            };
            run.pull(arm, &mut unexplored, active.len())?;
        }
        if unexplored.is_empty() {
            run.ledger.deactivate(&mut active);
        }
    }
    while !run.done() {
        let arm = run.ledger.best_by_mean(&active).expect("at least one active arm");
        let mut eligible: BTreeSet<usize> = active.iter().copied().collect();
        run.pull(arm, &mut eligible, active.len())?;
    }
    let chosen = run.ledger.best_by_mean(&active);
    Ok(run.finish(algorithm, active, chosen))
}

/// Pulls the arm with the highest UCB each round, unobserved arms first.
/// Counterfactual variants update every arm the inference reaches.
fn ucb1(algorithm: Algorithm, mut run: Runner<'_>) -> Result<Trajectory> {
    let m = run.env.grid.m();
    while !run.done() {
        let arm = run.ledger.argmax_ucb();
        let mut all: BTreeSet<usize> = (0..m).collect();
        run.pull(arm, &mut all, m)?;
    }
    let mut chosen: Option<(usize, u64)> = None;
    for a in 0..m {
        let p = run.ledger.pulls(a);
        if p > 0 && chosen.is_none_or(|(_, best)| p > best) {
            chosen = Some((a, p));
        }
    }
    Ok(run.finish(algorithm, (0..m).collect(), chosen.map(|(a, _)| a)))
}

#[cfg(test)]
mod tests;
