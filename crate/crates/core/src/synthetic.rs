//! Seeded generators: classifier outputs, calibration draws, expert logs.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conformal::{AlphaGrid, Sample, ScoreTable};
use crate::error::{Error, Result};
use crate::expert::{Expert, ExpertExogenous, LogRecord, Mode, PredictionLog};

/// Softmax classifier with Gaussian logits: the true label's logit is
/// shifted by a per-sample margin drawn from `N(margin_mean, margin_sd)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub n_labels: usize,
    pub margin_mean: f64,
    pub margin_sd: f64,
    /// Multiplies all logits before the softmax.
    pub sharpness: f64,
}

impl Default for ClassifierModel {
    /// Top-1 accuracy near 0.85 over 16 labels.
    fn default() -> Self {
        Self {
            n_labels: 16,
            margin_mean: 3.0,
            margin_sd: 0.5,
            sharpness: 0.9,
        }
    }
}

impl ClassifierModel {
    pub fn generate(&self, n_samples: usize, seed: u64) -> Result<ScoreTable> {
        if self.n_labels == 0 {
            return Err(Error::domain("classifier needs at least one label"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let margin = Normal::new(self.margin_mean, self.margin_sd.max(0.0))
            .map_err(|e| Error::domain(e.to_string()))?;
        let samples = (0..n_samples)
            .map(|i| {
                let y = rng.random_range(1..=self.n_labels);
                let mut logits: Vec<f64> = (0..self.n_labels).map(|_| std.sample(&mut rng)).collect();
                logits[y - 1] += margin.sample(&mut rng);
                Sample {
                    id: format!("s{i:05}"),
                    probs: softmax(&logits, self.sharpness),
                    true_label: y,
                }
            })
            .collect();
        ScoreTable::new(self.n_labels, samples)
    }
}

fn softmax(logits: &[f64], sharpness: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) * sharpness).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total).clamp(0.0, 1.0)).collect()
}

/// `m` distinct sample ids drawn uniformly without replacement.
pub fn draw_calibration_ids(table: &ScoreTable, m: usize, seed: u64) -> Result<Vec<String>> {
    if m > table.len() {
        return Err(Error::domain(format!(
            "calibration size {m} exceeds table size {}",
            table.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, table.len(), m).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| table.samples()[i].id.clone()).collect())
}

/// How a lenient participant departs from the strict pick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LenientBehavior {
    /// Chance of picking the true label from outside a set that misses it.
    pub save_prob: f64,
    /// Chance of abandoning a correct in-set pick for an outside label.
    pub own_goal_prob: f64,
}

/// Matched strict and lenient logs covering every displayed set of every
/// pool sample, `reps` records per (sample, set, mode).
///
/// Each lenient record copies its strict twin's pick and then deviates per
/// `lenient`, so per set the lenient success count equals the strict count
/// plus outside-set saves minus outside-set own-goals.
pub fn simulate_logs(
    pool: &ScoreTable,
    grid: &AlphaGrid,
    expert: &dyn Expert,
    lenient: LenientBehavior,
    reps: usize,
    n_experts: usize,
    seed: u64,
) -> Result<PredictionLog> {
    let n = pool.n_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for sample in pool.samples() {
        let mut seen = BTreeSet::new();
        for arm in 0..grid.m() {
            let set = grid.set_for_arm(sample, arm);
            if !seen.insert(set.labels.clone()) {
                continue;
            }
            let menu = set.menu(n);
            for _ in 0..reps {
                let exo = ExpertExogenous::new(rng.random(), rng.random());
                let expert_id = Some(format!("e{}", rng.random_range(0..n_experts.max(1))));
                let strict = expert.predict(sample, &set, &exo)?;
                let y = sample.true_label;
                let outside: Vec<usize> = (1..=n).filter(|l| !menu.contains(l)).collect();
                let mut loose = strict;
                if !menu.contains(&y) {
                    if rng.random::<f64>() < lenient.save_prob {
                        loose = y;
                    }
                } else if strict == y
                    && !outside.is_empty()
                    && rng.random::<f64>() < lenient.own_goal_prob
                {
                    loose = outside[rng.random_range(0..outside.len())];
                }
                for (mode, pick) in [(Mode::Strict, strict), (Mode::Lenient, loose)] {
                    records.push(LogRecord {
                        sample_id: sample.id.clone(),
                        set_signature: set.labels.clone(),
                        predicted_label: pick,
                        mode,
                        expert_id: expert_id.clone(),
                    });
                }
            }
        }
    }
    PredictionLog::new(records)
}
