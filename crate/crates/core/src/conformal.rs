//! Split-conformal prediction sets over a finite coverage grid.
//!
//! With `m` calibration scores there are exactly `m` distinct conformal
//! predictors. Arm `j` (0-based, ascending in α) has
//!
//! ```text
//! alpha_j     = (j + 1) / (m + 1)
//! threshold_j = (m - j)-th smallest calibration score
//! C_j(x)      = { y : 1 - probs_y(x) <= threshold_j }
//! ```
//!
//! so thresholds are nonincreasing in `j` and sets are nested:
//! `C_{j+1}(x) ⊆ C_j(x)`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One classifier output with its ground truth. Labels are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub probs: Vec<f64>,
    pub true_label: usize,
}

impl Sample {
    /// Conformal score of the true label.
    pub fn true_score(&self) -> f64 {
        1.0 - self.probs[self.true_label - 1]
    }

    /// Label with the highest probability, lowest label on ties.
    pub fn argmax_label(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// Frozen classifier outputs for a labelled pool.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    n_labels: usize,
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl ScoreTable {
    pub fn new(n_labels: usize, samples: Vec<Sample>) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::domain("score table needs at least one label"));
        }
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.probs.len() != n_labels {
                return Err(Error::Validation(format!(
                    "sample {}: expected {} probabilities, got {}",
                    s.id,
                    n_labels,
                    s.probs.len()
                )));
            }
            if let Some(p) = s.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Validation(format!(
                    "sample {}: probability {p} outside [0, 1]",
                    s.id
                )));
            }
            if s.true_label == 0 || s.true_label > n_labels {
                return Err(Error::Validation(format!(
                    "sample {}: true label {} outside [1, {n_labels}]",
                    s.id, s.true_label
                )));
            }
            if index.insert(s.id.clone(), pos).is_some() {
                return Err(Error::Validation(format!("duplicate sample_id {}", s.id)));
            }
        }
        Ok(Self {
            n_labels,
            samples,
            index,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    /// Splits the table into a calibration set built from `member_ids` and
    /// the remaining evaluation pool.
    pub fn split(&self, member_ids: &[String]) -> Result<(CalibrationSet, ScoreTable)> {
        let members: HashSet<&str> = member_ids.iter().map(String::as_str).collect();
        if members.len() != member_ids.len() {
            return Err(Error::Validation(
                "calibration membership lists a sample twice".into(),
            ));
        }
        let mut scores = Vec::with_capacity(member_ids.len());
        for id in member_ids {
            let s = self.get(id).ok_or_else(|| {
                Error::Validation(format!("calibration member {id} is not in the score table"))
            })?;
            scores.push(s.true_score());
        }
        let pool: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| !members.contains(s.id.as_str()))
            .cloned()
            .collect();
        let calibration = CalibrationSet::new(scores, member_ids.to_vec())?;
        Ok((calibration, ScoreTable::new(self.n_labels, pool)?))
    }

    /// Classifier top-1 accuracy over the table.
    pub fn classifier_accuracy(&self) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::domain("classifier accuracy of an empty table"));
        }
        let hits = self
            .samples
            .iter()
            .filter(|s| s.argmax_label() == s.true_label)
            .count();
        Ok(hits as f64 / self.samples.len() as f64)
    }
}

/// Sorted conformal scores of the calibration members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    scores: Vec<f64>,
    member_ids: Vec<String>,
}

impl CalibrationSet {
    pub fn new(mut scores: Vec<f64>, member_ids: Vec<String>) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!(
                "calibration score {s} outside [0, 1]"
            )));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self { scores, member_ids })
    }

    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        Self::new(scores, Vec::new())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn member_ids(&self) -> &[String] {
        &self.member_ids
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// The `m` coverage parameters induced by a calibration set, with their
/// quantile thresholds. Arms are indexed `0..m` in ascending α.
#[derive(Debug, Clone)]
pub struct AlphaGrid {
    alphas: Vec<f64>,
    thresholds: Vec<f64>,
    members: HashSet<String>,
}

const GRID_TOL: f64 = 1e-12;

impl AlphaGrid {
    pub fn m(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn alpha(&self, arm: usize) -> f64 {
        self.alphas[arm]
    }

    pub fn threshold(&self, arm: usize) -> f64 {
        self.thresholds[arm]
    }

    /// Arm index of an exact grid value.
    pub fn arm_of(&self, alpha: f64) -> Result<usize> {
        let m = self.m() as f64;
        let j = (alpha * (m + 1.0)).round() - 1.0;
        if j >= 0.0 && j < m {
            let j = j as usize;
            if (self.alphas[j] - alpha).abs() <= GRID_TOL {
                return Ok(j);
            }
        }
        Err(Error::domain(format!("alpha {alpha} is not a grid value")))
    }

    /// Largest grid arm whose α does not exceed `alpha`; `None` below the grid.
    pub fn round_down(&self, alpha: f64) -> Option<usize> {
        let k = self.alphas.partition_point(|&a| a <= alpha + GRID_TOL);
        k.checked_sub(1)
    }

    /// First arm at which a label with conformal score `score` leaves the
    /// prediction set; `m` if it stays in every set.
    pub fn exit_arm(&self, score: f64) -> usize {
        self.thresholds.partition_point(|&q| q >= score)
    }

    /// Labels of `sample` in the prediction set of `arm`.
    pub fn set_for_arm(&self, sample: &Sample, arm: usize) -> PredictionSet {
        let q = self.thresholds[arm];
        let labels = sample
            .probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| 1.0 - p <= q)
            .map(|(i, _)| i + 1)
            .collect();
        PredictionSet {
            labels,
            arm,
            alpha: self.alphas[arm],
            sample_id: sample.id.clone(),
        }
    }

    /// First arm whose set for `sample` is empty; `m` if none is.
    pub fn empty_arm(&self, sample: &Sample) -> usize {
        let best = sample.probs.iter().copied().fold(0.0_f64, f64::max);
        self.exit_arm(1.0 - best)
    }

    pub fn is_member(&self, sample_id: &str) -> bool {
        self.members.contains(sample_id)
    }
}

/// A label subset offered for one sample under one grid value. May be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// Ascending, 1-based.
    pub labels: Vec<usize>,
    pub arm: usize,
    pub alpha: f64,
    pub sample_id: String,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    /// Dash-joined ascending labels; empty string for the empty set.
    pub fn signature(&self) -> String {
        signature_of(&self.labels)
    }

    /// Labels the expert may choose from: the set itself, or every label
    /// when the set is empty.
    pub fn menu(&self, n_labels: usize) -> Vec<usize> {
        if self.labels.is_empty() {
            (1..=n_labels).collect()
        } else {
            self.labels.clone()
        }
    }
}

pub fn signature_of(labels: &[usize]) -> String {
    labels
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Coverage tolerance and failure probability of the PAC statement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacParams {
    epsilon: f64,
    delta: f64,
}

impl PacParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(epsilon) || !open(delta) {
            return Err(Error::domain(format!(
                "PAC parameters must lie in (0, 1), got epsilon={epsilon}, delta={delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// `1 - probs[label]`, with `label` 1-based.
pub fn conformal_score(probs: &[f64], label: usize) -> Result<f64> {
    if label == 0 || label > probs.len() {
        return Err(Error::domain(format!(
            "label {label} outside [1, {}]",
            probs.len()
        )));
    }
    Ok(1.0 - probs[label - 1])
}

pub fn build_grid(calibration: &CalibrationSet) -> Result<AlphaGrid> {
    let m = calibration.len();
    if m == 0 {
        return Err(Error::Construction("empty calibration set".into()));
    }
    let denom = (m + 1) as f64;
    let alphas = (1..=m).map(|k| k as f64 / denom).collect();
    // ceil((m + 1)(1 - alpha_i)) = i, so arm j (alpha_{m-j}) takes the
    // (m - j)-th order statistic.
    let thresholds = (0..m).map(|j| calibration.scores[m - 1 - j]).collect();
    Ok(AlphaGrid {
        alphas,
        thresholds,
        members: calibration.member_ids.iter().cloned().collect(),
    })
}

pub fn prediction_set(
    probs: &[f64],
    alpha: f64,
    grid: &AlphaGrid,
) -> Result<PredictionSet> {
    let arm = grid.arm_of(alpha)?;
    let sample = Sample {
        id: String::new(),
        probs: probs.to_vec(),
        true_label: 1,
    };
    Ok(grid.set_for_arm(&sample, arm))
}

/// Arm index of the smallest α whose set excludes `true_label`, or `None`
/// when the label is in every set on the grid.
pub fn alpha_dagger(probs: &[f64], true_label: usize, grid: &AlphaGrid) -> Result<Option<usize>> {
    let s = conformal_score(probs, true_label)?;
    let j = grid.exit_arm(s);
    Ok((j < grid.m()).then_some(j))
}

/// Smallest calibration size for which a two-sided Hoeffding bound gives
/// coverage within ±ε with probability `1 - δ`.
pub fn pac_calibration_size(params: PacParams) -> usize {
    let eps = params.epsilon;
    ((2.0 / params.delta).ln() / (2.0 * eps * eps)).ceil() as usize
}

/// Fraction of `pool` whose true label is in the set of `arm`.
pub fn empirical_coverage(grid: &AlphaGrid, arm: usize, pool: &ScoreTable) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::domain("empirical coverage over an empty pool"));
    }
    if arm >= grid.m() {
        return Err(Error::domain(format!("arm {arm} outside grid of {}", grid.m())));
    }
    if let Some(s) = pool.samples().iter().find(|s| grid.is_member(&s.id)) {
        return Err(Error::Validation(format!(
            "evaluation sample {} is a calibration member",
            s.id
        )));
    }
    let q = grid.threshold(arm);
    let covered = pool
        .samples()
        .iter()
        .filter(|s| s.true_score() <= q)
        .count();
    Ok(covered as f64 / pool.len() as f64)
}
