//! Expert prediction oracles.
//!
//! Every expert answers one question: given a sample, the prediction set on
//! screen, and the round's exogenous noise, which label is picked? Strict
//! experts pick from the set, or from every label when the set is empty.
//!
//! The monotone simulator shares one uniform draw `u` across all sets of a
//! round and succeeds iff `u <= p(|menu|)` with `p` nonincreasing, so success
//! on a larger covering set implies success on every smaller covering set.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{signature_of, AlphaGrid, PredictionSet, Sample};
use crate::error::{Error, Result};

/// Per-round noise: `u` drives success, `v_seed` drives every other draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertExogenous {
    pub u: f64,
    pub v_seed: u64,
}

impl ExpertExogenous {
    pub fn new(u: f64, v_seed: u64) -> Self {
        Self { u, v_seed }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.v_seed)
    }
}

/// Success probability by menu size, given the true label is on the menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SuccessCurve {
    /// `p(k) = max(floor, 1 - slope * (k - 1))`, with `p(1) = 1`.
    Linear { slope: f64, floor: f64 },
    /// `p[k - 1]`; sizes past the end reuse the last entry.
    Table { p: Vec<f64> },
}

/// Expert alone on 16 labels succeeds with probability 0.76.
impl Default for SuccessCurve {
    fn default() -> Self {
        SuccessCurve::Linear {
            slope: 0.03,
            floor: 0.76,
        }
    }
}

impl SuccessCurve {
    pub fn linear(slope: f64, floor: f64) -> Result<Self> {
        let c = SuccessCurve::Linear { slope, floor };
        c.validate()?;
        Ok(c)
    }

    pub fn table(p: Vec<f64>) -> Result<Self> {
        let c = SuccessCurve::Table { p };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SuccessCurve::Linear { slope, floor } => {
                if slope.is_nan() || *slope < 0.0 || !(0.0..=1.0).contains(floor) {
                    return Err(Error::domain(format!(
                        "linear curve needs slope >= 0 and floor in [0, 1], got {slope}, {floor}"
                    )));
                }
            }
            SuccessCurve::Table { p } => {
                if p.first() != Some(&1.0) {
                    return Err(Error::domain("success table must start at p(1) = 1"));
                }
                if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::domain("success table entries must lie in [0, 1]"));
                }
                if p.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::domain("success table must be nonincreasing"));
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, k: usize) -> f64 {
        if k <= 1 {
            return 1.0;
        }
        match self {
            SuccessCurve::Linear { slope, floor } => {
                (1.0 - slope * (k - 1) as f64).max(*floor).clamp(0.0, 1.0)
            }
            SuccessCurve::Table { p } => p[(k - 1).min(p.len() - 1)],
        }
    }

    /// `1 - d * (1 - p(k))`: difficulty `d` scales the failure mass and keeps
    /// the curve nonincreasing with `p(1) = 1`.
    pub fn prob_with_difficulty(&self, k: usize, difficulty: f64) -> f64 {
        (1.0 - difficulty * (1.0 - self.prob(k))).clamp(0.0, 1.0)
    }
}

/// Strict or lenient presentation of the prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Strict,
    Lenient,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Strict => "strict",
            Mode::Lenient => "lenient",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Mode::Strict),
            "lenient" => Ok(Mode::Lenient),
            other => Err(Error::domain(format!("unknown mode {other:?}"))),
        }
    }
}

/// Where an expert's per-arm accuracy comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    MonteCarlo,
    ReplayEmpirical,
}

pub trait Expert: Sync {
    fn predict(&self, sample: &Sample, set: &PredictionSet, exo: &ExpertExogenous)
        -> Result<usize>;

    /// Expected reward of serving `set` for `sample`.
    fn success_probability(&self, sample: &Sample, set: &PredictionSet) -> Result<f64>;

    fn provenance(&self) -> Provenance;

    fn n_labels(&self) -> usize;
}

fn wrong_label(menu: &[usize], true_label: usize, exo: &ExpertExogenous) -> usize {
    let candidates: Vec<usize> = menu.iter().copied().filter(|&l| l != true_label).collect();
    let pool = if candidates.is_empty() { menu } else { &candidates };
    *pool
        .choose(&mut exo.rng())
        .expect("menus are never empty")
}

/// Threshold rule on the shared draw: success iff the true label is on the
/// menu and `u <= p(|menu|)`; otherwise a uniformly drawn wrong menu label.
pub fn monotone_expert_predict(
    sample: &Sample,
    set: &PredictionSet,
    exo: &ExpertExogenous,
    curve: &SuccessCurve,
) -> usize {
    predict_with_prob(sample, set, exo, |k| curve.prob(k))
}

fn predict_with_prob(
    sample: &Sample,
    set: &PredictionSet,
    exo: &ExpertExogenous,
    prob: impl Fn(usize) -> f64,
) -> usize {
    let menu = set.menu(sample.probs.len());
    let y = sample.true_label;
    if menu.contains(&y) && exo.u <= prob(menu.len()) {
        y
    } else {
        wrong_label(&menu, y, exo)
    }
}

/// SCM-style simulator satisfying counterfactual monotonicity by construction.
#[derive(Debug, Clone)]
pub struct MonotoneExpert {
    pub curve: SuccessCurve,
    pub n_labels: usize,
    /// Optional per-sample difficulty; samples not listed use 1.0.
    pub difficulty: HashMap<String, f64>,
}

impl MonotoneExpert {
    pub fn new(curve: SuccessCurve, n_labels: usize) -> Self {
        Self {
            curve,
            n_labels,
            difficulty: HashMap::new(),
        }
    }

    fn prob_for(&self, sample: &Sample, k: usize) -> f64 {
        match self.difficulty.get(&sample.id) {
            Some(&d) => self.curve.prob_with_difficulty(k, d),
            None => self.curve.prob(k),
        }
    }
}

impl Expert for MonotoneExpert {
    fn predict(
        &self,
        sample: &Sample,
        set: &PredictionSet,
        exo: &ExpertExogenous,
    ) -> Result<usize> {
        Ok(predict_with_prob(sample, set, exo, |k| self.prob_for(sample, k)))
    }

    fn success_probability(&self, sample: &Sample, set: &PredictionSet) -> Result<f64> {
        let menu = set.menu(self.n_labels);
        Ok(if menu.contains(&sample.true_label) {
            self.prob_for(sample, menu.len())
        } else {
            0.0
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn n_labels(&self) -> usize {
        self.n_labels
    }
}

/// Breaks counterfactual monotonicity on a designated subset of samples,
/// where success probability grows linearly from `min_success` at size 1
/// to 1 at the full label set.
#[derive(Debug, Clone)]
pub struct AdversarialExpert {
    pub curve: SuccessCurve,
    pub n_labels: usize,
    pub designated: HashSet<String>,
    pub min_success: f64,
}

impl AdversarialExpert {
    pub fn inverted_prob(&self, k: usize) -> f64 {
        if self.n_labels <= 1 {
            return 1.0;
        }
        let frac = (k.max(1) - 1) as f64 / (self.n_labels - 1) as f64;
        self.min_success + (1.0 - self.min_success) * frac.min(1.0)
    }
}

/// On the designated subset a failed draw on the menu `{y}` has no wrong
/// label to pick, so the adversary picks outside the menu; elsewhere it is
/// the monotone expert.
pub fn adversarial_expert_predict(
    expert: &AdversarialExpert,
    sample: &Sample,
    set: &PredictionSet,
    exo: &ExpertExogenous,
) -> usize {
    if !expert.designated.contains(&sample.id) {
        return monotone_expert_predict(sample, set, exo, &expert.curve);
    }
    let menu = set.menu(expert.n_labels);
    let y = sample.true_label;
    if menu.contains(&y) && exo.u <= expert.inverted_prob(menu.len()) {
        return y;
    }
    if menu.len() == 1 && menu[0] == y && expert.n_labels > 1 {
        let all: Vec<usize> = (1..=expert.n_labels).collect();
        return wrong_label(&all, y, exo);
    }
    wrong_label(&menu, y, exo)
}

impl Expert for AdversarialExpert {
    fn predict(
        &self,
        sample: &Sample,
        set: &PredictionSet,
        exo: &ExpertExogenous,
    ) -> Result<usize> {
        Ok(adversarial_expert_predict(self, sample, set, exo))
    }

    fn success_probability(&self, sample: &Sample, set: &PredictionSet) -> Result<f64> {
        let menu = set.menu(self.n_labels);
        if !menu.contains(&sample.true_label) {
            return Ok(0.0);
        }
        Ok(if self.designated.contains(&sample.id) {
            self.inverted_prob(menu.len())
        } else {
            self.curve.prob(menu.len())
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn n_labels(&self) -> usize {
        self.n_labels
    }
}

/// One logged human prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub sample_id: String,
    /// Ascending labels of the set shown; empty for the empty set.
    pub set_signature: Vec<usize>,
    pub predicted_label: usize,
    pub mode: Mode,
    /// Participant identifier, when the log carries one.
    pub expert_id: Option<String>,
}

type LogKey = (String, String, Mode);

/// Logged predictions indexed by (sample_id, set signature, mode).
#[derive(Debug, Clone, Default)]
pub struct PredictionLog {
    records: Vec<LogRecord>,
    index: HashMap<LogKey, Vec<usize>>,
}

impl PredictionLog {
    pub fn new(records: Vec<LogRecord>) -> Result<Self> {
        let mut index: HashMap<LogKey, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.set_signature.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!(
                    "record {i}: set signature must be strictly ascending"
                )));
            }
            if r.mode == Mode::Strict
                && !r.set_signature.is_empty()
                && r.set_signature.binary_search(&r.predicted_label).is_err()
            {
                return Err(Error::Validation(format!(
                    "record {i}: strict prediction {} outside set [{}] for sample {}",
                    r.predicted_label,
                    signature_of(&r.set_signature),
                    r.sample_id
                )));
            }
            index
                .entry((r.sample_id.clone(), signature_of(&r.set_signature), r.mode))
                .or_default()
                .push(i);
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_mode(&self, mode: Mode) -> bool {
        self.records.iter().any(|r| r.mode == mode)
    }

    /// Checks every label against `n_labels`.
    pub fn validate_labels(&self, n_labels: usize) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let bad = |l: usize| l == 0 || l > n_labels;
            if bad(r.predicted_label) || r.set_signature.iter().any(|&l| bad(l)) {
                return Err(Error::Validation(format!(
                    "record {i}: label outside [1, {n_labels}]"
                )));
            }
        }
        Ok(())
    }

    /// Records for the set as displayed. An empty set is displayed as the
    /// full label set; records logged under either signature match.
    pub fn lookup(
        &self,
        sample_id: &str,
        labels: &[usize],
        n_labels: usize,
        mode: Mode,
    ) -> Option<Vec<&LogRecord>> {
        let mut keys = Vec::with_capacity(2);
        if labels.is_empty() {
            keys.push(signature_of(&(1..=n_labels).collect::<Vec<_>>()));
            keys.push(String::new());
        } else {
            keys.push(signature_of(labels));
        }
        let mut out = Vec::new();
        for k in keys {
            if let Some(ix) = self.index.get(&(sample_id.to_string(), k, mode)) {
                out.extend(ix.iter().map(|&i| &self.records[i]));
            }
        }
        (!out.is_empty()).then_some(out)
    }

    /// Display signature used when reporting a missing pair.
    pub fn display_signature(labels: &[usize], n_labels: usize) -> String {
        if labels.is_empty() {
            signature_of(&(1..=n_labels).collect::<Vec<_>>())
        } else {
            signature_of(labels)
        }
    }
}

/// The logged prediction for the displayed set; duplicates are chosen
/// uniformly with the round's seed.
pub fn replay_predict(
    log: &PredictionLog,
    sample_id: &str,
    set: &PredictionSet,
    mode: Mode,
    n_labels: usize,
    exo: &ExpertExogenous,
) -> Result<usize> {
    let records = log
        .lookup(sample_id, &set.labels, n_labels, mode)
        .ok_or_else(|| Error::ReplayCoverage {
            missing: vec![(
                sample_id.to_string(),
                PredictionLog::display_signature(&set.labels, n_labels),
            )],
        })?;
    let rec = records
        .choose(&mut exo.rng())
        .expect("lookup never returns an empty list");
    Ok(rec.predicted_label)
}

/// Replays a prediction log in one mode.
#[derive(Debug, Clone)]
pub struct ReplayExpert {
    pub log: PredictionLog,
    pub mode: Mode,
    pub n_labels: usize,
}

impl Expert for ReplayExpert {
    fn predict(
        &self,
        sample: &Sample,
        set: &PredictionSet,
        exo: &ExpertExogenous,
    ) -> Result<usize> {
        replay_predict(&self.log, &sample.id, set, self.mode, self.n_labels, exo)
    }

    fn success_probability(&self, sample: &Sample, set: &PredictionSet) -> Result<f64> {
        let records = self
            .log
            .lookup(&sample.id, &set.labels, self.n_labels, self.mode)
            .ok_or_else(|| Error::ReplayCoverage {
                missing: vec![(
                    sample.id.clone(),
                    PredictionLog::display_signature(&set.labels, self.n_labels),
                )],
            })?;
        let hits = records
            .iter()
            .filter(|r| r.predicted_label == sample.true_label)
            .count();
        Ok(hits as f64 / records.len() as f64)
    }

    fn provenance(&self) -> Provenance {
        Provenance::ReplayEmpirical
    }

    fn n_labels(&self) -> usize {
        self.n_labels
    }
}

/// Reward bit of every arm under the same exogenous noise, by brute force.
pub fn counterfactual_rewards(
    expert: &dyn Expert,
    sample: &Sample,
    exo: &ExpertExogenous,
    grid: &AlphaGrid,
) -> Result<Vec<bool>> {
    (0..grid.m())
        .map(|arm| {
            let set = grid.set_for_arm(sample, arm);
            Ok(expert.predict(sample, &set, exo)? == sample.true_label)
        })
        .collect()
}

/// [`counterfactual_rewards`] for the monotone simulator.
pub fn counterfactual_oracle(
    sample: &Sample,
    exo: &ExpertExogenous,
    curve: &SuccessCurve,
    grid: &AlphaGrid,
) -> Vec<bool> {
    (0..grid.m())
        .map(|arm| {
            let set = grid.set_for_arm(sample, arm);
            monotone_expert_predict(sample, &set, exo, curve) == sample.true_label
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{build_grid, CalibrationSet};

    fn sample(probs: Vec<f64>, y: usize) -> Sample {
        Sample {
            id: "s".into(),
            probs,
            true_label: y,
        }
    }

    fn set(labels: Vec<usize>) -> PredictionSet {
        PredictionSet {
            labels,
            arm: 0,
            alpha: 0.5,
            sample_id: "s".into(),
        }
    }

    #[test]
    fn default_curve_shape() {
        let c = SuccessCurve::default();
        assert_eq!(c.prob(1), 1.0);
        assert!((c.prob(2) - 0.97).abs() < 1e-12);
        assert_eq!(c.prob(16), 0.76);
        assert!(SuccessCurve::table(vec![0.9, 0.8]).is_err());
        assert!(SuccessCurve::table(vec![1.0, 0.5, 0.6]).is_err());
        let t = SuccessCurve::table(vec![1.0, 0.5]).unwrap();
        assert_eq!(t.prob(7), 0.5);
        assert_eq!(c.prob_with_difficulty(1, 3.0), 1.0);
    }

    #[test]
    fn singleton_is_forced() {
        let s = sample(vec![0.5, 0.3, 0.2], 2);
        let c = SuccessCurve::default();
        for u in [0.0, 0.5, 0.999, 1.0] {
            let exo = ExpertExogenous::new(u, 7);
            assert_eq!(monotone_expert_predict(&s, &set(vec![2]), &exo, &c), 2);
        }
    }

    #[test]
    fn absent_truth_always_fails() {
        let s = sample(vec![0.5, 0.3, 0.2], 3);
        let c = SuccessCurve::default();
        for seed in 0..50 {
            let exo = ExpertExogenous::new(0.0, seed);
            let pick = monotone_expert_predict(&s, &set(vec![1, 2]), &exo, &c);
            assert_ne!(pick, 3);
            assert!([1, 2].contains(&pick));
        }
    }

    #[test]
    fn threshold_rule() {
        let s = sample(vec![0.4, 0.3, 0.3], 1);
        let c = SuccessCurve::table(vec![1.0, 0.8, 0.5]).unwrap();
        let exo = ExpertExogenous::new(0.2, 1);
        assert_eq!(monotone_expert_predict(&s, &set(vec![1, 2, 3]), &exo, &c), 1);
        let exo = ExpertExogenous::new(0.6, 1);
        assert_ne!(monotone_expert_predict(&s, &set(vec![1, 2, 3]), &exo, &c), 1);
    }

    #[test]
    fn empty_set_uses_full_menu() {
        let s = sample(vec![0.4, 0.3, 0.3], 3);
        let c = SuccessCurve::table(vec![1.0, 1.0, 1.0]).unwrap();
        let exo = ExpertExogenous::new(0.5, 1);
        assert_eq!(monotone_expert_predict(&s, &set(vec![]), &exo, &c), 3);
    }

    fn grid5() -> AlphaGrid {
        build_grid(&CalibrationSet::from_scores(vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap()).unwrap()
    }

    #[test]
    fn oracle_examples() {
        let g = grid5();
        let c = SuccessCurve::default();
        // true score 0.05: y in every set (thresholds >= 0.1)
        let s = sample(vec![0.95, 0.55, 0.6], 1);
        let bits = counterfactual_oracle(&s, &ExpertExogenous::new(0.0, 3), &c, &g);
        assert_eq!(bits, vec![true; 5]);
        // true score 0.99 with other labels inside: y in no set
        let s = sample(vec![0.01, 0.95, 0.6], 1);
        let bits = counterfactual_oracle(&s, &ExpertExogenous::new(0.0, 3), &c, &g);
        assert_eq!(bits, vec![false; 5]);
    }

    #[test]
    fn oracle_switch_pattern() {
        // scores: label1 0.35 (exits at arm 2), label2 0.45 (exits at 1),
        // label3 0.15 (exits at 4); set sizes by arm: 3, 2, 1, 1, 0
        let g = grid5();
        let s = sample(vec![0.65, 0.55, 0.85], 1);
        let sizes: Vec<_> = (0..5).map(|j| g.set_for_arm(&s, j).len()).collect();
        assert_eq!(sizes, vec![3, 2, 1, 1, 0]);
        let c = SuccessCurve::table(vec![1.0, 0.6, 0.3]).unwrap();
        // u between p(3) and p(2): fail at arm 0, succeed at arm 1, then y exits
        let bits = counterfactual_oracle(&s, &ExpertExogenous::new(0.45, 9), &c, &g);
        assert_eq!(&bits[..3], &[false, true, false]);
        assert!(!bits[3]);
    }

    fn adversary(designated: bool) -> AdversarialExpert {
        AdversarialExpert {
            curve: SuccessCurve::default(),
            n_labels: 4,
            designated: if designated {
                ["s".to_string()].into_iter().collect()
            } else {
                HashSet::new()
            },
            min_success: 0.3,
        }
    }

    #[test]
    fn adversarial_examples() {
        let s = sample(vec![0.4, 0.3, 0.2, 0.1], 2);
        let a = adversary(true);
        assert!((a.inverted_prob(1) - 0.3).abs() < 1e-12);
        let pick = adversarial_expert_predict(&a, &s, &set(vec![2]), &ExpertExogenous::new(0.5, 4));
        assert_ne!(pick, 2);
        let off = adversary(false);
        let pick =
            adversarial_expert_predict(&off, &s, &set(vec![2]), &ExpertExogenous::new(0.5, 4));
        assert_eq!(pick, 2);
        let pick = adversarial_expert_predict(
            &a,
            &s,
            &set(vec![1, 2, 3, 4]),
            &ExpertExogenous::new(0.1, 4),
        );
        assert_eq!(pick, 2);
    }

    fn rec(id: &str, sig: Vec<usize>, pred: usize, mode: Mode) -> LogRecord {
        LogRecord {
            sample_id: id.into(),
            set_signature: sig,
            predicted_label: pred,
            mode,
            expert_id: None,
        }
    }

    #[test]
    fn replay_examples() {
        let log = PredictionLog::new(vec![
            rec("s", vec![1, 2], 2, Mode::Strict),
            rec("s", vec![1, 2], 3, Mode::Lenient),
            rec("s", vec![], 3, Mode::Strict),
        ])
        .unwrap();
        let exo = ExpertExogenous::new(0.5, 11);
        let s = set(vec![1, 2]);
        assert_eq!(replay_predict(&log, "s", &s, Mode::Strict, 3, &exo).unwrap(), 2);
        assert_eq!(replay_predict(&log, "s", &s, Mode::Lenient, 3, &exo).unwrap(), 3);
        assert_eq!(
            replay_predict(&log, "s", &set(vec![]), Mode::Strict, 3, &exo).unwrap(),
            3
        );
        let err = replay_predict(&log, "s", &set(vec![1]), Mode::Strict, 3, &exo).unwrap_err();
        match err {
            Error::ReplayCoverage { missing } => {
                assert_eq!(missing, vec![("s".to_string(), "1".to_string())])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strict_record_outside_set_rejected() {
        let err = PredictionLog::new(vec![rec("s", vec![1, 2], 3, Mode::Strict)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn replay_duplicates_are_seeded() {
        let log = PredictionLog::new(vec![
            rec("s", vec![1, 2, 3], 1, Mode::Strict),
            rec("s", vec![1, 2, 3], 2, Mode::Strict),
            rec("s", vec![1, 2, 3], 3, Mode::Strict),
        ])
        .unwrap();
        let s = set(vec![1, 2, 3]);
        let run = |seed: u64| -> Vec<usize> {
            (0..20)
                .map(|i| {
                    let exo = ExpertExogenous::new(0.0, seed * 1000 + i);
                    replay_predict(&log, "s", &s, Mode::Strict, 3, &exo).unwrap()
                })
                .collect()
        };
        assert_eq!(run(5), run(5));
        let picks = run(5);
        assert!(picks.iter().collect::<HashSet<_>>().len() > 1);
    }
}
