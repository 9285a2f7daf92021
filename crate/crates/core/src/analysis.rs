//! Accuracy oracles, regret aggregation and the observational analyses of
//! logged predictions.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{compute_regret, Trajectory};
use crate::conformal::{AlphaGrid, ScoreTable};
use crate::error::{Error, Result};
use crate::expert::{Expert, ExpertExogenous, Mode, PredictionLog, Provenance};

/// z for a two-sided 95% normal band.
pub const Z95: f64 = 1.959963984540054;

/// Expected accuracy of every arm over an evaluation pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmAccuracyTable {
    pub alphas: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// Standard error of the pool average.
    pub stderr: Vec<f64>,
    pub n: usize,
    pub provenance: Provenance,
}

impl ArmAccuracyTable {
    /// α* as an arm index; ties toward the smaller α.
    pub fn best_arm(&self) -> usize {
        let mut best = 0;
        for (a, &acc) in self.accuracy.iter().enumerate() {
            if acc > self.accuracy[best] {
                best = a;
            }
        }
        best
    }

    pub fn best_accuracy(&self) -> f64 {
        self.accuracy[self.best_arm()]
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Exact per-arm accuracy: the expert's success probability on each
/// sample's displayed set, averaged over the pool. Replay experts report
/// every missing (sample, set) pair at once.
pub fn arm_accuracy_oracle(
    grid: &AlphaGrid,
    expert: &dyn Expert,
    pool: &ScoreTable,
) -> Result<ArmAccuracyTable> {
    if pool.is_empty() {
        return Err(Error::domain("accuracy oracle over an empty pool"));
    }
    let m = grid.m();
    let mut per_arm = vec![Vec::with_capacity(pool.len()); m];
    let mut missing = Vec::new();
    for s in pool.samples() {
        for (arm, col) in per_arm.iter_mut().enumerate() {
            let set = grid.set_for_arm(s, arm);
            match expert.success_probability(s, &set) {
                Ok(p) => col.push(p),
                Err(Error::ReplayCoverage { missing: pairs }) => missing.extend(pairs),
                Err(e) => return Err(e),
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::ReplayCoverage { missing });
    }
    let (accuracy, stderr) = per_arm.iter().map(|c| mean_and_stderr(c)).unzip();
    Ok(ArmAccuracyTable {
        alphas: grid.alphas().to_vec(),
        accuracy,
        stderr,
        n: pool.len(),
        provenance: expert.provenance(),
    })
}

/// Per-arm accuracy estimated by simulation, `draws` noise draws per sample
/// shared across arms.
pub fn monte_carlo_accuracy(
    grid: &AlphaGrid,
    expert: &dyn Expert,
    pool: &ScoreTable,
    draws: usize,
    seed: u64,
) -> Result<ArmAccuracyTable> {
    if pool.is_empty() || draws == 0 {
        return Err(Error::domain("Monte Carlo accuracy needs samples and draws"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = grid.m();
    let total = pool.len() * draws;
    let mut hits = vec![Vec::with_capacity(total); m];
    for s in pool.samples() {
        let sets: Vec<_> = (0..m).map(|a| grid.set_for_arm(s, a)).collect();
        for _ in 0..draws {
            let exo = ExpertExogenous::new(rng.random(), rng.random());
            for (a, set) in sets.iter().enumerate() {
                let ok = expert.predict(s, set, &exo)? == s.true_label;
                hits[a].push(if ok { 1.0 } else { 0.0 });
            }
        }
    }
    let (accuracy, stderr) = hits.iter().map(|c| mean_and_stderr(c)).unzip();
    Ok(ArmAccuracyTable {
        alphas: grid.alphas().to_vec(),
        accuracy,
        stderr,
        n: total,
        provenance: Provenance::MonteCarlo,
    })
}

/// Pointwise mean and standard error of regret curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub realizations: usize,
}

impl RegretSummary {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_stderr(&self) -> f64 {
        self.stderr.last().copied().unwrap_or(0.0)
    }
}

pub fn aggregate_curves(curves: &[Vec<f64>]) -> Result<RegretSummary> {
    let first = curves
        .first()
        .ok_or_else(|| Error::domain("no regret curves to aggregate"))?;
    let horizon = first.len();
    if curves.iter().any(|c| c.len() != horizon) {
        return Err(Error::domain("regret curves have different horizons"));
    }
    let mut mean = Vec::with_capacity(horizon);
    let mut stderr = Vec::with_capacity(horizon);
    let mut column = Vec::with_capacity(curves.len());
    for t in 0..horizon {
        column.clear();
        column.extend(curves.iter().map(|c| c[t]));
        let (mu, se) = mean_and_stderr(&column);
        mean.push(mu);
        stderr.push(se);
    }
    Ok(RegretSummary {
        mean,
        stderr,
        realizations: curves.len(),
    })
}

/// Regret of each trajectory against `table`, then [`aggregate_curves`].
pub fn aggregate_regret(trajectories: &[Trajectory], table: &ArmAccuracyTable) -> Result<RegretSummary> {
    let curves = trajectories
        .iter()
        .map(|tr| compute_regret(tr, &table.accuracy))
        .collect::<Result<Vec<_>>>()?;
    aggregate_curves(&curves)
}

/// Assigns each item to one of `k` difficulty strata by nearest-rank
/// percentile of its success probability, stratum 0 hardest. Ties are
/// ordered by id, so equal values may straddle a boundary.
pub fn stratify_samples(success: &[(String, f64)], k: usize) -> Result<Vec<usize>> {
    let n = success.len();
    if k == 0 || n < k {
        return Err(Error::domain(format!(
            "cannot split {n} samples into {k} strata"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        success[a]
            .1
            .total_cmp(&success[b].1)
            .then_with(|| success[a].0.cmp(&success[b].0))
    });
    let mut strata = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        // smallest s with rank + 1 <= ceil((s + 1) n / k)
        let r = rank + 1;
        strata[i] = (0..k).find(|&s| r <= ((s + 1) * n).div_ceil(k)).unwrap_or(k - 1);
    }
    Ok(strata)
}

/// Empirical success probability per sample over the log's records in `mode`.
pub fn per_sample_success(
    log: &PredictionLog,
    table: &ScoreTable,
    mode: Mode,
) -> Result<Vec<(String, f64)>> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in log.records().iter().filter(|r| r.mode == mode) {
        let s = table
            .get(&r.sample_id)
            .ok_or_else(|| Error::Validation(format!("log sample {} not in table", r.sample_id)))?;
        let e = tally.entry(r.sample_id.as_str()).or_default();
        e.0 += (r.predicted_label == s.true_label) as usize;
        e.1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|(id, (hit, n))| (id.to_string(), hit as f64 / n as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Competence {
    High,
    Low,
}

/// Median split of participants by empirical success; ties at the median
/// go to the high group.
pub fn competence_groups(
    log: &PredictionLog,
    table: &ScoreTable,
    mode: Mode,
) -> Result<HashMap<String, Competence>> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in log.records().iter().filter(|r| r.mode == mode) {
        let id = r
            .expert_id
            .as_deref()
            .ok_or_else(|| Error::domain("competence split needs expert ids in the log"))?;
        let s = table
            .get(&r.sample_id)
            .ok_or_else(|| Error::Validation(format!("log sample {} not in table", r.sample_id)))?;
        let e = tally.entry(id).or_default();
        e.0 += (r.predicted_label == s.true_label) as usize;
        e.1 += 1;
    }
    if tally.is_empty() {
        return Err(Error::domain("no participants to split"));
    }
    let mut rates: Vec<(&str, f64)> = tally
        .into_iter()
        .map(|(id, (h, n))| (id, h as f64 / n as f64))
        .collect();
    rates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let high = rates.len().div_ceil(2);
    let cutoff = rates[high - 1].1;
    Ok(rates
        .into_iter()
        .map(|(id, r)| {
            let g = if r >= cutoff { Competence::High } else { Competence::Low };
            (id.to_string(), g)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub set_size: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Success probability per set size for one slice of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: Option<usize>,
    pub competence: Option<Competence>,
    /// Sizes with no observations are absent.
    pub rows: Vec<SizeRow>,
    /// Some larger set beats the next smaller one by more than two
    /// combined standard errors.
    pub flagged_increasing: bool,
}

fn proportion_stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Slice of a log to analyse by set size.
#[derive(Debug, Clone, Default)]
pub struct SizeQuery<'a> {
    pub stratum: Option<(usize, &'a HashSet<String>)>,
    pub competence: Option<(Competence, &'a HashMap<String, Competence>)>,
}

/// Success per set size over records whose set contains the true label.
pub fn success_vs_set_size(
    log: &PredictionLog,
    table: &ScoreTable,
    mode: Mode,
    query: SizeQuery<'_>,
) -> Result<StratumReport> {
    let mut by_size: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in log.records().iter().filter(|r| r.mode == mode) {
        if let Some((_, ids)) = query.stratum {
            if !ids.contains(&r.sample_id) {
                continue;
            }
        }
        if let Some((want, groups)) = query.competence {
            let id = r
                .expert_id
                .as_deref()
                .ok_or_else(|| Error::domain("competence split needs expert ids in the log"))?;
            if groups.get(id) != Some(&want) {
                continue;
            }
        }
        let s = table
            .get(&r.sample_id)
            .ok_or_else(|| Error::Validation(format!("log sample {} not in table", r.sample_id)))?;
        if r.set_signature.binary_search(&s.true_label).is_err() {
            continue;
        }
        let e = by_size.entry(r.set_signature.len()).or_default();
        e.0 += (r.predicted_label == s.true_label) as usize;
        e.1 += 1;
    }
    if by_size.is_empty() {
        return Err(Error::domain("no covering records in the requested slice"));
    }
    let rows: Vec<SizeRow> = by_size
        .into_iter()
        .map(|(size, (hit, n))| {
            let mean = hit as f64 / n as f64;
            SizeRow {
                set_size: size,
                mean,
                stderr: proportion_stderr(mean, n),
                n,
            }
        })
        .collect();
    let flagged_increasing = rows.windows(2).any(|w| {
        let tol = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        w[1].mean - w[0].mean > tol
    });
    Ok(StratumReport {
        stratum: query.stratum.map(|(s, _)| s),
        competence: query.competence.map(|(c, _)| c),
        rows,
        flagged_increasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Pooled success over every sample's records for the set each α displays,
/// with a normal-approximation 95% band.
pub fn accuracy_vs_alpha(
    log: &PredictionLog,
    pool: &ScoreTable,
    grid: &AlphaGrid,
    mode: Mode,
) -> Result<Vec<AlphaRow>> {
    if !log.has_mode(mode) {
        return Err(Error::domain(format!("log has no {} records", mode.as_str())));
    }
    let n_labels = pool.n_labels();
    let mut rows = Vec::with_capacity(grid.m());
    let mut missing = Vec::new();
    for arm in 0..grid.m() {
        let (mut hit, mut n) = (0usize, 0usize);
        for s in pool.samples() {
            let set = grid.set_for_arm(s, arm);
            match log.lookup(&s.id, &set.labels, n_labels, mode) {
                Some(recs) => {
                    hit += recs.iter().filter(|r| r.predicted_label == s.true_label).count();
                    n += recs.len();
                }
                None => missing.push((
                    s.id.clone(),
                    PredictionLog::display_signature(&set.labels, n_labels),
                )),
            }
        }
        let mean = if n > 0 { hit as f64 / n as f64 } else { f64::NAN };
        let se = proportion_stderr(mean, n);
        rows.push(AlphaRow {
            alpha: grid.alpha(arm),
            mean,
            stderr: se,
            n,
            lower: (mean - Z95 * se).max(0.0),
            upper: (mean + Z95 * se).min(1.0),
        });
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::ReplayCoverage { missing });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisadvantageRow {
    pub arm: usize,
    /// Correct picks from outside a set that missed the true label.
    pub saves: usize,
    /// Outside-set picks when the set held the true label.
    pub own_goals: usize,
    pub n: usize,
}

/// Per-arm saves and own-goals over lenient records for the displayed set.
pub fn disadvantage_counts(
    log: &PredictionLog,
    pool: &ScoreTable,
    grid: &AlphaGrid,
) -> Result<Vec<DisadvantageRow>> {
    if !log.has_mode(Mode::Lenient) {
        return Err(Error::domain("disadvantage counts need lenient records"));
    }
    let n_labels = pool.n_labels();
    let mut rows = Vec::with_capacity(grid.m());
    for arm in 0..grid.m() {
        let mut row = DisadvantageRow {
            arm,
            saves: 0,
            own_goals: 0,
            n: 0,
        };
        for s in pool.samples() {
            let set = grid.set_for_arm(s, arm);
            let menu = set.menu(n_labels);
            let Some(recs) = log.lookup(&s.id, &set.labels, n_labels, Mode::Lenient) else {
                continue;
            };
            let y_in = menu.contains(&s.true_label);
            for r in recs {
                let pick_in = menu.contains(&r.predicted_label);
                row.saves += (r.predicted_label == s.true_label && !y_in) as usize;
                row.own_goals += (!pick_in && y_in) as usize;
                row.n += 1;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{build_grid, CalibrationSet, Sample};
    use crate::expert::{LogRecord, MonotoneExpert, SuccessCurve};

    #[test]
    fn aggregate_examples() {
        let one = aggregate_curves(&[vec![0.0, 1.0, 2.5]]).unwrap();
        assert_eq!(one.mean, vec![0.0, 1.0, 2.5]);
        assert_eq!(one.stderr, vec![0.0; 3]);
        let same = aggregate_curves(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(same.stderr, vec![0.0; 2]);
        let two = aggregate_curves(&[vec![0.0, 1.0, 2.0], vec![0.0, 3.0, 4.0]]).unwrap();
        assert_eq!(two.mean, vec![0.0, 2.0, 3.0]);
        for (got, want) in two.stderr.iter().zip([0.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(aggregate_curves(&[vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(aggregate_curves(&[]).is_err());
    }

    fn ids(n: usize, p: impl Fn(usize) -> f64) -> Vec<(String, f64)> {
        (0..n).map(|i| (format!("i{i:03}"), p(i))).collect()
    }

    #[test]
    fn strata_examples() {
        let s = stratify_samples(&ids(5, |i| [0.9, 0.1, 0.5, 0.3, 0.7][i]), 5).unwrap();
        assert_eq!(s, vec![4, 0, 2, 1, 3]);

        let s = stratify_samples(&ids(100, |i| (i * 37 % 100) as f64 / 100.0), 5).unwrap();
        for k in 0..5 {
            assert_eq!(s.iter().filter(|&&x| x == k).count(), 20);
        }

        // all equal: strata follow id order
        let s = stratify_samples(&ids(10, |_| 0.5), 5).unwrap();
        assert_eq!(s, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);

        assert!(stratify_samples(&ids(4, |_| 0.5), 5).is_err());
    }

    fn tiny() -> (ScoreTable, AlphaGrid) {
        let g = build_grid(&CalibrationSet::from_scores(vec![0.2, 0.5, 0.8]).unwrap()).unwrap();
        // thresholds by arm: 0.8, 0.5, 0.2
        let samples = vec![
            Sample { id: "a".into(), probs: vec![0.9, 0.6, 0.3], true_label: 1 },
            Sample { id: "b".into(), probs: vec![0.9, 0.6, 0.3], true_label: 2 },
            Sample { id: "c".into(), probs: vec![0.4, 0.7, 0.1], true_label: 3 },
        ];
        (ScoreTable::new(3, samples).unwrap(), g)
    }

    #[test]
    fn oracle_hand_sums() {
        let (pool, g) = tiny();
        let curve = SuccessCurve::table(vec![1.0, 0.6, 0.3]).unwrap();
        let t = arm_accuracy_oracle(&g, &MonotoneExpert::new(curve, 3), &pool).unwrap();
        // a: sets {1,2,3}->0.3, {1,2}->0.6, {1}->1
        // b: {1,2,3}->0.3, {1,2}->0.6, {1}->0
        // c: {1,2}->0 (label 3 score 0.9), {2}->0, {} -> full menu 0.3
        let want = [(0.3 + 0.3 + 0.0) / 3.0, (0.6 + 0.6) / 3.0, (1.0 + 0.3) / 3.0];
        for (got, w) in t.accuracy.iter().zip(want) {
            assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        }
        assert_eq!(t.best_arm(), 2);
    }

    #[test]
    fn perfect_expert_accuracy_is_coverage() {
        let (pool, g) = tiny();
        let curve = SuccessCurve::table(vec![1.0]).unwrap();
        let t = arm_accuracy_oracle(&g, &MonotoneExpert::new(curve, 3), &pool).unwrap();
        for arm in 0..2 {
            let cov = crate::conformal::empirical_coverage(&g, arm, &pool).unwrap();
            assert!((t.accuracy[arm] - cov).abs() < 1e-12);
        }
    }

    fn rec(id: &str, sig: &[usize], pred: usize, mode: Mode) -> LogRecord {
        LogRecord {
            sample_id: id.into(),
            set_signature: sig.to_vec(),
            predicted_label: pred,
            mode,
            expert_id: None,
        }
    }

    #[test]
    fn disadvantage_hand_tally() {
        let (pool, g) = tiny();
        // arm 1 displays a,b: {1,2}; c: {2}
        let log = PredictionLog::new(vec![
            rec("a", &[1, 2], 1, Mode::Lenient), // in-set, correct
            rec("a", &[1, 2], 3, Mode::Lenient), // own-goal
            rec("b", &[1, 2], 3, Mode::Lenient), // own-goal
            rec("c", &[2], 3, Mode::Lenient),    // save
            rec("c", &[2], 1, Mode::Lenient),    // outside, wrong, y absent
            rec("c", &[2], 2, Mode::Lenient),    // in-set, wrong
        ])
        .unwrap();
        let rows = disadvantage_counts(&log, &pool, &g).unwrap();
        assert_eq!((rows[1].saves, rows[1].own_goals, rows[1].n), (1, 2, 6));

        let strict_only = PredictionLog::new(vec![rec("a", &[1, 2], 1, Mode::Strict)]).unwrap();
        assert!(disadvantage_counts(&strict_only, &pool, &g).is_err());
    }

    #[test]
    fn in_set_lenient_log_has_no_disadvantage() {
        let (pool, g) = tiny();
        let mut recs = Vec::new();
        for s in pool.samples() {
            for arm in 0..3 {
                let set = g.set_for_arm(s, arm);
                let menu = set.menu(3);
                recs.push(rec(&s.id, &set.labels, menu[0], Mode::Lenient));
            }
        }
        let log = PredictionLog::new(recs).unwrap();
        for r in disadvantage_counts(&log, &pool, &g).unwrap() {
            assert_eq!((r.saves, r.own_goals), (0, 0));
        }
    }

    #[test]
    fn set_size_slice_and_forced_choice() {
        let (pool, _) = tiny();
        let log = PredictionLog::new(vec![
            rec("a", &[1], 1, Mode::Strict),
            rec("a", &[1, 2], 2, Mode::Strict),
            rec("a", &[1, 2], 1, Mode::Strict),
            rec("b", &[1], 1, Mode::Strict), // truth absent, skipped
        ])
        .unwrap();
        let rep = success_vs_set_size(&log, &pool, Mode::Strict, SizeQuery::default()).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!((rep.rows[0].set_size, rep.rows[0].mean), (1, 1.0));
        assert_eq!((rep.rows[1].set_size, rep.rows[1].mean, rep.rows[1].n), (2, 0.5, 2));
        assert!(!rep.flagged_increasing);
        assert!(success_vs_set_size(&log, &pool, Mode::Lenient, SizeQuery::default()).is_err());
    }

    #[test]
    fn competence_median_split() {
        let (pool, _) = tiny();
        let mk = |e: &str, pred: usize| LogRecord {
            expert_id: Some(e.into()),
            ..rec("a", &[1, 2], pred, Mode::Strict)
        };
        let log = PredictionLog::new(vec![mk("x", 1), mk("y", 2), mk("z", 1), mk("w", 2)]).unwrap();
        let g = competence_groups(&log, &pool, Mode::Strict).unwrap();
        assert_eq!(g["x"], Competence::High);
        assert_eq!(g["z"], Competence::High);
        assert_eq!(g["y"], Competence::Low);
        let no_ids = PredictionLog::new(vec![rec("a", &[1], 1, Mode::Strict)]).unwrap();
        assert!(competence_groups(&no_ids, &pool, Mode::Strict).is_err());
    }

    #[test]
    fn accuracy_vs_alpha_requires_mode() {
        let (pool, g) = tiny();
        let log = PredictionLog::new(vec![rec("a", &[1], 1, Mode::Strict)]).unwrap();
        assert!(matches!(
            accuracy_vs_alpha(&log, &pool, &g, Mode::Lenient),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            accuracy_vs_alpha(&log, &pool, &g, Mode::Strict),
            Err(Error::ReplayCoverage { .. })
        ));
    }
}
