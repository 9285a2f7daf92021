use super::*;
use crate::conformal::{build_grid, CalibrationSet, PredictionSet};
use crate::expert::Provenance;

/// Succeeds on an arm-dependent rule, ignoring the set contents.
struct ArmRule<F: Fn(usize, f64) -> bool + Sync>(F);

impl<F: Fn(usize, f64) -> bool + Sync> Expert for ArmRule<F> {
    fn predict(&self, s: &Sample, set: &PredictionSet, exo: &ExpertExogenous) -> Result<usize> {
        Ok(if (self.0)(set.arm, exo.u) {
            s.true_label
        } else {
            s.true_label % s.probs.len() + 1
        })
    }
    fn success_probability(&self, _: &Sample, _: &PredictionSet) -> Result<f64> {
        Ok(0.0)
    }
    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }
    fn n_labels(&self) -> usize {
        2
    }
}

fn grid(m: usize) -> AlphaGrid {
    let scores = (0..m).map(|i| 0.05 + 0.9 * i as f64 / m as f64).collect();
    build_grid(&CalibrationSet::from_scores(scores).unwrap()).unwrap()
}

fn pool() -> Vec<Sample> {
    // true label in every set
    vec![Sample {
        id: "p0".into(),
        probs: vec![1.0, 0.0],
        true_label: 1,
    }]
}

fn run_with<F: Fn(usize, f64) -> bool + Sync>(
    alg: Algorithm,
    m: usize,
    horizon: usize,
    rule: F,
) -> Trajectory {
    let g = grid(m);
    let p = pool();
    let expert = ArmRule(rule);
    let env = BanditEnv {
        grid: &g,
        pool: &p,
        expert: &expert,
    };
    run_seeded(alg, env, horizon, 7, StreamMode::WithReplacement).unwrap()
}

#[test]
fn zero_horizon() {
    for alg in Algorithm::ALL {
        let tr = run_with(alg, 4, 0, |_, _| true);
        assert!(tr.records.is_empty());
        assert_eq!(tr.final_active, vec![0, 1, 2, 3]);
    }
}

#[test]
fn single_arm_grid() {
    for alg in Algorithm::ALL {
        let tr = run_with(alg, 1, 25, |_, u| u < 0.5);
        assert_eq!(tr.records.len(), 25);
        assert!(tr.pulled_arms().all(|a| a == 0));
        assert_eq!(tr.final_active, vec![0]);
    }
}

#[test]
fn vanilla_se_partial_sweep() {
    let tr = run_with(Algorithm::VanillaSe, 10, 6, |a, _| a == 0);
    let arms: Vec<_> = tr.pulled_arms().collect();
    assert_eq!(arms, vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(tr.final_active.len(), 10);
}

#[test]
fn vanilla_se_first_separation() {
    let horizon = 100;
    // first k with 2 * sqrt(2 ln T / k) < 1
    let ln_t = (horizon as f64).ln();
    let k = (1..).find(|&k| 2.0 * (2.0 * ln_t / k as f64).sqrt() < 1.0).unwrap();
    let tr = run_with(Algorithm::VanillaSe, 2, horizon, |a, _| a == 0);
    let two_active = tr.records.iter().filter(|r| r.active_arms == 2).count();
    assert_eq!(two_active, 2 * k);
    assert_eq!(tr.final_active, vec![0]);
    assert!(tr.records[2 * k..].iter().all(|r| r.arm == 0));
}

#[test]
fn vanilla_se_identical_arms_stay() {
    for seed in 0..20 {
        let g = grid(3);
        let p = pool();
        let expert = ArmRule(|_, u| u < 0.5);
        let env = BanditEnv {
            grid: &g,
            pool: &p,
            expert: &expert,
        };
        let tr = run_seeded(Algorithm::VanillaSe, env, 600, seed, StreamMode::WithReplacement)
            .unwrap();
        assert_eq!(tr.final_active, vec![0, 1, 2], "seed {seed}");
    }
}

#[test]
fn vanilla_ucb1_follows_index_recursion() {
    let m = 4;
    let horizon = 60;
    let best = 2;
    let tr = run_with(Algorithm::VanillaUcb1, m, horizon, |a, _| a == best);

    // independent recursion on counts only
    let ln_t = (horizon as f64).ln();
    let mut n = vec![0u32; m];
    let mut s = vec![0u32; m];
    let mut expected = Vec::new();
    for _ in 0..horizon {
        let idx = |a: usize| {
            if n[a] == 0 {
                f64::INFINITY
            } else {
                s[a] as f64 / n[a] as f64 + (2.0 * ln_t / n[a] as f64).sqrt()
            }
        };
        let mut arm = 0;
        for a in 1..m {
            if idx(a) > idx(arm) {
                arm = a;
            }
        }
        n[arm] += 1;
        s[arm] += (arm == best) as u32;
        expected.push(arm);
    }
    assert_eq!(tr.pulled_arms().collect::<Vec<_>>(), expected);
    assert_eq!(tr.chosen_arm, Some(best));
}

#[test]
fn vanilla_ucb1_initialization_only() {
    let tr = run_with(Algorithm::VanillaUcb1, 5, 5, |_, u| u < 0.3);
    assert_eq!(tr.pulled_arms().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
}

#[test]
fn cf_ucb1_first_round_success_fills_grid() {
    let tr = run_with(Algorithm::CounterfactualUcb1, 5, 1, |_, _| true);
    let r = &tr.records[0];
    assert_eq!(r.arm, 0);
    assert_eq!(r.updates.len(), 5);
    assert!(r.updates.iter().all(|u| u.nu == 1 && u.gamma == 1));
}

#[test]
fn deterministic_trajectories() {
    for alg in Algorithm::ALL {
        let a = run_with(alg, 6, 80, |arm, u| u < 0.2 + 0.1 * arm as f64);
        let b = run_with(alg, 6, 80, |arm, u| u < 0.2 + 0.1 * arm as f64);
        assert_eq!(a, b);
    }
}

#[test]
fn ledger_invariants_hold() {
    for alg in Algorithm::ALL {
        let tr = run_with(alg, 7, 200, |arm, u| u < 0.9 - 0.1 * arm as f64);
        for a in 0..7 {
            assert!(tr.ledger.gamma(a) <= tr.ledger.nu(a));
            assert!(tr.ledger.nu(a) >= tr.ledger.pulls(a), "{alg} arm {a}");
        }
    }
}

#[test]
fn faithful_stream_is_a_permutation() {
    let rounds = draw_rounds(10, 10, 3, StreamMode::Faithful).unwrap();
    let mut seen: Vec<_> = rounds.iter().map(|r| r.sample).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());
    assert!(draw_rounds(10, 11, 3, StreamMode::Faithful).is_err());
    assert!(draw_rounds(0, 1, 3, StreamMode::WithReplacement).is_err());
}

#[test]
fn algorithm_names_round_trip() {
    for alg in Algorithm::ALL {
        assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
    }
    assert!("nope".parse::<Algorithm>().is_err());
}
