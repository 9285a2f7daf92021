use super::Trajectory;
use crate::error::{Error, Result};

/// Cumulative regret `R(t) = t * max acc - sum_{t' <= t} acc(arm_t')` for
/// `t = 1..=T`, using expected per-arm accuracies.
pub fn compute_regret(trajectory: &Trajectory, arm_accuracy: &[f64]) -> Result<Vec<f64>> {
    if arm_accuracy.len() != trajectory.m {
        return Err(Error::domain(format!(
            "accuracy table has {} arms, trajectory has {}",
            arm_accuracy.len(),
            trajectory.m
        )));
    }
    regret_from_pulls(trajectory.pulled_arms(), arm_accuracy)
}

pub(crate) fn regret_from_pulls(
    pulls: impl Iterator<Item = usize>,
    arm_accuracy: &[f64],
) -> Result<Vec<f64>> {
    let best = arm_accuracy
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    pulls
        .map(|arm| {
            let acc = arm_accuracy
                .get(arm)
                .ok_or_else(|| Error::domain(format!("pulled arm {arm} outside table")))?;
            total += best - acc;
            Ok(total)
        })
        .collect()
}
