//! Reward inference for arms that were not pulled.
//!
//! Arms are indexed in ascending α. For a round with sample `x`, true label
//! `y` and pulled arm `a`, write `d` for the first arm whose set excludes `y`
//! (α† as an index, `m` if none) and `e` for the first arm whose set is empty
//! (`m` if none). Always `d <= e`. Arms in `[e, m)` show the full label set.
//!
//! Under counterfactual monotonicity, with `r` the observed reward:
//!
//! ```text
//! trivial failures   [d, e)                      nu += 1
//! a < d, r = 0       [0, a] and [e, m)           nu += 1          leave unexplored
//! a < d, r = 1       [a, d)                      nu += 1, gamma += 1
//!                    [a, e) leave unexplored
//! a >= e, r = 1      [0, d) and [e, m)           nu += 1, gamma += 1  leave unexplored
//! a >= e, r = 0      [e, m)                      nu += 1          leave unexplored
//! ```
//!
//! With no empty sets (`e = m`) this is the three-phase sweep exactly. The
//! full label set contains every other set, so it sits at the top of the
//! nesting chain.

use std::collections::BTreeSet;

use super::ledger::{ArmLedger, ArmUpdate};
use crate::conformal::{AlphaGrid, Sample};

/// Updates and the arms they resolve, before any eligibility filter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inference {
    pub updates: Vec<ArmUpdate>,
    pub resolved: Vec<usize>,
}

/// Arm indices derived from a round's sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundGeometry {
    pub m: usize,
    /// First arm excluding the true label.
    pub dagger: usize,
    /// First arm with an empty set.
    pub empty: usize,
}

impl RoundGeometry {
    pub fn new(grid: &AlphaGrid, sample: &Sample) -> Self {
        Self {
            m: grid.m(),
            dagger: grid.exit_arm(sample.true_score()),
            empty: grid.empty_arm(sample),
        }
    }

    /// Whether the displayed menu of `arm` contains the true label.
    pub fn covers(&self, arm: usize) -> bool {
        arm < self.dagger || arm >= self.empty
    }
}

/// The ⌈k/2⌉-th largest of `k` arms.
pub fn median_arm(unexplored: &BTreeSet<usize>) -> Option<usize> {
    let k = unexplored.len();
    if k == 0 {
        return None;
    }
    unexplored.iter().nth(k - k.div_ceil(2)).copied()
}

pub fn monotone_inference(geo: RoundGeometry, pulled: usize, reward: bool) -> Inference {
    let RoundGeometry { m, dagger: d, empty: e } = geo;
    let mut inf = Inference::default();
    inf.updates.extend((d..e).map(ArmUpdate::failure));
    if pulled < d {
        if reward {
            inf.updates.extend((pulled..d).map(ArmUpdate::success));
            inf.resolved.extend(pulled..e);
        } else {
            let larger = (0..=pulled).chain(e..m);
            inf.updates.extend(larger.clone().map(ArmUpdate::failure));
            inf.resolved.extend(larger);
        }
    } else if pulled >= e {
        if reward {
            let covering = (0..d).chain(e..m);
            inf.updates.extend(covering.clone().map(ArmUpdate::success));
            inf.resolved.extend(covering.chain(d..e));
        } else {
            inf.updates.extend((e..m).map(ArmUpdate::failure));
            inf.resolved.extend(e..m);
        }
    }
    inf.updates.sort_by_key(|u| u.arm);
    inf.resolved.sort_unstable();
    inf
}

/// Inference without the monotonicity assumption: arms showing the same menu
/// replicate the observed reward, arms whose menu excludes the true label fail.
pub fn assumption_free_inference(
    geo: RoundGeometry,
    menu_sizes: &[usize],
    pulled: usize,
    reward: bool,
) -> Inference {
    let mut inf = Inference::default();
    for arm in 0..geo.m {
        if menu_sizes[arm] == menu_sizes[pulled] {
            inf.updates.push(ArmUpdate::reward(arm, reward));
        } else if !geo.covers(arm) {
            inf.updates.push(ArmUpdate::failure(arm));
        } else {
            continue;
        }
        inf.resolved.push(arm);
    }
    inf
}

/// Displayed menu size per arm: the set size, or `n_labels` when empty.
pub fn menu_sizes(grid: &AlphaGrid, sample: &Sample) -> Vec<usize> {
    let n = sample.probs.len();
    let mut exits: Vec<usize> = sample
        .probs
        .iter()
        .map(|p| grid.exit_arm(1.0 - p))
        .collect();
    exits.sort_unstable();
    (0..grid.m())
        .map(|arm| {
            let size = n - exits.partition_point(|&x| x <= arm);
            if size == 0 {
                n
            } else {
                size
            }
        })
        .collect()
}

/// Applies monotone inference to the unexplored arms of a sweep: ledger
/// increments only for unexplored arms, then resolved arms leave the set.
/// Returns the increments applied.
pub fn counterfactual_update(
    unexplored: &mut BTreeSet<usize>,
    ledger: &mut ArmLedger,
    pulled: usize,
    sample: &Sample,
    prediction: usize,
    grid: &AlphaGrid,
) -> Vec<ArmUpdate> {
    let geo = RoundGeometry::new(grid, sample);
    let inf = monotone_inference(geo, pulled, prediction == sample.true_label);
    apply_within(unexplored, ledger, inf)
}

pub(crate) fn apply_within(
    eligible: &mut BTreeSet<usize>,
    ledger: &mut ArmLedger,
    inf: Inference,
) -> Vec<ArmUpdate> {
    let applied: Vec<ArmUpdate> = inf
        .updates
        .into_iter()
        .filter(|u| eligible.contains(&u.arm))
        .collect();
    for u in &applied {
        ledger.apply(u);
    }
    for a in inf.resolved {
        eligible.remove(&a);
    }
    applied
}
