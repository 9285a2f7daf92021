use serde::{Deserialize, Serialize};

/// One arm's increment in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmUpdate {
    pub arm: usize,
    pub nu: u32,
    pub gamma: u32,
}

impl ArmUpdate {
    pub fn success(arm: usize) -> Self {
        Self { arm, nu: 1, gamma: 1 }
    }

    pub fn failure(arm: usize) -> Self {
        Self { arm, nu: 1, gamma: 0 }
    }

    pub fn reward(arm: usize, success: bool) -> Self {
        if success {
            Self::success(arm)
        } else {
            Self::failure(arm)
        }
    }
}

/// Per-arm success counts (γ), reward counts (ν) and physical pulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmLedger {
    gamma: Vec<u64>,
    nu: Vec<u64>,
    pulls: Vec<u64>,
    horizon: usize,
}

impl ArmLedger {
    pub fn new(m: usize, horizon: usize) -> Self {
        Self {
            gamma: vec![0; m],
            nu: vec![0; m],
            pulls: vec![0; m],
            horizon,
        }
    }

    pub fn m(&self) -> usize {
        self.nu.len()
    }

    pub fn gamma(&self, arm: usize) -> u64 {
        self.gamma[arm]
    }

    pub fn nu(&self, arm: usize) -> u64 {
        self.nu[arm]
    }

    pub fn pulls(&self, arm: usize) -> u64 {
        self.pulls[arm]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn record_pull(&mut self, arm: usize) {
        self.pulls[arm] += 1;
    }

    pub fn apply(&mut self, update: &ArmUpdate) {
        self.nu[update.arm] += u64::from(update.nu);
        self.gamma[update.arm] += u64::from(update.gamma);
    }

    /// `γ / ν`, undefined before the first reward.
    pub fn mean(&self, arm: usize) -> Option<f64> {
        (self.nu[arm] > 0).then(|| self.gamma[arm] as f64 / self.nu[arm] as f64)
    }

    /// `sqrt(2 ln T / ν)`; infinite while ν = 0.
    pub fn radius(&self, arm: usize) -> f64 {
        if self.nu[arm] == 0 {
            return f64::INFINITY;
        }
        (2.0 * (self.horizon as f64).ln() / self.nu[arm] as f64).sqrt()
    }

    pub fn ucb(&self, arm: usize) -> f64 {
        match self.mean(arm) {
            Some(mu) => mu + self.radius(arm),
            None => f64::INFINITY,
        }
    }

    pub fn lcb(&self, arm: usize) -> f64 {
        match self.mean(arm) {
            Some(mu) => mu - self.radius(arm),
            None => f64::NEG_INFINITY,
        }
    }

    /// Deactivation rule: drops every arm whose UCB lies below some other
    /// active arm's LCB. Arms without evidence are never dropped.
    pub fn deactivate(&self, active: &mut Vec<usize>) {
        let best_lcb = active
            .iter()
            .map(|&a| self.lcb(a))
            .fold(f64::NEG_INFINITY, f64::max);
        active.retain(|&a| self.nu[a] == 0 || self.ucb(a) >= best_lcb);
    }

    /// Highest empirical mean among `arms`, ties toward the larger arm.
    pub fn best_by_mean(&self, arms: &[usize]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &a in arms {
            let mu = self.mean(a).unwrap_or(f64::NEG_INFINITY);
            match best {
                Some((_, b)) if mu < b => {}
                _ => best = Some((a, mu)),
            }
        }
        best.map(|(a, _)| a)
    }

    /// Arm maximizing the UCB, ties toward the smaller arm.
    pub fn argmax_ucb(&self) -> usize {
        let mut best = 0;
        let mut best_ucb = f64::NEG_INFINITY;
        for a in 0..self.m() {
            let u = self.ucb(a);
            if u > best_ucb {
                best = a;
                best_ucb = u;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_and_radius() {
        let mut l = ArmLedger::new(2, 100);
        assert_eq!(l.ucb(0), f64::INFINITY);
        assert_eq!(l.lcb(0), f64::NEG_INFINITY);
        l.apply(&ArmUpdate::success(0));
        l.apply(&ArmUpdate::failure(0));
        assert_eq!(l.mean(0), Some(0.5));
        let r = (2.0 * 100f64.ln() / 2.0).sqrt();
        assert!((l.radius(0) - r).abs() < 1e-12);
        assert!(l.ucb(0) >= l.lcb(0));
    }

    #[test]
    fn deactivation_spares_unobserved_arms() {
        let mut l = ArmLedger::new(3, 2);
        for _ in 0..50 {
            l.apply(&ArmUpdate::success(0));
            l.apply(&ArmUpdate::failure(1));
        }
        let mut active = vec![0, 1, 2];
        l.deactivate(&mut active);
        assert_eq!(active, vec![0, 2]);
    }

    #[test]
    fn tie_breaks() {
        let mut l = ArmLedger::new(3, 10);
        for a in 0..3 {
            l.apply(&ArmUpdate::success(a));
        }
        assert_eq!(l.argmax_ucb(), 0);
        assert_eq!(l.best_by_mean(&[0, 1, 2]), Some(2));
    }
}
