//! Truncated Gaussian-mixture reward distributions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mixture of normals restricted to `[lo, hi]`, sampled by rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMixture {
    // (weight, mean, variance)
    components: Vec<(f64, f64, f64)>,
    lo: f64,
    hi: f64,
}

impl TruncatedMixture {
    /// Components are `(weight, mean, variance)`; weights must sum to one.
    pub const fn new(components: Vec<(f64, f64, f64)>, lo: f64, hi: f64) -> Self {
        Self { components, lo, hi }
    }

    pub fn components(&self) -> &[(f64, f64, f64)] {
        &self.components
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (k, (w, _, _)) in self.components.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let (_, mean, var) = self.components[pick];
            let z: f64 = StandardNormal.sample(rng);
            let x = mean + var.sqrt() * z;
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
    }
}

/// Maze wall-hit reward.
pub fn maze_wall() -> TruncatedMixture {
    TruncatedMixture::new(vec![(1.0 / 3.0, -11.5, 0.2), (2.0 / 3.0, -10.5, 0.3)], -12.0, -10.0)
}

/// Maze goal reward.
pub fn maze_goal() -> TruncatedMixture {
    TruncatedMixture::new(vec![(1.0, 10.0, 0.02)], 9.5, 11.5)
}

/// Maze per-action cost.
pub fn maze_step() -> TruncatedMixture {
    TruncatedMixture::new(vec![(1.0 / 3.0, -1.5, 0.2), (2.0 / 3.0, -0.5, 0.3)], -2.0, 0.0)
}

/// Combat penalty for shooting a dead or out-of-range enemy.
pub fn combat_misfire() -> TruncatedMixture {
    TruncatedMixture::new(vec![(1.0, -10.0, 0.1)], -11.0, -9.0)
}

/// Combat wall-hit reward.
pub fn combat_wall() -> TruncatedMixture {
    TruncatedMixture::new(vec![(1.0 / 3.0, -1.5, 0.2), (2.0 / 3.0, -0.5, 0.3)], -2.0, 0.0)
}

/// Combat reward for eliminating every enemy.
pub fn combat_goal() -> TruncatedMixture {
    TruncatedMixture::new(vec![(1.0 / 3.0, 97.0, 0.2), (2.0 / 3.0, 100.0, 0.15)], 95.0, 105.0)
}
