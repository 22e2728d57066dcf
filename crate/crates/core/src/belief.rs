//! Value beliefs and the Thompson-sampling policies derived from them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FetsError, Result};

/// Default Monte-Carlo draw count used while learning.
pub const DEFAULT_TS_SAMPLES: usize = 4096;
/// Default probability floor applied before taking logarithms.
pub const DEFAULT_XI: f64 = 1e-4;

const SUM_TOL: f64 = 1e-9;

/// Gaussian belief over one action value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    mean: f64,
    std: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(FetsError::invalid(format!(
                "belief needs finite mean and finite std >= 0, got N({mean}, {std})"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

/// Probability vector over a discrete action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPolicy {
    probs: Vec<f64>,
}

impl ActionPolicy {
    /// Validates that every entry is in `[0, 1]` and the entries sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FetsError::invalid("policy over an empty action set"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + SUM_TOL) {
            return Err(FetsError::invalid(format!(
                "policy entries must lie in [0,1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(FetsError::invalid(format!(
                "policy entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a policy.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() || weights.iter().any(|w| *w < 0.0) {
            return Err(FetsError::invalid(format!(
                "cannot normalize weights {weights:?}"
            )));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform policy over zero actions");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        assert!(index < n, "one-hot index {index} out of range {n}");
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Draws an action index by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left a sliver above the cumulative sum
        self.probs
            .iter()
            .rposition(|p| *p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }

    /// Index of the largest entry, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the maximum, ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Gaussian belief from a symmetric confidence interval `q_hat ± half_width`
/// built with the given quantile.
pub fn ci_to_gaussian(q_hat: f64, half_width: f64, quantile: f64) -> Result<GaussianBelief> {
    if !q_hat.is_finite() || !half_width.is_finite() || half_width < 0.0 {
        return Err(FetsError::invalid(format!(
            "interval needs finite centre and half-width >= 0, got {q_hat} ± {half_width}"
        )));
    }
    if !quantile.is_finite() || quantile <= 0.0 {
        return Err(FetsError::invalid(format!(
            "interval quantile must be positive, got {quantile}"
        )));
    }
    GaussianBelief::new(q_hat, half_width / quantile)
}

/// Monte-Carlo Thompson policy: the fraction of joint draws in which each
/// action holds the largest sampled value. Exact ties among draws are broken
/// uniformly at random.
///
/// Draws are taken relative to the largest mean, so a common shift of all
/// means that is exact in floating point leaves the output unchanged for a
/// fixed RNG stream.
pub fn thompson_from_beliefs<R: Rng + ?Sized>(
    beliefs: &[GaussianBelief],
    sample_count: usize,
    rng: &mut R,
) -> Result<ActionPolicy> {
    if beliefs.is_empty() {
        return Err(FetsError::invalid("Thompson policy over zero actions"));
    }
    if sample_count == 0 {
        return Err(FetsError::invalid("Thompson policy needs at least one draw"));
    }
    let n = beliefs.len();
    if n == 1 {
        return Ok(ActionPolicy::one_hot(1, 0));
    }
    let reference = beliefs
        .iter()
        .map(|b| b.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let centred: Vec<f64> = beliefs.iter().map(|b| b.mean - reference).collect();

    let mut wins = vec![0u64; n];
    for _ in 0..sample_count {
        let mut best_val = f64::NEG_INFINITY;
        let mut best = 0usize;
        let mut ties = 0u32;
        for (i, b) in beliefs.iter().enumerate() {
            let x = if b.std > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                centred[i] + b.std * z
            } else {
                centred[i]
            };
            if x > best_val {
                best_val = x;
                best = i;
                ties = 1;
            } else if x == best_val {
                // reservoir choice keeps every tied index equally likely
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = i;
                }
            }
        }
        wins[best] += 1;
    }
    let total = sample_count as f64;
    ActionPolicy::new(wins.iter().map(|w| *w as f64 / total).collect())
}

/// Thompson policy from dropout argmax counts: entry `i` is `counts[i] / total`.
pub fn thompson_from_dropout(win_counts: &[u64], total: u64) -> Result<ActionPolicy> {
    if win_counts.is_empty() {
        return Err(FetsError::invalid("dropout counts over zero actions"));
    }
    if total == 0 {
        return Err(FetsError::invalid("dropout total must be at least one"));
    }
    let sum: u64 = win_counts.iter().sum();
    if sum != total {
        return Err(FetsError::invalid(format!(
            "dropout counts sum to {sum}, expected {total}"
        )));
    }
    ActionPolicy::new(
        win_counts
            .iter()
            .map(|c| *c as f64 / total as f64)
            .collect(),
    )
}

/// Raises every entry to at least `xi` and rescales the remaining entries so
/// the result sums to one.
///
/// The rescaling factor is solved for exactly (entries at or below the
/// floor stay pinned at `xi`), so the output's smallest entry is `xi`, the
/// operation is idempotent and entry ordering is preserved.
pub fn floor_policy(policy: &ActionPolicy, xi: f64) -> Result<ActionPolicy> {
    let n = policy.len();
    if !(xi > 0.0 && xi < 1.0 / n as f64) {
        return Err(FetsError::invalid(format!(
            "floor {xi} must lie in (0, 1/{n})"
        )));
    }
    let probs = policy.probs();
    if probs.iter().all(|p| *p >= xi) {
        return Ok(policy.clone());
    }
    // Find the set of pinned entries: sort descending and grow the free set
    // while the implied scale keeps free entries above the floor.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]));
    let mut free_mass = 0.0;
    let mut scale = 0.0;
    let mut free = 0;
    for (k, &i) in order.iter().enumerate() {
        let candidate_mass = free_mass + probs[i];
        let pinned = n - (k + 1);
        let candidate_scale = (1.0 - pinned as f64 * xi) / candidate_mass;
        if probs[i] * candidate_scale >= xi {
            free_mass = candidate_mass;
            scale = candidate_scale;
            free = k + 1;
        } else {
            break;
        }
    }
    let mut out = vec![xi; n];
    for &i in order.iter().take(free) {
        out[i] = probs[i] * scale;
    }
    ActionPolicy::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_cdf;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ci_examples() {
        let b = ci_to_gaussian(5.0, 3.182, 3.182).unwrap();
        assert_eq!((b.mean(), b.std()), (5.0, 1.0));
        let b = ci_to_gaussian(0.0, 0.0, 1.96).unwrap();
        assert_eq!((b.mean(), b.std()), (0.0, 0.0));
        let b = ci_to_gaussian(2.0, 3.92, 1.96).unwrap();
        assert!((b.std() - 2.0).abs() < 1e-15);
        assert!(ci_to_gaussian(0.0, -1.0, 1.96).is_err());
        assert!(ci_to_gaussian(f64::NAN, 1.0, 1.96).is_err());
        assert!(ci_to_gaussian(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn thompson_symmetric_pair() {
        let b = [
            GaussianBelief::new(0.0, 1.0).unwrap(),
            GaussianBelief::new(0.0, 1.0).unwrap(),
        ];
        let p = thompson_from_beliefs(&b, 100_000, &mut rng(1)).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn thompson_matches_closed_form_pair() {
        let b = [
            GaussianBelief::new(1.0, 1.0).unwrap(),
            GaussianBelief::new(0.0, 1.0).unwrap(),
        ];
        let p = thompson_from_beliefs(&b, 100_000, &mut rng(2)).unwrap();
        let oracle = normal_cdf(1.0 / 2f64.sqrt());
        assert!((oracle - 0.7602).abs() < 1e-4);
        assert!((p.probs()[0] - oracle).abs() < 0.01);
    }

    #[test]
    fn thompson_point_beliefs_are_one_hot() {
        let b: Vec<_> = [3.0, 1.0, 2.0]
            .iter()
            .map(|m| GaussianBelief::new(*m, 0.0).unwrap())
            .collect();
        let p = thompson_from_beliefs(&b, 64, &mut rng(3)).unwrap();
        assert_eq!(p.probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn thompson_ties_split_uniformly() {
        let b = vec![GaussianBelief::new(2.0, 0.0).unwrap(); 4];
        let p = thompson_from_beliefs(&b, 40_000, &mut rng(4)).unwrap();
        for q in p.probs() {
            assert!((q - 0.25).abs() < 0.015);
        }
    }

    #[test]
    fn thompson_rejects_empty() {
        assert!(thompson_from_beliefs(&[], 10, &mut rng(0)).is_err());
        let b = [GaussianBelief::new(0.0, 1.0).unwrap()];
        assert!(thompson_from_beliefs(&b, 0, &mut rng(0)).is_err());
    }

    #[test]
    fn dropout_examples() {
        assert_eq!(
            thompson_from_dropout(&[30, 70], 100).unwrap().probs(),
            &[0.3, 0.7]
        );
        assert_eq!(
            thompson_from_dropout(&[100, 0], 100).unwrap().probs(),
            &[1.0, 0.0]
        );
        let p = thompson_from_dropout(&[1, 1, 1], 3).unwrap();
        assert!(p.probs().iter().all(|q| (q - 1.0 / 3.0).abs() < 1e-15));
        assert!(thompson_from_dropout(&[1, 2], 4).is_err());
    }

    #[test]
    fn floor_examples() {
        let p = ActionPolicy::new(vec![1.0, 0.0]).unwrap();
        let f = floor_policy(&p, 1e-4).unwrap();
        // exact pinned solution: the floored entry is exactly xi
        assert_eq!(f.probs()[1], 1e-4);
        assert!((f.probs()[0] - (1.0 - 1e-4)).abs() < 1e-15);
        // within 1e-8 of naive floor-then-divide-by-(1 + xi)
        assert!((f.probs()[0] - 1.0 / (1.0 + 1e-4)).abs() < 1e-8);
        assert!((f.probs()[1] - 1e-4 / (1.0 + 1e-4)).abs() < 1e-8);

        let half = ActionPolicy::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(floor_policy(&half, 1e-4).unwrap(), half);
        let quarter = ActionPolicy::uniform(4);
        assert_eq!(floor_policy(&quarter, 0.01).unwrap(), quarter);
        assert!(floor_policy(&quarter, 0.25).is_err());
        assert!(floor_policy(&quarter, 0.0).is_err());
    }

    fn policy_strategy() -> impl Strategy<Value = ActionPolicy> {
        prop::collection::vec(0.0f64..1.0, 1..7).prop_filter_map("zero mass", |w| {
            let total: f64 = w.iter().sum();
            (total > 1e-6).then(|| ActionPolicy::from_weights(&w).unwrap())
        })
    }

    proptest! {
        #[test]
        fn thompson_output_is_a_policy(
            means in prop::collection::vec(-50.0f64..50.0, 1..6),
            stds in prop::collection::vec(0.0f64..10.0, 6),
            seed in any::<u64>(),
        ) {
            let beliefs: Vec<_> = means.iter().zip(&stds)
                .map(|(m, s)| GaussianBelief::new(*m, *s).unwrap()).collect();
            let p = thompson_from_beliefs(&beliefs, 256, &mut rng(seed)).unwrap();
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.probs().iter().all(|q| (0.0..=1.0).contains(q)));
        }

        #[test]
        fn thompson_shift_invariant(
            means in prop::collection::vec(-512i32..512, 2..6),
            stds in prop::collection::vec(0i32..64, 6),
            shift in -4096i32..4096,
            seed in any::<u64>(),
        ) {
            // dyadic values keep the mean subtraction exact in f64
            let make = |c: f64| -> Vec<GaussianBelief> {
                means.iter().zip(&stds).map(|(m, s)| {
                    GaussianBelief::new(*m as f64 / 64.0 + c, *s as f64 / 16.0).unwrap()
                }).collect()
            };
            let a = thompson_from_beliefs(&make(0.0), 200, &mut rng(seed)).unwrap();
            let b = thompson_from_beliefs(&make(shift as f64 / 8.0), 200, &mut rng(seed)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn floor_is_idempotent_and_order_preserving(p in policy_strategy()) {
            let xi = 0.5 / (p.len() as f64 + 1.0) * 0.1;
            let once = floor_policy(&p, xi).unwrap();
            let twice = floor_policy(&once, xi).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.probs().iter().all(|q| *q >= xi));
            for i in 0..p.len() {
                for j in 0..p.len() {
                    if p.probs()[i] > p.probs()[j] {
                        prop_assert!(once.probs()[i] >= once.probs()[j]);
                    }
                }
            }
        }
    }
}
