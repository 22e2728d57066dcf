//! Free-energy evaluation of one space and the selection among spaces.
//!
//! For a space `m` with Thompson policy `pi_ts`, main-space Thompson policy
//! `pi_main` and behavioral policy `pi_b`:
//!
//! ```text
//! U(a)  = log pi_ts(a)
//! U~(a) = U(a) - (U(a) - U_main(a)) / beta
//! Z     = sum_a pi_b(a) exp(alpha U~(a))
//! pi*(a) = pi_b(a) exp(alpha U~(a)) / Z
//! F     = sum_a pi*(a) [ log(pi*(a) / pi_b(a)) / alpha - U~(a) ]  = -log(Z) / alpha
//! ```

use crate::belief::ActionPolicy;
use crate::error::{FetsError, Result};

/// Absolute agreement required between the two free-energy routes.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Lagrange weights of the behavioral-closeness (`alpha`) and main-space
/// consistency (`beta`) constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeParams {
    alpha: f64,
    beta: f64,
}

impl FeParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(FetsError::invalid(format!(
                "alpha must be finite and > 0, got {alpha}"
            )));
        }
        if !beta.is_finite() || beta < 1.0 {
            return Err(FetsError::invalid(format!(
                "beta must be finite and >= 1, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Output of one free-energy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyEval {
    /// The minimizing policy pi*.
    pub policy: ActionPolicy,
    /// Partition value Z.
    pub partition: f64,
    /// Optimal free energy in nats.
    pub free_energy: f64,
}

/// Log-Thompson utility. Every entry must be strictly positive, so callers
/// floor the policy first.
pub fn utility(pi_ts: &ActionPolicy) -> Result<Vec<f64>> {
    pi_ts
        .probs()
        .iter()
        .map(|p| {
            if *p > 0.0 {
                Ok(p.ln())
            } else {
                Err(FetsError::Domain(
                    "log utility of a zero-probability action; floor the policy first".into(),
                ))
            }
        })
        .collect()
}

/// Utility of a space pulled toward the main-space utility by `1/beta`.
pub fn tilted_utility(u_sub: &[f64], u_main: &[f64], beta: f64) -> Result<Vec<f64>> {
    if u_sub.len() != u_main.len() {
        return Err(FetsError::invalid(format!(
            "utility lengths differ ({} vs {})",
            u_sub.len(),
            u_main.len()
        )));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(FetsError::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(u_sub
        .iter()
        .zip(u_main)
        .map(|(s, m)| s - (s - m) / beta)
        .collect())
}

fn check_lengths(policies: &[&ActionPolicy]) -> Result<usize> {
    let n = policies[0].len();
    if policies.iter().any(|p| p.len() != n) {
        return Err(FetsError::invalid("policies cover different action sets"));
    }
    Ok(n)
}

/// Exponential tilt of `pi_b` by `alpha * tilted`, evaluated in log space.
fn tilt(tilted: &[f64], pi_b: &ActionPolicy, alpha: f64) -> Result<FreeEnergyEval> {
    let logits: Vec<f64> = pi_b
        .probs()
        .iter()
        .zip(tilted)
        .map(|(b, u)| {
            if *b > 0.0 {
                b.ln() + alpha * u
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(FetsError::invalid("behavioral policy has no support"));
    }
    let log_z = peak + logits.iter().map(|l| (l - peak).exp()).sum::<f64>().ln();
    let probs: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
    let from_log_z = -log_z / alpha;

    // Explicit expectation over pi*, using log pi* = logit - log Z so that
    // vanishing entries cannot produce 0 * inf.
    let explicit: f64 = probs
        .iter()
        .zip(&logits)
        .zip(pi_b.probs().iter().zip(tilted))
        .filter(|(_, (b, _))| **b > 0.0)
        .map(|((p, l), (b, u))| p * ((l - log_z - b.ln()) / alpha - u))
        .sum();
    if (explicit - from_log_z).abs() > CONSISTENCY_TOL {
        return Err(FetsError::Consistency(format!(
            "explicit free energy {explicit} disagrees with -log(Z)/alpha = {from_log_z}"
        )));
    }
    let policy = ActionPolicy::from_weights(&probs)?;
    Ok(FreeEnergyEval {
        policy,
        partition: log_z.exp(),
        free_energy: from_log_z,
    })
}

/// Optimal policy, partition value and free energy of one space.
pub fn evaluate(
    pi_ts_sub: &ActionPolicy,
    pi_ts_main: &ActionPolicy,
    pi_b: &ActionPolicy,
    params: FeParams,
) -> Result<FreeEnergyEval> {
    check_lengths(&[pi_ts_sub, pi_ts_main, pi_b])?;
    let u_sub = utility(pi_ts_sub)?;
    let u_main = utility(pi_ts_main)?;
    let tilted = tilted_utility(&u_sub, &u_main, params.beta)?;
    tilt(&tilted, pi_b, params.alpha)
}

/// Free energy when the behavioral policy is the space's own Thompson policy
/// and `alpha = beta`:
///
/// `F(pi) = E_pi[-log pi_ts_sub] + KL(pi || pi_ts_main) / alpha`.
///
/// At the optimum `pi* ∝ pi_ts_sub^alpha * pi_ts_main` and
/// `F* = -log(sum_a pi_ts_sub^alpha pi_ts_main) / alpha`; the simplified
/// objective is re-evaluated at `pi*` as a consistency check.
pub fn evaluate_ts_behavioral(
    pi_ts_sub: &ActionPolicy,
    pi_ts_main: &ActionPolicy,
    alpha: f64,
) -> Result<FreeEnergyEval> {
    check_lengths(&[pi_ts_sub, pi_ts_main])?;
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(FetsError::invalid(format!(
            "alpha must be finite and > 0, got {alpha}"
        )));
    }
    let u_sub = utility(pi_ts_sub)?;
    let u_main = utility(pi_ts_main)?;
    let logits: Vec<f64> = u_sub
        .iter()
        .zip(&u_main)
        .map(|(s, m)| alpha * s + m)
        .collect();
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = peak + logits.iter().map(|l| (l - peak).exp()).sum::<f64>().ln();
    let probs: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
    let free_energy = -log_z / alpha;

    let expected_surprise: f64 = probs.iter().zip(&u_sub).map(|(p, u)| -p * u).sum();
    let kl: f64 = probs
        .iter()
        .zip(&logits)
        .zip(&u_main)
        .map(|((p, l), m)| p * (l - log_z - m))
        .sum();
    let simplified = expected_surprise + kl / alpha;
    if (simplified - free_energy).abs() > CONSISTENCY_TOL {
        return Err(FetsError::Consistency(format!(
            "simplified free energy {simplified} disagrees with -log(Z)/alpha = {free_energy}"
        )));
    }
    Ok(FreeEnergyEval {
        policy: ActionPolicy::from_weights(&probs)?,
        partition: log_z.exp(),
        free_energy,
    })
}

/// Index of the space with minimal free energy. Ties go to the main space,
/// then to the lowest index.
pub fn select_space(free_energies: &[f64], main_index: usize) -> Result<usize> {
    if free_energies.is_empty() {
        return Err(FetsError::invalid("no spaces to select from"));
    }
    if main_index >= free_energies.len() {
        return Err(FetsError::invalid(format!(
            "main index {main_index} out of range for {} spaces",
            free_energies.len()
        )));
    }
    let mut best = main_index;
    for (i, f) in free_energies.iter().enumerate() {
        if *f < free_energies[best] || (*f == free_energies[best] && i < best && best != main_index)
        {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::floor_policy;
    use proptest::prelude::*;

    fn pol(p: &[f64]) -> ActionPolicy {
        ActionPolicy::new(p.to_vec()).unwrap()
    }

    #[test]
    fn utility_examples() {
        let u = utility(&ActionPolicy::uniform(4)).unwrap();
        assert!(u.iter().all(|x| (x - (0.25f64).ln()).abs() < 1e-15));
        assert!((u[0] + 1.3863).abs() < 1e-4);
        assert_eq!(utility(&pol(&[1.0])).unwrap(), vec![0.0]);
        let u = utility(&pol(&[0.8, 0.2])).unwrap();
        assert!((u[0] + 0.2231).abs() < 1e-4 && (u[1] + 1.6094).abs() < 1e-4);
        assert!(matches!(
            utility(&pol(&[1.0, 0.0])),
            Err(FetsError::Domain(_))
        ));
    }

    #[test]
    fn tilted_utility_examples() {
        let u = [-0.3, -1.2];
        assert_eq!(tilted_utility(&u, &u, 7.0).unwrap(), u.to_vec());
        let main = [-2.0, -0.1];
        let t = tilted_utility(&u, &main, 1.0).unwrap();
        assert!(t.iter().zip(&main).all(|(a, b)| (a - b).abs() < 1e-15));
        let sub = utility(&pol(&[0.8, 0.2])).unwrap();
        let main = utility(&pol(&[0.5, 0.5])).unwrap();
        let t = tilted_utility(&sub, &main, 7.0).unwrap();
        let expected = 6.0 / 7.0 * 0.8f64.ln() + 0.5f64.ln() / 7.0;
        assert!((t[0] - expected).abs() < 1e-12);
        assert!((t[0] + 0.2903).abs() < 1e-4);
        assert!(tilted_utility(&[0.0], &[0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn evaluate_uniform_symmetry() {
        let u = ActionPolicy::uniform(4);
        for (alpha, beta) in [(0.5, 1.0), (4.0, 7.0), (9.0, 3.0)] {
            let e = evaluate(&u, &u, &u, FeParams::new(alpha, beta).unwrap()).unwrap();
            assert!((e.free_energy - 4f64.ln()).abs() < 1e-12);
            assert!((e.partition - 4f64.powf(-alpha)).abs() < 1e-12);
            for p in e.policy.probs() {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_two_action_example() {
        let ts = pol(&[0.8, 0.2]);
        let b = pol(&[0.5, 0.5]);
        let e = evaluate(&ts, &ts, &b, FeParams::new(1.0, 7.0).unwrap()).unwrap();
        assert!((e.partition - 0.5).abs() < 1e-12);
        assert!((e.policy.probs()[0] - 0.8).abs() < 1e-12);
        assert!((e.free_energy - 2f64.ln()).abs() < 1e-12);
        assert!(((-e.free_energy).exp() - e.partition).abs() < 1e-12);
    }

    #[test]
    fn ts_behavioral_uniform() {
        let u = ActionPolicy::uniform(5);
        let e = evaluate_ts_behavioral(&u, &u, 3.0).unwrap();
        assert!((e.free_energy - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ts_behavioral_equals_general_form_when_sub_is_main() {
        let p = pol(&[0.6, 0.3, 0.1]);
        let a = evaluate_ts_behavioral(&p, &p, 3.0).unwrap();
        let b = evaluate(&p, &p, &p, FeParams::new(3.0, 3.0).unwrap()).unwrap();
        assert!((a.free_energy - b.free_energy).abs() < 1e-12);
        for (x, y) in a.policy.probs().iter().zip(b.policy.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn select_space_examples() {
        assert_eq!(select_space(&[1.2, 0.9, 1.5], 0).unwrap(), 1);
        assert_eq!(select_space(&[1.0, 1.0], 0).unwrap(), 0);
        assert_eq!(select_space(&[2.0, 1.0, 1.0], 0).unwrap(), 1);
        assert_eq!(select_space(&[1.0, 1.0, 1.0], 2).unwrap(), 2);
        assert!(select_space(&[], 0).is_err());
        assert!(select_space(&[1.0], 1).is_err());
    }

    /// Partition values written out term by term for one-hot (after flooring)
    /// Thompson policies that disagree, with epsilon-greedy behavior.
    fn one_hot_partitions(eps: f64, n: usize, alpha: f64, beta: f64, xi: f64) -> (f64, f64) {
        let nf = n as f64;
        let z_sub = eps / nf * xi.powf(alpha * (beta - 1.0) / beta)
            + (1.0 - eps + eps / nf) * xi.powf(alpha / beta)
            + (nf - 2.0) * eps / nf * xi.powf(alpha);
        let z_main = (1.0 - eps + eps / nf) + (nf - 1.0) * eps / nf * xi.powf(alpha);
        (z_sub, z_main)
    }

    #[test]
    fn one_hot_limit_prefers_main_space() {
        let (eps, n, alpha, beta, xi) = (0.1, 4, 4.0, 7.0, 1e-4);
        let params = FeParams::new(alpha, beta).unwrap();
        let floor = |i: usize| floor_policy(&ActionPolicy::one_hot(n, i), xi).unwrap();
        let greedy = |i: usize| {
            let mut p = vec![eps / n as f64; n];
            p[i] = 1.0 - eps + eps / n as f64;
            pol(&p)
        };
        let main_ts = floor(0);
        let sub_ts = floor(1);
        let f_main = evaluate(&main_ts, &main_ts, &greedy(0), params).unwrap();
        let f_sub = evaluate(&sub_ts, &main_ts, &greedy(1), params).unwrap();
        assert!(f_main.free_energy < f_sub.free_energy);

        // The floored policies keep the smallest entries at exactly xi, but
        // the largest is 1 - 3 xi rather than 1, which costs a relative
        // factor of about (1 - 3 xi)^alpha in the leading terms.
        let (z_sub, z_main) = one_hot_partitions(eps, n, alpha, beta, xi);
        let slack = 1.0 - (1.0 - 3.0 * xi).powf(alpha) + 1e-9;
        assert!((f_main.partition / z_main - 1.0).abs() < slack);
        assert!((f_sub.partition / z_sub - 1.0).abs() < slack);
        assert!(-(z_main.ln()) / alpha < -(z_sub.ln()) / alpha);
    }

    fn floored(n: usize) -> impl Strategy<Value = ActionPolicy> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("mass", |w| {
            let t: f64 = w.iter().sum();
            (t > 1e-3).then(|| floor_policy(&ActionPolicy::from_weights(&w).unwrap(), 1e-4).unwrap())
        })
    }

    proptest! {
        #[test]
        fn identity_and_positivity(
            (a, b, c) in (2usize..7).prop_flat_map(|n| (floored(n), floored(n), floored(n))),
            alpha in 0.1f64..10.0,
            beta in 1.0f64..10.0,
        ) {
            let e = evaluate(&a, &b, &c, FeParams::new(alpha, beta).unwrap()).unwrap();
            prop_assert!(e.partition > 0.0 && e.partition <= 1.0 + 1e-12);
            prop_assert!(((-alpha * e.free_energy).exp() - e.partition).abs() < 1e-9);
            prop_assert!(e.policy.probs().iter().all(|p| *p > 0.0));
        }

        #[test]
        fn raising_one_utility_never_lowers_its_probability(
            tilted in prop::collection::vec(-9.0f64..0.0, 2..6),
            bump in 0.0f64..3.0,
            alpha in 0.1f64..10.0,
        ) {
            let b = ActionPolicy::uniform(tilted.len());
            let before = tilt(&tilted, &b, alpha).unwrap();
            let mut raised = tilted.clone();
            raised[0] += bump;
            let after = tilt(&raised, &b, alpha).unwrap();
            prop_assert!(after.policy.probs()[0] >= before.policy.probs()[0] - 1e-15);
        }
    }
}
