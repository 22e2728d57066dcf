//! Model-based tabular learning: count-based MDP estimates, value iteration
//! on the estimated model, and extended value iteration over L1 confidence
//! sets producing upper and lower action-value bounds.

use crate::belief::{argmax, GaussianBelief};
use crate::error::{FetsError, Result};

/// Count-based estimate of an MDP over `states` states and `actions` actions.
///
/// An optional absorbing terminal state has value zero and never receives
/// updates of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpEstimate {
    states: usize,
    actions: usize,
    terminal: Option<usize>,
    n_sa: Vec<u64>,
    next_counts: Vec<Vec<(usize, u64)>>,
    r_hat: Vec<f64>,
}

impl MdpEstimate {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            terminal: None,
            n_sa: vec![0; states * actions],
            next_counts: vec![Vec::new(); states * actions],
            r_hat: vec![0.0; states * actions],
        }
    }

    /// A model over `states` ordinary states plus one absorbing terminal
    /// state at index `states`.
    pub fn with_terminal(states: usize, actions: usize) -> Self {
        let mut m = Self::new(states + 1, actions);
        m.terminal = Some(states);
        m
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn terminal(&self) -> Option<usize> {
        self.terminal
    }

    pub fn n_sa(&self, s: usize, a: usize) -> u64 {
        self.n_sa[s * self.actions + a]
    }

    pub fn n_sas(&self, s: usize, a: usize, next: usize) -> u64 {
        self.next_counts[s * self.actions + a]
            .iter()
            .find(|(t, _)| *t == next)
            .map_or(0, |(_, c)| *c)
    }

    pub fn r_hat(&self, s: usize, a: usize) -> f64 {
        self.r_hat[s * self.actions + a]
    }

    /// Records one observed transition; the reward estimate is the running
    /// mean over visits of `(s, a)`.
    pub fn update(&mut self, s: usize, a: usize, next: usize, r: f64) -> Result<()> {
        if s >= self.states || a >= self.actions || next >= self.states {
            return Err(FetsError::invalid(format!(
                "transition ({s}, {a}) -> {next} outside a model of {} states and {} actions",
                self.states, self.actions
            )));
        }
        if Some(s) == self.terminal {
            return Err(FetsError::invalid("transition out of the absorbing terminal state"));
        }
        if !r.is_finite() {
            return Err(FetsError::invalid(format!("non-finite reward {r}")));
        }
        let i = s * self.actions + a;
        self.n_sa[i] += 1;
        self.r_hat[i] += (r - self.r_hat[i]) / self.n_sa[i] as f64;
        let row = &mut self.next_counts[i];
        match row.iter_mut().find(|(t, _)| *t == next) {
            Some((_, c)) => *c += 1,
            None => row.push((next, 1)),
        }
        Ok(())
    }

    /// Add-one smoothed transition weight `(n(s,a,s') + 1) / (n(s,a) + 1)`
    /// before normalization.
    pub fn transition_raw(&self, s: usize, a: usize, next: usize) -> f64 {
        (self.n_sas(s, a, next) + 1) as f64 / (self.n_sa(s, a) + 1) as f64
    }

    /// Smoothed next-state distribution, normalized to sum to one. The
    /// normalized entries are `(n(s,a,s') + 1) / (n(s,a) + S)`.
    pub fn transition_estimate(&self, s: usize, a: usize) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.states);
        self.fill_transition(s, a, &mut p);
        p
    }

    fn fill_transition(&self, s: usize, a: usize, out: &mut Vec<f64>) {
        let i = s * self.actions + a;
        let denom = (self.n_sa[i] + self.states as u64) as f64;
        out.clear();
        out.resize(self.states, 1.0 / denom);
        for &(t, c) in &self.next_counts[i] {
            out[t] = (c + 1) as f64 / denom;
        }
    }

    /// `E[V(s')]` under the smoothed estimate, given `sum_v = sum_s' V(s')`.
    fn expected_value(&self, s: usize, a: usize, values: &[f64], sum_v: f64) -> f64 {
        let i = s * self.actions + a;
        let denom = (self.n_sa[i] + self.states as u64) as f64;
        let seen: f64 = self.next_counts[i]
            .iter()
            .map(|(t, c)| *c as f64 * values[*t])
            .sum();
        (seen + sum_v) / denom
    }
}

/// Action values laid out state-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QValues {
    actions: usize,
    values: Vec<f64>,
}

impl QValues {
    pub fn zeros(states: usize, actions: usize) -> Self {
        Self {
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.actions..(s + 1) * self.actions]
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn states(&self) -> usize {
        self.values.len() / self.actions
    }

    fn state_values(&self, terminal: Option<usize>) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .values
            .chunks(self.actions)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        if let Some(t) = terminal {
            v[t] = 0.0;
        }
        v
    }
}

/// Stopping rule for value iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViParams {
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ViParams {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tol: 1e-6,
            max_iters: 100_000,
        }
    }
}

impl ViParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(FetsError::invalid(format!(
                "gamma must lie in [0,1), got {}",
                self.gamma
            )));
        }
        if !(self.tol > 0.0) {
            return Err(FetsError::invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

fn check_init(model: &MdpEstimate, init: Option<&QValues>) -> Result<QValues> {
    match init {
        Some(q) if q.values.len() == model.states * model.actions && q.actions == model.actions => {
            Ok(q.clone())
        }
        Some(_) => Err(FetsError::invalid("initial values do not match the model shape")),
        None => Ok(QValues::zeros(model.states, model.actions)),
    }
}

/// Value iteration for the optimality equation under the smoothed estimate.
/// `init` warm-starts the iteration.
pub fn solve_q(model: &MdpEstimate, params: ViParams, init: Option<&QValues>) -> Result<QValues> {
    params.validate()?;
    let mut q = check_init(model, init)?;
    if let Some(t) = model.terminal {
        q.values[t * model.actions..(t + 1) * model.actions].fill(0.0);
    }
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iters {
        let v = q.state_values(model.terminal);
        let sum_v: f64 = v.iter().sum();
        residual = 0.0;
        for s in 0..model.states {
            if Some(s) == model.terminal {
                continue;
            }
            for a in 0..model.actions {
                let new = model.r_hat(s, a) + params.gamma * model.expected_value(s, a, &v, sum_v);
                let i = s * model.actions + a;
                residual = f64::max(residual, (new - q.values[i]).abs());
                q.values[i] = new;
            }
        }
        if residual < params.tol {
            return Ok(q);
        }
    }
    Err(FetsError::Convergence {
        iterations: params.max_iters,
        residual,
    })
}

/// How confidence radii are derived from visit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusRule {
    /// UCRL2 radii with the union bound over states, actions and time.
    Ucrl2,
    /// Per-pair Hoeffding (reward) and Weissman (L1 transition) radii at
    /// level `delta`, without a union bound over pairs or time.
    PerPair,
}

impl std::str::FromStr for RadiusRule {
    type Err = FetsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucrl2" => Ok(RadiusRule::Ucrl2),
            "per-pair" => Ok(RadiusRule::PerPair),
            other => Err(FetsError::invalid(format!(
                "unknown radius rule '{other}' (expected ucrl2 or per-pair)"
            ))),
        }
    }
}

impl std::fmt::Display for RadiusRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RadiusRule::Ucrl2 => "ucrl2",
            RadiusRule::PerPair => "per-pair",
        })
    }
}

/// UCRL2 reward and L1 transition radii for one pair at total timestep `t`.
pub fn radii(
    model: &MdpEstimate,
    s: usize,
    a: usize,
    t: u64,
    delta: f64,
    reward_span: f64,
) -> (f64, f64) {
    radii_with(RadiusRule::Ucrl2, model, s, a, t, delta, reward_span)
}

pub fn radii_with(
    rule: RadiusRule,
    model: &MdpEstimate,
    s: usize,
    a: usize,
    t: u64,
    delta: f64,
    reward_span: f64,
) -> (f64, f64) {
    let n = model.n_sa(s, a).max(1) as f64;
    let states = model.states as f64;
    match rule {
        RadiusRule::Ucrl2 => {
            let t = t.max(1) as f64;
            let actions = model.actions as f64;
            let eps_r = reward_span * (7.0 * (2.0 * states * actions * t / delta).ln() / (2.0 * n)).sqrt();
            let d = (14.0 * states * (2.0 * actions * t / delta).ln() / n).sqrt();
            (eps_r, d)
        }
        RadiusRule::PerPair => {
            let eps_r = reward_span * ((2.0 / delta).ln() / (2.0 * n)).sqrt();
            // P(|p_hat - p|_1 >= d) <= (2^S - 2) exp(-n d^2 / 2)
            let d = if model.states < 2 {
                0.0
            } else {
                let ln_sets = states * std::f64::consts::LN_2 + (1.0 - 2f64.powf(1.0 - states)).ln();
                (2.0 * (ln_sets - delta.ln()) / n).sqrt()
            };
            (eps_r, d)
        }
    }
}

/// Distribution within L1 distance `d` of `p_hat` that maximizes the
/// expected value: move up to `d/2` mass onto the best state and take it
/// from the worst states first.
pub fn inner_max_l1(values: &[f64], p_hat: &[f64], d: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*b].total_cmp(&values[*a]));
    let mut p = p_hat.to_vec();
    shift_mass(&mut p, &order, d);
    p
}

/// Mass shift of [`inner_max_l1`] given states sorted by decreasing value.
fn shift_mass(p: &mut [f64], order: &[usize], d: f64) {
    if order.is_empty() {
        return;
    }
    let best = order[0];
    let added = (d / 2.0).min(1.0 - p[best]).max(0.0);
    p[best] += added;
    let mut excess = added;
    for &i in order.iter().skip(1).rev() {
        if excess <= 0.0 {
            break;
        }
        let take = p[i].min(excess);
        p[i] -= take;
        excess -= take;
    }
}

/// Discount, confidence level and stopping rule for extended value iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub vi: ViParams,
    pub delta: f64,
    pub reward_span: f64,
    pub rule: RadiusRule,
}

/// Point estimate with upper and lower action-value bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct QBounds {
    pub q_hat: QValues,
    pub q_upper: QValues,
    pub q_lower: QValues,
}

/// Extended value iteration: the optimistic and pessimistic fixed points
/// over reward intervals and L1 transition balls around the smoothed
/// estimate. `t` is the total number of steps taken so far.
pub fn extended_vi(
    model: &MdpEstimate,
    t: u64,
    params: BoundParams,
    init: Option<&QBounds>,
) -> Result<QBounds> {
    params.vi.validate()?;
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(FetsError::invalid(format!(
            "delta must lie in (0,1), got {}",
            params.delta
        )));
    }
    let q_hat = solve_q(model, params.vi, init.map(|b| &b.q_hat))?;
    let radii: Vec<(f64, f64)> = (0..model.states)
        .flat_map(|s| (0..model.actions).map(move |a| (s, a)))
        .map(|(s, a)| radii_with(params.rule, model, s, a, t, params.delta, params.reward_span))
        .collect();
    let upper_init = init.map(|b| &b.q_upper).unwrap_or(&q_hat);
    let lower_init = init.map(|b| &b.q_lower).unwrap_or(&q_hat);
    let mut q_upper = bound_iteration(model, &radii, params.vi, upper_init, true)?;
    let mut q_lower = bound_iteration(model, &radii, params.vi, lower_init, false)?;
    // the exact fixed points are ordered; remove residual iteration noise
    for i in 0..q_hat.values.len() {
        q_upper.values[i] = q_upper.values[i].max(q_hat.values[i]);
        q_lower.values[i] = q_lower.values[i].min(q_hat.values[i]);
    }
    Ok(QBounds {
        q_hat,
        q_upper,
        q_lower,
    })
}

/// Values sorted ascending with prefix sums, for the sparse inner
/// maximization.
struct SortedValues {
    w: Vec<f64>,
    order: Vec<usize>,
    rank: Vec<usize>,
    // prefix[r] = sum of the r smallest values
    prefix: Vec<f64>,
}

impl SortedValues {
    fn new(states: usize) -> Self {
        Self {
            w: vec![0.0; states],
            order: (0..states).collect(),
            rank: vec![0; states],
            prefix: vec![0.0; states + 1],
        }
    }

    fn refresh(&mut self, w: Vec<f64>) {
        self.w = w;
        let w = &self.w;
        self.order.sort_by(|a, b| w[*a].total_cmp(&w[*b]));
        for (r, &i) in self.order.iter().enumerate() {
            self.rank[i] = r;
            self.prefix[r + 1] = self.prefix[r] + w[i];
        }
    }

    fn sorted(&self, r: usize) -> f64 {
        self.w[self.order[r]]
    }
}

/// `max E_p[w]` over the L1 ball of radius `d` around the smoothed estimate
/// for `(s, a)`. Equivalent to [`inner_max_l1`] but linear in the number of
/// observed successors rather than the number of states.
fn sparse_inner_max(
    model: &MdpEstimate,
    s: usize,
    a: usize,
    d: f64,
    sv: &SortedValues,
    visited: &mut Vec<(usize, f64)>,
) -> f64 {
    let states = model.states;
    let i = s * model.actions + a;
    let denom = (model.n_sa[i] + states as u64) as f64;
    let base = 1.0 / denom;
    let best = sv.order[states - 1];
    let top = sv.w[best];
    if d >= 2.0 {
        return top;
    }
    let counts = &model.next_counts[i];
    let mut expected = sv.prefix[states];
    let mut p_best = base;
    visited.clear();
    for &(t, c) in counts {
        let extra = c as f64 / denom;
        expected += c as f64 * sv.w[t];
        if t == best {
            p_best += extra;
        } else {
            visited.push((sv.rank[t], extra));
        }
    }
    expected /= denom;
    let add = (d / 2.0).min(1.0 - p_best).max(0.0);
    if add == 0.0 {
        return expected;
    }
    visited.sort_by_key(|(r, _)| *r);

    // take `add` from the lowest-ranked states, excluding the best one
    let mut remaining = add;
    let mut removed = 0.0;
    let mut r = 0;
    let limit = states - 1;
    let mut segments = visited.iter().copied().chain(std::iter::once((limit, 0.0)));
    while remaining > 0.0 {
        let Some((next_rank, extra)) = segments.next() else { break };
        // unvisited states in ranks [r, next_rank) each hold `base`
        let span = next_rank - r;
        let span_mass = span as f64 * base;
        if remaining <= span_mass {
            let full = ((remaining / base).floor() as usize).min(span);
            removed += base * (sv.prefix[r + full] - sv.prefix[r]);
            let left = remaining - full as f64 * base;
            if left > 0.0 && full < span {
                removed += left * sv.sorted(r + full);
            }
            remaining = 0.0;
            break;
        }
        removed += base * (sv.prefix[next_rank] - sv.prefix[r]);
        remaining -= span_mass;
        if next_rank == limit {
            break;
        }
        let mass = base + extra;
        let take = mass.min(remaining);
        removed += take * sv.sorted(next_rank);
        remaining -= take;
        r = next_rank + 1;
    }
    expected + (add - remaining) * top - removed
}

fn bound_iteration(
    model: &MdpEstimate,
    radii: &[(f64, f64)],
    vi: ViParams,
    init: &QValues,
    optimistic: bool,
) -> Result<QValues> {
    let mut q = check_init(model, Some(init))?;
    if let Some(t) = model.terminal {
        q.values[t * model.actions..(t + 1) * model.actions].fill(0.0);
    }
    // the pessimistic bound maximizes -V
    let sign = if optimistic { 1.0 } else { -1.0 };
    let mut sv = SortedValues::new(model.states);
    let mut visited = Vec::new();
    let mut residual = f64::INFINITY;
    for _ in 0..vi.max_iters {
        let w = q
            .state_values(model.terminal)
            .into_iter()
            .map(|v| sign * v)
            .collect();
        sv.refresh(w);
        residual = 0.0;
        for s in 0..model.states {
            if Some(s) == model.terminal {
                continue;
            }
            for a in 0..model.actions {
                let i = s * model.actions + a;
                let (eps_r, d) = radii[i];
                let next_value = sign * sparse_inner_max(model, s, a, d, &sv, &mut visited);
                let new = model.r_hat(s, a) + sign * eps_r + vi.gamma * next_value;
                residual = f64::max(residual, (new - q.values[i]).abs());
                q.values[i] = new;
            }
        }
        if residual < vi.tol {
            return Ok(q);
        }
    }
    Err(FetsError::Convergence {
        iterations: vi.max_iters,
        residual,
    })
}

/// Gaussian belief from bounds: mean `q_hat`, std = interval width / (2 z).
pub fn mb_belief(bounds: &QBounds, s: usize, a: usize, z_quantile: f64) -> Result<GaussianBelief> {
    if !(z_quantile > 0.0) {
        return Err(FetsError::invalid(format!(
            "z quantile must be positive, got {z_quantile}"
        )));
    }
    let width = bounds.q_upper.get(s, a) - bounds.q_lower.get(s, a);
    GaussianBelief::new(bounds.q_hat.get(s, a), width.max(0.0) / (2.0 * z_quantile))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vi(gamma: f64) -> ViParams {
        ViParams {
            gamma,
            tol: 1e-10,
            max_iters: 100_000,
        }
    }

    #[test]
    fn update_examples() {
        let mut m = MdpEstimate::new(3, 2);
        m.update(0, 1, 2, 2.0).unwrap();
        assert_eq!((m.n_sa(0, 1), m.r_hat(0, 1)), (1, 2.0));
        m.update(0, 1, 2, 3.0).unwrap();
        m.update(0, 1, 1, 1.0).unwrap();
        assert_eq!(m.r_hat(0, 1), 2.0);
        assert_eq!(m.n_sas(0, 1, 2), 2);
        assert!(m.update(3, 0, 0, 0.0).is_err());
    }

    #[test]
    fn raw_smoothing_example() {
        let mut m = MdpEstimate::new(2, 1);
        for i in 0..9 {
            m.update(0, 0, usize::from(i >= 3), 0.0).unwrap();
        }
        assert_eq!((m.n_sas(0, 0, 0), m.n_sa(0, 0)), (3, 9));
        assert!((m.transition_raw(0, 0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn transition_examples() {
        let m = MdpEstimate::new(4, 1);
        assert_eq!(m.transition_estimate(0, 0), vec![0.25; 4]);

        let mut m = MdpEstimate::new(2, 1);
        for _ in 0..9 {
            m.update(0, 0, 0, 0.0).unwrap();
        }
        assert!((m.transition_raw(0, 0, 0) - 1.0).abs() < 1e-15);
        assert!((m.transition_raw(0, 0, 1) - 0.1).abs() < 1e-15);
        let p = m.transition_estimate(0, 0);
        assert!((p[0] - 10.0 / 11.0).abs() < 1e-15 && (p[1] - 1.0 / 11.0).abs() < 1e-15);

        let mut m = MdpEstimate::new(3, 1);
        for i in 0..30_000 {
            m.update(0, 0, [0, 1, 1][i % 3], 0.0).unwrap();
        }
        let p = m.transition_estimate(0, 0);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-3 && (p[1] - 2.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn absorbing_reward_state_value() {
        let mut m = MdpEstimate::new(1, 1);
        for _ in 0..10 {
            m.update(0, 0, 0, 1.0).unwrap();
        }
        let q = solve_q(&m, vi(0.9), None).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-8);
        let zero = solve_q(&MdpEstimate::new(5, 3), vi(0.9), None).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
    }

    /// Deterministic two-state chain: state 0 moves to 1 (r = 0) or stays
    /// (r = 0); state 1 ends the episode with r = 1 or loops with r = 0.
    fn chain_model(visits: u64) -> MdpEstimate {
        let mut m = MdpEstimate::with_terminal(2, 2);
        for _ in 0..visits {
            m.update(0, 0, 1, 0.0).unwrap();
            m.update(0, 1, 0, 0.0).unwrap();
            m.update(1, 0, 2, 1.0).unwrap();
            m.update(1, 1, 1, 0.0).unwrap();
        }
        m
    }

    #[test]
    fn chain_matches_policy_enumeration() {
        let gamma = 0.5;
        let m = chain_model(1_000_000);
        let q = solve_q(&m, vi(gamma), None).unwrap();
        // brute force over the four deterministic policies of the true chain
        let mut best = [f64::NEG_INFINITY; 2];
        for pol in 0..4 {
            let a0 = pol & 1;
            let a1 = pol >> 1;
            let v1 = if a1 == 0 { 1.0 } else { 0.0 };
            let v0 = if a0 == 0 { gamma * v1 } else { 0.0 };
            best[0] = best[0].max(v0);
            best[1] = best[1].max(v1);
        }
        // residual smoothing mass decays as 1/n
        assert!((q.get(0, 0) - gamma * best[1]).abs() < 1e-5);
        assert!((q.get(1, 0) - best[1]).abs() < 1e-5);
        assert!((q.row(0).iter().cloned().fold(f64::MIN, f64::max) - best[0]).abs() < 1e-5);
    }

    #[test]
    fn solve_q_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = MdpEstimate::with_terminal(4, 3);
        for _ in 0..200 {
            let s = rng.random_range(0..4);
            m.update(s, rng.random_range(0..3), rng.random_range(0..5), rng.random_range(-1.0..1.0))
                .unwrap();
        }
        let params = ViParams { gamma: 0.9, tol: 1e-8, max_iters: 10_000 };
        let q = solve_q(&m, params, None).unwrap();
        let v = q.state_values(m.terminal());
        for s in 0..4 {
            for a in 0..3 {
                let p = m.transition_estimate(s, a);
                let backup = m.r_hat(s, a) + 0.9 * p.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
                assert!((backup - q.get(s, a)).abs() <= params.tol);
            }
        }
    }

    #[test]
    fn convergence_error_reports_residual() {
        let mut m = MdpEstimate::new(1, 1);
        m.update(0, 0, 0, 1.0).unwrap();
        let params = ViParams { gamma: 0.99, tol: 1e-12, max_iters: 3 };
        match solve_q(&m, params, None) {
            Err(FetsError::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn radii_examples() {
        let mut m = MdpEstimate::new(2, 4);
        for _ in 0..10 {
            m.update(0, 0, 1, 0.0).unwrap();
        }
        let (eps, d) = radii(&m, 0, 0, 100, 0.05, 1.0);
        // independent evaluation of the UCRL2 expressions
        let log_r = (2.0f64 * 2.0 * 4.0 * 100.0 / 0.05).ln();
        let log_p = (2.0f64 * 4.0 * 100.0 / 0.05).ln();
        assert!((eps - (3.5 * log_r / 10.0).sqrt()).abs() < 1e-12);
        assert!((d - (14.0 * 2.0 * log_p / 10.0).sqrt()).abs() < 1e-12);

        let mut m2 = m.clone();
        for _ in 0..10 {
            m2.update(0, 0, 1, 0.0).unwrap();
        }
        let (eps2, d2) = radii(&m2, 0, 0, 100, 0.05, 1.0);
        assert!((eps / eps2 - 2f64.sqrt()).abs() < 1e-12);
        assert!((d / d2 - 2f64.sqrt()).abs() < 1e-12);

        let mut big = MdpEstimate::new(2, 4);
        for _ in 0..1_000_000 {
            big.update(0, 0, 1, 0.0).unwrap();
        }
        for rule in [RadiusRule::Ucrl2, RadiusRule::PerPair] {
            let (e, d) = radii_with(rule, &big, 0, 0, 100, 0.05, 1.0);
            assert!(e < 0.01 && d < 0.05, "{rule}");
        }
    }

    #[test]
    fn inner_max_examples() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(inner_max_l1(&[3.0, 1.0, 2.0], &p, 0.0), p.to_vec());
        assert_eq!(inner_max_l1(&[3.0, 1.0, 2.0], &p, 2.0), vec![1.0, 0.0, 0.0]);
        let q = inner_max_l1(&[1.0, 0.0], &[0.5, 0.5], 0.4);
        assert!((q[0] - 0.7).abs() < 1e-15 && (q[1] - 0.3).abs() < 1e-15);
    }

    /// Brute-force grid search over the L1 ball for two states.
    fn grid_max_two(values: [f64; 2], p0: f64, d: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let q = k as f64 / 1000.0;
            if 2.0 * (q - p0).abs() <= d + 1e-12 {
                best = best.max(q * values[0] + (1.0 - q) * values[1]);
            }
        }
        best
    }

    #[test]
    fn inner_max_matches_grid_for_two_states() {
        let q = inner_max_l1(&[1.0, 0.0], &[0.5, 0.5], 0.4);
        assert!((q[0] - grid_max_two([1.0, 0.0], 0.5, 0.4)).abs() < 1e-3);
    }

    /// Sets counts directly; equivalent to `n` identical updates.
    fn bulk(m: &mut MdpEstimate, s: usize, a: usize, next: usize, r: f64, n: u64) {
        let i = s * m.actions + a;
        m.n_sa[i] = n;
        m.r_hat[i] = r;
        m.next_counts[i] = vec![(next, n)];
    }

    #[test]
    fn zero_radius_bounds_collapse() {
        let mut m = MdpEstimate::with_terminal(2, 2);
        let n = 1_000_000_000_000;
        bulk(&mut m, 0, 0, 1, 0.0, n);
        bulk(&mut m, 0, 1, 0, 0.0, n);
        bulk(&mut m, 1, 0, 2, 1.0, n);
        bulk(&mut m, 1, 1, 1, 0.0, n);
        let params = BoundParams {
            vi: vi(0.5),
            delta: 0.999_999,
            reward_span: 0.0,
            rule: RadiusRule::PerPair,
        };
        let b = extended_vi(&m, 1, params, None).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert!((b.q_upper.get(s, a) - b.q_hat.get(s, a)).abs() < 1e-5);
                assert!((b.q_lower.get(s, a) - b.q_hat.get(s, a)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn wider_confidence_never_narrows() {
        let m = chain_model(5);
        let mk = |delta| BoundParams {
            vi: vi(0.9),
            delta,
            reward_span: 1.0,
            rule: RadiusRule::Ucrl2,
        };
        let narrow = extended_vi(&m, 40, mk(0.2), None).unwrap();
        let wide = extended_vi(&m, 40, mk(0.001), None).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!(wide.q_upper.get(s, a) >= narrow.q_upper.get(s, a) - 1e-9);
                assert!(wide.q_lower.get(s, a) <= narrow.q_lower.get(s, a) + 1e-9);
            }
        }
    }

    /// Optimistic value iteration for a two-state, two-action model where the
    /// inner maximization is a grid search over the transition ball and the
    /// reward is pushed to the top of its interval.
    fn brute_force_upper(m: &MdpEstimate, radii: &[(f64, f64)], gamma: f64) -> [[f64; 2]; 2] {
        let mut q = [[0.0f64; 2]; 2];
        for _ in 0..2_000 {
            let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
            let mut next = q;
            for s in 0..2 {
                for a in 0..2 {
                    let p0 = m.transition_estimate(s, a)[0];
                    let (eps, d) = radii[s * 2 + a];
                    next[s][a] = m.r_hat(s, a) + eps + gamma * grid_max_two(v, p0, d);
                }
            }
            q = next;
        }
        q
    }

    #[test]
    fn bounds_match_brute_force_on_two_states() {
        let mut m = MdpEstimate::new(2, 2);
        let counts = [(0, 0, [6, 2], 0.3), (0, 1, [1, 5], -0.2), (1, 0, [3, 3], 1.0), (1, 1, [0, 9], 0.1)];
        for (s, a, c, r) in counts {
            for (next, n) in c.iter().enumerate() {
                for _ in 0..*n {
                    m.update(s, a, next, r).unwrap();
                }
            }
        }
        let params = BoundParams {
            vi: ViParams { gamma: 0.8, tol: 1e-10, max_iters: 100_000 },
            delta: 0.3,
            reward_span: 0.5,
            rule: RadiusRule::PerPair,
        };
        let radii: Vec<_> = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| radii_with(params.rule, &m, s, a, 50, 0.3, 0.5))
            .collect();
        let b = extended_vi(&m, 50, params, None).unwrap();
        let oracle = brute_force_upper(&m, &radii, 0.8);
        for s in 0..2 {
            for a in 0..2 {
                // grid resolution 1e-3 on the mass times the value range
                assert!((b.q_upper.get(s, a) - oracle[s][a]).abs() < 5e-2, "({s},{a})");
            }
        }
    }

    #[test]
    fn belief_examples() {
        let mut q = QValues::zeros(1, 1);
        q.values[0] = 0.0;
        let mut up = q.clone();
        up.values[0] = 1.96;
        let mut lo = q.clone();
        lo.values[0] = -1.96;
        let b = QBounds { q_hat: q.clone(), q_upper: up, q_lower: lo };
        let g = mb_belief(&b, 0, 0, 1.96).unwrap();
        assert_eq!((g.mean(), g.std()), (0.0, 1.0));

        let point = QBounds { q_hat: q.clone(), q_upper: q.clone(), q_lower: q.clone() };
        assert_eq!(mb_belief(&point, 0, 0, 1.96).unwrap().std(), 0.0);

        let mk = |v: f64| QValues { actions: 1, values: vec![v] };
        let b = QBounds { q_hat: mk(5.0), q_upper: mk(7.0), q_lower: mk(3.0) };
        let g = mb_belief(&b, 0, 0, 2.0).unwrap();
        assert_eq!((g.mean(), g.std()), (5.0, 1.0));
    }

    #[test]
    fn bounds_cover_true_values_on_known_mdp() {
        // three states, two actions, state 2 terminal
        let trans = [[[0.7, 0.2, 0.1], [0.1, 0.6, 0.3]], [[0.3, 0.3, 0.4], [0.0, 0.2, 0.8]]];
        let rew = [[0.2, -0.1], [0.5, 0.0]];
        let gamma = 0.8;
        let mut q_true = [[0.0f64; 2]; 2];
        for _ in 0..2_000 {
            let v = [q_true[0][0].max(q_true[0][1]), q_true[1][0].max(q_true[1][1]), 0.0];
            for s in 0..2 {
                for a in 0..2 {
                    q_true[s][a] = rew[s][a] + gamma * (0..3).map(|t| trans[s][a][t] * v[t]).sum::<f64>();
                }
            }
        }
        let mut covered = 0;
        let trials = 200;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = MdpEstimate::with_terminal(2, 2);
            for s in 0..2 {
                for a in 0..2 {
                    for _ in 0..40 {
                        let u: f64 = rng.random();
                        let next = if u < trans[s][a][0] {
                            0
                        } else if u < trans[s][a][0] + trans[s][a][1] {
                            1
                        } else {
                            2
                        };
                        let r = rew[s][a] + rng.random_range(-0.5..0.5);
                        m.update(s, a, next, r).unwrap();
                    }
                }
            }
            let params = BoundParams {
                vi: ViParams { gamma, tol: 1e-8, max_iters: 100_000 },
                delta: 0.05,
                reward_span: 1.0,
                rule: RadiusRule::Ucrl2,
            };
            let b = extended_vi(&m, 160, params, None).unwrap();
            let inside = (0..2).all(|s| {
                (0..2).all(|a| b.q_lower.get(s, a) <= q_true[s][a] && q_true[s][a] <= b.q_upper.get(s, a))
            });
            covered += usize::from(inside);
        }
        assert!(covered as f64 >= 0.9 * trials as f64, "coverage {covered}/{trials}");
    }

    proptest! {
        #[test]
        fn sparse_inner_max_matches_dense(
            seed in any::<u64>(),
            states in 2usize..9,
            visits in 0usize..30,
            d in 0.0f64..2.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = MdpEstimate::new(states, 1);
            for _ in 0..visits {
                // few distinct successors, as in a grid
                m.update(0, 0, rng.random_range(0..states.min(3)), 0.0).unwrap();
            }
            // integer values produce ties
            let values: Vec<f64> = (0..states).map(|_| rng.random_range(-3..4) as f64).collect();
            let mut sv = SortedValues::new(states);
            sv.refresh(values.clone());
            let sparse = sparse_inner_max(&m, 0, 0, d, &sv, &mut Vec::new());
            let dense = inner_max_l1(&values, &m.transition_estimate(0, 0), d);
            let dense_value: f64 = dense.iter().zip(&values).map(|(p, v)| p * v).sum();
            prop_assert!((sparse - dense_value).abs() < 1e-12, "{} vs {}", sparse, dense_value);
        }

        #[test]
        fn inner_max_is_feasible_and_dominant(
            values in prop::collection::vec(-10.0f64..10.0, 2..8),
            weights in prop::collection::vec(0.01f64..1.0, 8),
            d in 0.0f64..2.5,
            seed in any::<u64>(),
        ) {
            let n = values.len();
            let total: f64 = weights[..n].iter().sum();
            let p_hat: Vec<f64> = weights[..n].iter().map(|w| w / total).collect();
            let p = inner_max_l1(&values, &p_hat, d);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| (-1e-15..=1.0 + 1e-15).contains(x)));
            let l1: f64 = p.iter().zip(&p_hat).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(l1 <= d + 1e-12);
            let ev = |q: &[f64]| q.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>();
            let best = ev(&p);
            prop_assert!(best >= ev(&p_hat) - 1e-12);
            // random feasible competitors: mix p_hat toward random points
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let rt: f64 = raw.iter().sum();
                let target: Vec<f64> = raw.iter().map(|x| x / rt).collect();
                let dist: f64 = target.iter().zip(&p_hat).map(|(a, b)| (a - b).abs()).sum();
                let lam = if dist > d { d / dist } else { 1.0 } * rng.random::<f64>();
                let cand: Vec<f64> = p_hat.iter().zip(&target).map(|(a, b)| a + lam * (b - a)).collect();
                prop_assert!(best >= ev(&cand) - 1e-12);
            }
        }

        #[test]
        fn bounds_are_ordered(seed in any::<u64>(), visits in 0usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = MdpEstimate::with_terminal(3, 2);
            for _ in 0..visits {
                let s = rng.random_range(0..3);
                m.update(s, rng.random_range(0..2), rng.random_range(0..4), rng.random_range(-2.0..1.0)).unwrap();
            }
            let params = BoundParams {
                vi: ViParams { gamma: 0.9, tol: 1e-6, max_iters: 100_000 },
                delta: 0.05,
                reward_span: 3.0,
                rule: RadiusRule::Ucrl2,
            };
            let b = extended_vi(&m, visits as u64 + 1, params, None).unwrap();
            for s in 0..4 {
                for a in 0..2 {
                    prop_assert!(b.q_lower.get(s, a) <= b.q_hat.get(s, a));
                    prop_assert!(b.q_hat.get(s, a) <= b.q_upper.get(s, a));
                }
            }
        }
    }
}
