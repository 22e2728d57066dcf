//! Model-free tabular learning: Watkins Q(lambda), every-visit Monte-Carlo
//! return statistics, and Student-t confidence intervals over action values.

use crate::belief::argmax;
use crate::error::{FetsError, Result};
use crate::stats::{normal_quantile, t_quantile};

/// Temporal-difference hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdParams {
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
}

impl TdParams {
    pub fn new(gamma: f64, eta: f64, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(FetsError::invalid(format!("gamma must lie in [0,1), got {gamma}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(FetsError::invalid(format!("eta must lie in (0,1], got {eta}")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(FetsError::invalid(format!("lambda must lie in [0,1], got {lambda}")));
        }
        Ok(Self { gamma, eta, lambda })
    }
}

/// Action values and eligibility traces over a finite state-action space.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    q: Vec<f64>,
    trace: Vec<f64>,
    // indices with a non-zero trace
    active: Vec<usize>,
}

/// Traces below this weight are dropped.
const TRACE_CUTOFF: f64 = 1e-10;

impl QTable {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            q: vec![0.0; states * actions],
            trace: vec![0.0; states * actions],
            active: Vec::new(),
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.actions + a]
    }

    pub fn set_value(&mut self, s: usize, a: usize, v: f64) {
        self.q[s * self.actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.actions..(s + 1) * self.actions]
    }

    pub fn trace(&self, s: usize, a: usize) -> f64 {
        self.trace[s * self.actions + a]
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    /// Clears eligibility at an episode boundary.
    pub fn start_episode(&mut self) {
        for &i in &self.active {
            self.trace[i] = 0.0;
        }
        self.active.clear();
    }

    /// One Watkins Q(lambda) step with replacing traces.
    ///
    /// `next` is `None` for a transition into a terminal state. When the
    /// action taken was exploratory (`greedy_action_taken == false`) the
    /// traces of earlier pairs are cut before the current pair is marked.
    pub fn update(
        &mut self,
        s: usize,
        a: usize,
        r: f64,
        next: Option<usize>,
        params: TdParams,
        greedy_action_taken: bool,
    ) -> Result<()> {
        if s >= self.states || a >= self.actions || next.is_some_and(|n| n >= self.states) {
            return Err(FetsError::invalid(format!(
                "transition ({s}, {a}) -> {next:?} outside a {}x{} table",
                self.states, self.actions
            )));
        }
        if !r.is_finite() {
            return Err(FetsError::invalid(format!("non-finite reward {r}")));
        }
        let bootstrap = next
            .map(|n| self.row(n).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(0.0);
        let idx = s * self.actions + a;
        let delta = r + params.gamma * bootstrap - self.q[idx];
        if !greedy_action_taken {
            self.start_episode();
        }
        if self.trace[idx] == 0.0 {
            self.active.push(idx);
        }
        self.trace[idx] = 1.0;
        let decay = params.gamma * params.lambda;
        let (q, trace) = (&mut self.q, &mut self.trace);
        self.active.retain(|&i| {
            q[i] += params.eta * delta * trace[i];
            trace[i] *= decay;
            if trace[i] < TRACE_CUTOFF {
                trace[i] = 0.0;
                false
            } else {
                true
            }
        });
        Ok(())
    }
}

/// Per-pair sufficient statistics of Monte-Carlo return samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnStats {
    actions: usize,
    n: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// Statistics for a single state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

/// One return sample for a visited pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnSample {
    pub state: usize,
    pub action: usize,
    pub value: f64,
}

impl ReturnStats {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            actions,
            n: vec![0; states * actions],
            sum: vec![0.0; states * actions],
            sum_sq: vec![0.0; states * actions],
        }
    }

    pub fn pair(&self, s: usize, a: usize) -> PairStats {
        let i = s * self.actions + a;
        PairStats {
            n: self.n[i],
            sum: self.sum[i],
            sum_sq: self.sum_sq[i],
        }
    }

    pub fn add(&mut self, sample: ReturnSample) {
        let i = sample.state * self.actions + sample.action;
        self.n[i] += 1;
        self.sum[i] += sample.value;
        self.sum_sq[i] += sample.value * sample.value;
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = ReturnSample>) {
        for s in samples {
            self.add(s);
        }
    }
}

/// Every-visit discounted returns for a finished trajectory of
/// `(state, action, reward)` steps.
pub fn record_returns(trajectory: &[(usize, usize, f64)], gamma: f64) -> Vec<ReturnSample> {
    let mut out = Vec::with_capacity(trajectory.len());
    let mut g = 0.0;
    for &(state, action, reward) in trajectory.iter().rev() {
        g = reward + gamma * g;
        out.push(ReturnSample {
            state,
            action,
            value: g,
        });
    }
    out.reverse();
    out
}

/// Sample standard deviation of the returns recorded for one pair.
pub fn sample_std(stats: PairStats) -> Result<f64> {
    if stats.n < 2 {
        return Err(FetsError::InsufficientData(format!(
            "sample standard deviation needs n >= 2, got {}",
            stats.n
        )));
    }
    let n = stats.n as f64;
    let var = (n * stats.sum_sq - stats.sum * stats.sum) / (n * (n - 1.0));
    Ok(var.max(0.0).sqrt())
}

/// Half-width of a two-sided confidence interval together with the quantile
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub half_width: f64,
    pub quantile: f64,
}

/// Confidence interval for a pair's value at level `1 - nu`.
///
/// With two or more samples this is the Student-t interval on the return
/// mean. Below that the configured `prior_half_width` is returned together
/// with the normal quantile at the same level.
pub fn mf_interval(stats: PairStats, nu: f64, prior_half_width: f64) -> Result<Interval> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(FetsError::invalid(format!("nu must lie in (0,1), got {nu}")));
    }
    if stats.n < 2 {
        return Ok(Interval {
            half_width: prior_half_width,
            quantile: normal_quantile(1.0 - nu / 2.0)?,
        });
    }
    let std = sample_std(stats)?;
    let t = t_quantile(1.0 - nu / 2.0, (stats.n - 1) as f64)?;
    Ok(Interval {
        half_width: t * std / (stats.n as f64).sqrt(),
        quantile: t,
    })
}
