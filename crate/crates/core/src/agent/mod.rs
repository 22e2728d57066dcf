//! Agents: per-space learners, Thompson policies, free-energy space
//! selection and the baseline methods.

pub mod network;
pub mod tabular;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{argmax, ActionPolicy, DEFAULT_XI};
use crate::error::{FetsError, Result};
use crate::free_energy::{evaluate, evaluate_ts_behavioral, select_space, FeParams};
use crate::mb_learner::RadiusRule;
use crate::qnet::DEFAULT_DROPOUT_PASSES;

pub use network::NetworkAgent;
pub use tabular::TabularAgent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    ModelBased,
    ModelFree,
    /// Q-networks with dropout Thompson sampling.
    Network,
}

/// How an action is drawn once the spaces are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Acting {
    /// The behavioral policy of the acting space.
    Behavior,
    /// The free-energy optimal policy of the acting space.
    FreeEnergy,
}

/// One of the twelve method tags, e.g. `MB-FETS-FE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub learner: LearnerKind,
    /// Whether subspaces compete with the main space.
    pub fets: bool,
    pub acting: Acting,
}

impl Method {
    pub const ALL: [&'static str; 12] = [
        "MB", "MB-FE", "MF", "MF-FE", "MB-FETS-B", "MB-FETS-FE", "MF-FETS-B", "MF-FETS-FE", "TS", "TS-FE",
        "TS-FETS-B", "TS-FETS-FE",
    ];

    /// Whether per-space free energies have to be computed.
    pub fn scores_spaces(&self) -> bool {
        self.fets || self.acting == Acting::FreeEnergy
    }

    pub fn is_tabular(&self) -> bool {
        self.learner != LearnerKind::Network
    }
}

impl FromStr for Method {
    type Err = FetsError;

    fn from_str(s: &str) -> Result<Self> {
        let (learner, rest) = match s.split_once('-') {
            Some((l, r)) => (l, Some(r)),
            None => (s, None),
        };
        let learner = match learner {
            "MB" => LearnerKind::ModelBased,
            "MF" => LearnerKind::ModelFree,
            "TS" => LearnerKind::Network,
            _ => return Err(unknown_method(s)),
        };
        let (fets, acting) = match rest {
            None => (false, Acting::Behavior),
            Some("FE") => (false, Acting::FreeEnergy),
            Some("FETS-B") => (true, Acting::Behavior),
            Some("FETS-FE") => (true, Acting::FreeEnergy),
            Some(_) => return Err(unknown_method(s)),
        };
        Ok(Method { learner, fets, acting })
    }
}

fn unknown_method(s: &str) -> FetsError {
    FetsError::invalid(format!(
        "unknown method '{s}' (expected one of {})",
        Method::ALL.join(", ")
    ))
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let learner = match self.learner {
            LearnerKind::ModelBased => "MB",
            LearnerKind::ModelFree => "MF",
            LearnerKind::Network => "TS",
        };
        let suffix = match (self.fets, self.acting) {
            (false, Acting::Behavior) => "",
            (false, Acting::FreeEnergy) => "-FE",
            (true, Acting::Behavior) => "-FETS-B",
            (true, Acting::FreeEnergy) => "-FETS-FE",
        };
        write!(f, "{learner}{suffix}")
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Epsilon-greedy policy over `q_values`: `1 - eps + eps/|A|` on the greedy
/// action (ties to the lowest index) and `eps/|A|` elsewhere.
pub fn epsilon_greedy_policy(q_values: &[f64], epsilon: f64) -> Result<ActionPolicy> {
    if q_values.is_empty() {
        return Err(FetsError::invalid("no actions"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(FetsError::invalid(format!("epsilon {epsilon} outside [0,1]")));
    }
    let n = q_values.len() as f64;
    let mut probs = vec![epsilon / n; q_values.len()];
    probs[argmax(q_values)] += 1.0 - epsilon;
    ActionPolicy::new(probs)
}

/// Epsilon-greedy policy and an action sampled from it.
pub fn epsilon_greedy<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Result<(ActionPolicy, usize)> {
    let policy = epsilon_greedy_policy(q_values, epsilon)?;
    let action = policy.sample(rng);
    Ok((policy, action))
}

/// Exploration rate, constant or decaying linearly over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Episodes over which epsilon moves from `start` to `end`; 0 keeps it
    /// constant at `start`.
    pub decay_episodes: u64,
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self {
            start: epsilon,
            end: epsilon,
            decay_episodes: 0,
        }
    }

    pub fn at(&self, episode: u64) -> f64 {
        if self.decay_episodes == 0 {
            return self.start;
        }
        let frac = (episode as f64 / self.decay_episodes as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Hyperparameters shared by every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Final epsilon of the optional linear decay.
    pub epsilon_end: Option<f64>,
    pub epsilon_decay_episodes: u64,
    pub xi: f64,
    /// Monte-Carlo draws per Thompson policy (tabular learners).
    pub ts_samples: usize,
    /// Names of the subspaces to use; all offered subspaces when absent.
    pub subspaces: Option<Vec<String>>,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            beta: 7.0,
            gamma: 0.95,
            epsilon: 0.1,
            epsilon_end: None,
            epsilon_decay_episodes: 0,
            xi: DEFAULT_XI,
            ts_samples: 1024,
            subspaces: None,
        }
    }
}

impl AgentSettings {
    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon,
            end: self.epsilon_end.unwrap_or(self.epsilon),
            decay_episodes: if self.epsilon_end.is_some() { self.epsilon_decay_episodes } else { 0 },
        }
    }

    pub fn fe_params(&self) -> Result<FeParams> {
        FeParams::new(self.alpha, self.beta)
    }

    /// Keeps the offered projections named in `subspaces`, in offered order.
    pub fn pick<T>(&self, offered: Vec<T>, name: impl Fn(&T) -> &str) -> Result<Vec<T>> {
        let Some(wanted) = &self.subspaces else {
            return Ok(offered);
        };
        for w in wanted {
            if !offered.iter().any(|o| name(o) == w) {
                let names: Vec<&str> = offered.iter().map(&name).collect();
                return Err(FetsError::validation(
                    "agent.subspaces",
                    format!("unknown subspace '{w}' (offered: {})", names.join(", ")),
                ));
            }
        }
        Ok(offered.into_iter().filter(|o| wanted.iter().any(|w| w == name(o))).collect())
    }
}

/// Model-free learner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfSettings {
    pub eta: f64,
    pub lambda: f64,
    /// Confidence level of the return intervals is `1 - nu`.
    pub nu: f64,
}

impl Default for MfSettings {
    fn default() -> Self {
        Self {
            eta: 0.1,
            lambda: 0.9,
            nu: 0.05,
        }
    }
}

/// Model-based learner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbSettings {
    pub delta: f64,
    /// Quantile mapping bound widths to standard deviations; defaults to
    /// the two-sided normal quantile at level `1 - delta`.
    pub z: Option<f64>,
    #[serde(with = "radius_rule_str")]
    pub radius: RadiusRule,
    /// Steps between point-estimate solves.
    pub solve_every: u64,
    /// Steps between bound refreshes; 0 refreshes at episode ends only.
    pub bounds_every: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MbSettings {
    fn default() -> Self {
        Self {
            delta: 0.05,
            z: None,
            radius: RadiusRule::Ucrl2,
            solve_every: 1,
            bounds_every: 0,
            tol: 1e-6,
            max_iters: 100_000,
        }
    }
}

mod radius_rule_str {
    use super::RadiusRule;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &RadiusRule, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RadiusRule, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Q-network settings for the continuous agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub hidden_main: Vec<usize>,
    pub hidden_sub: Vec<usize>,
    pub dropout: f64,
    /// Dropout forward passes per Thompson policy.
    pub passes: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub replay: usize,
    /// Transitions collected before training starts.
    pub warmup: usize,
    pub train_every: u64,
}

impl Default for NetSettings {
    fn default() -> Self {
        Self {
            hidden_main: vec![50, 50],
            hidden_sub: vec![15, 15],
            dropout: 0.1,
            passes: DEFAULT_DROPOUT_PASSES,
            learning_rate: 1e-3,
            batch: 32,
            replay: 10_000,
            warmup: 500,
            train_every: 1,
        }
    }
}

/// Every learner-facing setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub agent: AgentSettings,
    pub mf: MfSettings,
    pub mb: MbSettings,
    pub net: NetSettings,
}

/// What one space offers for the current state.
#[derive(Debug, Clone)]
pub struct SpaceView {
    /// Floored Thompson policy; required when spaces are scored.
    pub pi_ts: Option<ActionPolicy>,
    pub pi_b: ActionPolicy,
}

/// Outcome of one action choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    /// Index of the acting space.
    pub selected: usize,
    /// Free energy per space, when computed.
    pub free_energies: Option<Vec<f64>>,
    /// The policy the action was drawn from.
    pub policy: ActionPolicy,
}

/// How the free energy of a space is scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scoring {
    /// General form with an arbitrary behavioral policy.
    General(FeParams),
    /// Behavioral policy equal to the space's Thompson policy and
    /// `alpha = beta`.
    ThompsonBehavior(f64),
}

/// Scores every space, selects one and samples an action. `views[main]` is
/// the main space. Methods without subspaces only look at the main space.
pub fn decide<R: Rng + ?Sized>(
    method: Method,
    scoring: Scoring,
    views: &[SpaceView],
    main: usize,
    rng: &mut R,
) -> Result<Decision> {
    if main >= views.len() {
        return Err(FetsError::State("no main space".into()));
    }
    if !method.scores_spaces() {
        let policy = views[main].pi_b.clone();
        return Ok(Decision {
            action: policy.sample(rng),
            selected: main,
            free_energies: None,
            policy,
        });
    }
    let main_ts = views[main]
        .pi_ts
        .as_ref()
        .ok_or_else(|| FetsError::State("main space has no Thompson policy".into()))?;
    let scored: Vec<usize> = if method.fets { (0..views.len()).collect() } else { vec![main] };
    let mut free_energies = vec![f64::NAN; views.len()];
    let mut optimal = Vec::with_capacity(views.len());
    for &i in &scored {
        let ts = views[i]
            .pi_ts
            .as_ref()
            .ok_or_else(|| FetsError::State(format!("space {i} has no Thompson policy")))?;
        let eval = match scoring {
            Scoring::General(params) => evaluate(ts, main_ts, &views[i].pi_b, params)?,
            Scoring::ThompsonBehavior(alpha) => evaluate_ts_behavioral(ts, main_ts, alpha)?,
        };
        free_energies[i] = eval.free_energy;
        optimal.push((i, eval.policy));
    }
    let selected = if method.fets {
        select_space(&free_energies, main)?
    } else {
        main
    };
    let policy = match method.acting {
        Acting::FreeEnergy => optimal.into_iter().find(|(i, _)| *i == selected).unwrap().1,
        Acting::Behavior => views[selected].pi_b.clone(),
    };
    Ok(Decision {
        action: policy.sample(rng),
        selected,
        free_energies: Some(free_energies),
        policy,
    })
}
