//! Q-network agents for the continuous world: one network per space with
//! dropout Thompson sampling as both utility and behavioral policy.

use rand::Rng;

use super::{decide, Decision, LearnerKind, Method, Scoring, Settings, SpaceView};
use crate::belief::floor_policy;
use crate::envs::continuous::{feature_indices, FEATURES};
use crate::error::{FetsError, Result};
use crate::qnet::{dropout_ts, train_step, Mlp, ReplayBuffer, Transition};

/// Names of the per-feature subspaces, in observation order.
pub const FEATURE_SPACES: [&str; FEATURES] = ["wall", "food", "poison"];

#[derive(Debug, Clone)]
struct NetSpace {
    name: String,
    // observation entries fed to this space's network
    inputs: Vec<usize>,
    net: Mlp,
    replay: ReplayBuffer,
}

impl NetSpace {
    fn project(&self, obs: &[f64]) -> Vec<f64> {
        self.inputs.iter().map(|&i| obs[i]).collect()
    }
}

/// Dropout Q-network agent acting with one of the TS methods.
#[derive(Debug, Clone)]
pub struct NetworkAgent {
    method: Method,
    settings: Settings,
    spaces: Vec<NetSpace>,
    actions: usize,
    steps: u64,
    losses: Vec<f64>,
}

impl NetworkAgent {
    /// `eyes` sensors with three features each; networks are initialised
    /// from `rng`.
    pub fn new<R: Rng + ?Sized>(method: Method, settings: &Settings, eyes: usize, actions: usize, rng: &mut R) -> Result<Self> {
        if method.learner != LearnerKind::Network {
            return Err(FetsError::invalid(format!("{method} is not a network method")));
        }
        let a = &settings.agent;
        if !(a.alpha > 0.0 && a.alpha.is_finite()) {
            return Err(FetsError::validation("agent.alpha", "must be finite and positive"));
        }
        if !(a.xi > 0.0 && a.xi < 1.0 / actions as f64) {
            return Err(FetsError::validation("agent.xi", format!("must lie in (0, 1/{actions})")));
        }
        let n = &settings.net;
        if n.passes == 0 {
            return Err(FetsError::validation("net.passes", "must be at least 1"));
        }
        if n.batch == 0 || n.train_every == 0 {
            return Err(FetsError::validation("net", "batch and train_every must be at least 1"));
        }
        if !(n.learning_rate > 0.0) {
            return Err(FetsError::validation("net.learning_rate", "must be positive"));
        }
        let mut layout = vec![(super::tabular::MAIN_SPACE.to_string(), (0..eyes * FEATURES).collect::<Vec<_>>())];
        if method.fets {
            let offered: Vec<(String, Vec<usize>)> = FEATURE_SPACES
                .iter()
                .enumerate()
                .map(|(k, name)| (name.to_string(), feature_indices(k, eyes)))
                .collect();
            layout.extend(a.pick(offered, |o| o.0.as_str())?);
        }
        let spaces = layout
            .into_iter()
            .enumerate()
            .map(|(i, (name, inputs))| {
                let hidden = if i == 0 { &n.hidden_main } else { &n.hidden_sub };
                let mut sizes = vec![inputs.len()];
                sizes.extend(hidden);
                sizes.push(actions);
                Ok(NetSpace {
                    name,
                    inputs,
                    net: Mlp::new(&sizes, n.dropout, rng)?,
                    replay: ReplayBuffer::new(n.replay)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method,
            settings: settings.clone(),
            spaces,
            actions,
            steps: 0,
            losses: Vec::new(),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn space_names(&self) -> Vec<String> {
        self.spaces.iter().map(|s| s.name.clone()).collect()
    }

    /// Layer sizes of each space's network.
    pub fn layer_sizes(&self) -> Vec<Vec<usize>> {
        self.spaces.iter().map(|s| s.net.sizes().to_vec()).collect()
    }

    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> Result<Decision> {
        let want = self.spaces[0].inputs.len();
        if observation.len() != want {
            return Err(FetsError::State(format!(
                "observation has {} entries, expected {want}",
                observation.len()
            )));
        }
        let passes = self.settings.net.passes;
        let mut views = Vec::with_capacity(self.spaces.len());
        for sp in &self.spaces {
            let ts = dropout_ts(&sp.net, &sp.project(observation), passes, rng)?;
            let ts = floor_policy(&ts, self.settings.agent.xi)?;
            views.push(SpaceView {
                pi_ts: Some(ts.clone()),
                pi_b: ts,
            });
        }
        decide(self.method, Scoring::ThompsonBehavior(self.settings.agent.alpha), &views, 0, rng)
    }

    /// Stores the projected transition in every space's replay buffer and
    /// trains each network once warm.
    pub fn observe<R: Rng + ?Sized>(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], rng: &mut R) -> Result<()> {
        if action >= self.actions {
            return Err(FetsError::invalid(format!("action {action} out of range")));
        }
        self.steps += 1;
        let n = &self.settings.net;
        let train = self.steps.is_multiple_of(n.train_every);
        let gamma = self.settings.agent.gamma;
        self.losses.clear();
        for sp in &mut self.spaces {
            let t = Transition {
                obs: sp.project(obs),
                action,
                reward,
                next_obs: sp.project(next_obs),
                terminal: false,
            };
            sp.replay.push(t);
            if train && sp.replay.len() >= n.warmup.max(n.batch) {
                let batch = sp.replay.sample(n.batch, rng).expect("buffer holds a full batch");
                let loss = train_step(&mut sp.net, &batch, gamma, n.learning_rate, rng)?;
                self.losses.push(loss);
            }
        }
        Ok(())
    }

    /// Training losses from the latest `observe`, one per trained space.
    pub fn last_losses(&self) -> &[f64] {
        &self.losses
    }
}
