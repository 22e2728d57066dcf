//! Environments: the stochastic grid maze, the abstract combat model and the
//! continuous sensor world.

pub mod combat;
pub mod continuous;
pub mod maze;
pub mod rewards;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Random stream used by every simulator.
pub type SimRng = ChaCha8Rng;

/// A state abstraction: `map[s]` is the abstract state of main state `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    pub name: String,
    pub size: usize,
    pub map: Vec<usize>,
}

impl Projection {
    pub fn identity(name: impl Into<String>, size: usize) -> Self {
        Self {
            name: name.into(),
            size,
            map: (0..size).collect(),
        }
    }

    pub fn apply(&self, state: usize) -> usize {
        self.map[state]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularStep {
    /// `None` when the episode has ended.
    pub next: Option<usize>,
    pub reward: f64,
}

/// Episodic environment with a finite, indexed state set.
pub trait TabularEnv: Send {
    /// Number of non-terminal states.
    fn state_count(&self) -> usize;

    fn action_count(&self) -> usize;

    /// Starts an episode and returns the initial state.
    fn reset(&mut self, rng: &mut SimRng) -> usize;

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<TabularStep>;

    /// State abstractions offered as subspaces, in declaration order.
    fn projections(&self) -> Vec<Projection>;

    /// Width of the support of a single-step reward.
    fn reward_span(&self) -> f64;
}
