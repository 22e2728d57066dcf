pub mod agent;
pub mod belief;
pub mod envs;
pub mod error;
pub mod free_energy;
pub mod harness;
pub mod mb_learner;
pub mod mf_learner;
pub mod qnet;
pub mod stats;

pub use error::{FetsError, Result};
