//! Experiment harness: configuration, seeded runs, CSV metrics,
//! aggregation, reports and paired comparisons.

pub mod aggregate;
pub mod compare;
pub mod config;
pub mod records;
pub mod report;
pub mod run;

pub use config::{EnvSpec, RunConfig};
pub use records::EpisodeRecord;
pub use run::{run, Manifest};
