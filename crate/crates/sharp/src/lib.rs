//! Host-side tooling for `sharp-core`: sequence files, a shared bias-profile cache, the
//! experiment harness with its CSV tables and SVG plots, and the `sharp` command line.

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod plots;
pub mod seqfile;

pub use sharp_core;

pub use cache::ProfileCache;
pub use config::ExperimentConfig;
pub use error::{Result, SharpError};
pub use harness::{run_experiment, ExperimentReport};
