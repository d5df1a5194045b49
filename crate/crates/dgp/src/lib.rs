//! Files, experiment orchestration and the command line around `dgp-core`.
//!
//! [`tu`] reads and writes TU benchmark datasets, [`checkpoint`] stores
//! encoders and trained models, [`config`] parses experiment configs and
//! [`commands`] implements the `dgp` subcommands on top of the stages in
//! [`run`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;
pub mod run;
pub mod tu;

pub use config::ExperimentConfig;
