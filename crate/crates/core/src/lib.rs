//! Disentangled graph prompting for graph-level out-of-distribution detection.
//!
//! A frozen, contrastively pre-trained GIN encoder is adapted to OOD detection
//! by two learned edge-reweighting prompt generators: a class-specific branch
//! trained to keep label-discriminative structure and a class-agnostic branch
//! trained to keep structure shared by all in-distribution classes. Test graphs
//! are scored by the Mahalanobis score of each branch's prompted embedding.
//!
//! This crate is `no_std` (with `alloc`) and holds only computation. Dataset
//! files, checkpoints and the command line live in the companion `dgp` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod dgp;
pub mod encoder;
mod error;
pub mod graph;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod scoring;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
