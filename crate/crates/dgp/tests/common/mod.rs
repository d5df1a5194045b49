#![allow(dead_code)]

use std::path::Path;

use dgp::ExperimentConfig;

/// A run small enough to finish in about a second.
pub const TINY: &str = "\
seed = 3
id.per_class = 40
ood.count = 40
pretrain.epochs = 3
dgp.epochs = 5
";

pub fn tiny_text(extra: &str) -> String {
    format!("{TINY}{extra}")
}

/// Tiny config writing under `dir/out`.
pub fn tiny(dir: &Path, extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&tiny_text(extra), dir).unwrap()
}
