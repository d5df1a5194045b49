//! Two-layer perceptron shared by the encoder, prompt generators and predictor.

use alloc::format;
use alloc::string::String;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{xavier_uniform, ParamSet};
use crate::{Result, Tensor};

/// `x -> relu(x W1 + b1) W2 + b2`. Weights live in a [`ParamSet`] under
/// `{prefix}.w1`, `{prefix}.b1`, `{prefix}.w2` and `{prefix}.b2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
            output,
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        params.insert(self.name("w1"), xavier_uniform(rng, self.input, self.hidden));
        params.insert(self.name("b1"), Tensor::zeros(1, self.hidden));
        params.insert(self.name("w2"), xavier_uniform(rng, self.hidden, self.output));
        params.insert(self.name("b2"), Tensor::zeros(1, self.output));
    }

    pub fn forward(&self, tape: &Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w1 = tape.param(params.get(&self.name("w1"))?);
        let b1 = tape.param(params.get(&self.name("b1"))?);
        let w2 = tape.param(params.get(&self.name("w2"))?);
        let b2 = tape.param(params.get(&self.name("b2"))?);
        let h = tape.add_bias(tape.matmul(x, w1)?, b1)?;
        let h = tape.relu(h)?;
        tape.add_bias(tape.matmul(h, w2)?, b2)
    }
}
