//! Adam with bias correction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::ParamSet;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
    scope: Option<Vec<String>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
            scope: None,
        }
    }

    /// Restricts updates to parameters whose name starts with one of `prefixes`.
    pub fn with_scope<S: Into<String>>(mut self, prefixes: impl IntoIterator<Item = S>) -> Self {
        self.scope = Some(prefixes.into_iter().map(Into::into).collect());
        self
    }

    fn in_scope(&self, name: &str) -> bool {
        self.scope
            .as_ref()
            .is_none_or(|s| s.iter().any(|p| name.starts_with(p.as_str())))
    }

    /// Applies one update to every non-frozen in-scope parameter, then zeroes
    /// all gradients in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.state.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for p in params.iter_mut() {
            if p.frozen || !self.in_scope(&p.name) {
                continue;
            }
            let (m, v) = self
                .state
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| {
                    (
                        Tensor::zeros(p.value.rows(), p.value.cols()),
                        Tensor::zeros(p.value.rows(), p.value.cols()),
                    )
                });
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (((w, &g), mi), vi) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        params.zero_grad();
    }
}
