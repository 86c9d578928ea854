use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{TapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First and second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub first: Vec<Tensor<S>>,
    pub second: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn for_params(params: &[Tensor<S>]) -> Self {
        Self {
            first: params.iter().map(Tensor::zeros_like).collect(),
            second: params.iter().map(Tensor::zeros_like).collect(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub state: AdamState<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &[Tensor<S>]) -> Self {
        Self {
            config,
            state: AdamState::for_params(params),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) -> Result<(), TapeError> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        if !(lr > 0.0) {
            return Err(TapeError::Domain {
                op: "adam_step",
                detail: format!("learning rate must be positive, got {lr}"),
            });
        }
        if params.len() != grads.len() || params.len() != self.state.first.len() {
            return Err(TapeError::Dimension {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.state.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TapeError::Dimension {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (S::lit(beta1), S::lit(beta2));
        let (one_b1, one_b2) = (S::lit(1.0 - beta1), S::lit(1.0 - beta2));
        let (bc1, bc2, lr, eps) = (S::lit(bc1), S::lit(bc2), S::lit(lr), S::lit(eps));
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.state.first[idx].data_mut();
            let v = self.state.second[idx].data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: S) -> S {
    let total: S = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&x| x * x)
        .sum::<S>()
        .sqrt();
    if total > max_norm && total > S::zero() {
        let factor = max_norm / total;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * factor;
            }
        }
    }
    total
}
