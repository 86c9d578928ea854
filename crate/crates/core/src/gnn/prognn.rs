//! Structure refinement: a learned adjacency kept close to the physical one
//! while being pushed toward sparsity (L1) and low rank (nuclear norm).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tapegrad::Tensor;

use super::svd::{jacobi_svd, SvdError};

/// Fraction of the physical adjacency restored when the refined structure
/// collapses to zero.
pub const COLLAPSE_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProGnnConfig {
    /// L1 weight.
    pub alpha: f64,
    /// Nuclear-norm weight.
    pub beta: f64,
    /// Proximal-gradient step size.
    pub eta: f64,
    /// Structure steps per update.
    pub tau_s: usize,
    /// Weight steps per update.
    pub tau_w: usize,
    /// Feed the task-loss gradient into the structure step.
    pub joint: bool,
    /// Allow entries outside the physical adjacency's support.
    pub allow_fill_in: bool,
}

impl Default for ProGnnConfig {
    fn default() -> Self {
        Self {
            alpha: 5e-4,
            beta: 1.5e-2,
            eta: 1e-2,
            tau_s: 1,
            tau_w: 1,
            joint: true,
            allow_fill_in: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProGnnState<S> {
    pub structure: Tensor<S>,
    pub config: ProGnnConfig,
}

/// What a refine step did besides updating the structure.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefineReport {
    pub svd_sweeps: usize,
    pub collapsed: bool,
}

impl<S: Scalar> ProGnnState<S> {
    /// Starts from the physical adjacency.
    pub fn new(adjacency: &Tensor<S>, config: ProGnnConfig) -> Self {
        Self {
            structure: adjacency.clone(),
            config,
        }
    }
}

/// `sign(x) · max(|x| − threshold, 0)`.
pub fn soft_threshold<S: Scalar>(x: S, threshold: S) -> S {
    let mag = (x.abs() - threshold).max(S::zero());
    if x < S::zero() {
        -mag
    } else {
        mag
    }
}

/// Proximal operator of `threshold · ‖·‖₁`.
pub fn l1_prox<S: Scalar>(m: &Tensor<S>, threshold: S) -> Tensor<S> {
    m.map(|x| soft_threshold(x, threshold))
}

/// Proximal operator of `threshold · ‖·‖_*`: shrink the singular values.
pub fn nuclear_prox<S: Scalar>(m: &Tensor<S>, threshold: S) -> Result<(Tensor<S>, usize), SvdError> {
    let svd = jacobi_svd(m)?;
    let out = svd.reconstruct_with(|s| (s - threshold).max(S::zero()));
    Ok((out, svd.sweeps))
}

pub fn nuclear_norm<S: Scalar>(m: &Tensor<S>) -> Result<S, SvdError> {
    Ok(jacobi_svd(m)?.singular_values().into_iter().sum())
}

/// One proximal-gradient update of the refined structure.
///
/// Order: gradient step on `‖A − S‖²_F` (+ task gradient), L1 prox, nuclear
/// prox, symmetrize, then clamp to `[0, 1]` with a zero diagonal (and the
/// physical support unless fill-in is allowed).
pub fn refine_step<S: Scalar>(
    adjacency: &Tensor<S>,
    state: &ProGnnState<S>,
    task_gradient: Option<&Tensor<S>>,
) -> Result<(ProGnnState<S>, RefineReport), SvdError> {
    let cfg = &state.config;
    let eta = S::lit(cfg.eta);
    let two = S::lit(2.0);
    let mut s = state.structure.zip_map(adjacency, |s, a| s - eta * two * (s - a));
    if let Some(g) = task_gradient {
        s = s.zip_map(g, |s, g| s - eta * g);
    }

    let l1_threshold = S::lit(cfg.alpha * cfg.eta);
    if l1_threshold > S::zero() {
        s = l1_prox(&s, l1_threshold);
    }

    let mut report = RefineReport::default();
    let nuclear_threshold = S::lit(cfg.beta * cfg.eta);
    if nuclear_threshold > S::zero() {
        let (shrunk, sweeps) = nuclear_prox(&s, nuclear_threshold)?;
        s = shrunk;
        report.svd_sweeps = sweeps;
    }

    let n = s.rows();
    let half = S::lit(0.5);
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let mut v = (half * (s.at(i, j) + s.at(j, i))).max(S::zero()).min(S::one());
            if !cfg.allow_fill_in && adjacency.at(i, j) == S::zero() {
                v = S::zero();
            }
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }

    if out.sum() == S::zero() && adjacency.sum() > S::zero() {
        log::warn!("refined structure collapsed to zero; restoring {COLLAPSE_FLOOR}·A floor");
        let floor = S::lit(COLLAPSE_FLOOR);
        out = out.zip_map(adjacency, |s, a| s.max(floor * a));
        report.collapsed = true;
    }

    Ok((
        ProGnnState {
            structure: out,
            config: cfg.clone(),
        },
        report,
    ))
}
