//! Learned edge dropping with binary-concrete (Gumbel-sigmoid) relaxation.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tapegrad::{Bound, ParamStore, Tape, TapeError, Tensor, Var};

use super::layers::Linear;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PtdNetConfig {
    pub tau_start: f64,
    pub tau_end: f64,
    pub hidden: usize,
}

impl Default for PtdNetConfig {
    fn default() -> Self {
        Self {
            tau_start: 1.0,
            tau_end: 0.3,
            hidden: 32,
        }
    }
}

impl PtdNetConfig {
    /// Linear annealing from `tau_start` at `progress = 0` to `tau_end` at 1.
    pub fn temperature(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.tau_start + (self.tau_end - self.tau_start) * p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode<'a, S> {
    /// `sigmoid(ℓ)`.
    Deterministic,
    /// `sigmoid((ℓ + noise) / τ)`, where `noise[e] = g₁ − g₂` for two
    /// Gumbel(0, 1) draws per undirected edge.
    Stochastic { noise: &'a [S], temperature: S },
}

/// Two-layer edge scorer `φ(x_i ‖ x_j)`, symmetrized over both orientations.
#[derive(Debug, Clone)]
pub struct PtdNetSampler {
    pub hidden: Linear,
    pub output: Linear,
    pub d_in: usize,
}

/// Logistic noise `g₁ − g₂` for each of `edges` edges.
pub fn draw_edge_noise(rng: &mut impl Rng, edges: usize) -> Vec<f64> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel parameters");
    (0..edges)
        .map(|_| gumbel.sample(rng) - gumbel.sample(rng))
        .collect()
}

impl PtdNetSampler {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), 2 * d_in, hidden, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, 1, rng),
            d_in,
        }
    }

    fn score<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, pairs: Tensor<S>) -> Result<Var, TapeError> {
        let x = tape.constant(pairs);
        let h = self.hidden.forward(tape, bound, x)?;
        let h = tape.relu(h)?;
        self.output.forward(tape, bound, h)
    }

    /// Symmetrized edge logits `ℓ_ij = φ(x_i ‖ x_j) + φ(x_j ‖ x_i)` as `[E, 1]`.
    pub fn logits<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        features: &Tensor<S>,
        edges: &[(usize, usize)],
    ) -> Result<Var, TapeError> {
        let d = features.cols();
        let mut forward = Vec::with_capacity(edges.len() * 2 * d);
        let mut reverse = Vec::with_capacity(edges.len() * 2 * d);
        let row = |i: usize| &features.data()[i * d..(i + 1) * d];
        for &(i, j) in edges {
            forward.extend_from_slice(row(i));
            forward.extend_from_slice(row(j));
            reverse.extend_from_slice(row(j));
            reverse.extend_from_slice(row(i));
        }
        let e = edges.len();
        let fwd = self.score(tape, bound, Tensor::matrix(e, 2 * d, forward)?)?;
        let rev = self.score(tape, bound, Tensor::matrix(e, 2 * d, reverse)?)?;
        tape.add(fwd, rev)
    }

    /// Masked adjacency `M` with `M_ij = m_ij A_ij` (`n × n`, on the tape).
    pub fn sample<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        features: &Tensor<S>,
        edges: &Arc<Vec<(usize, usize)>>,
        mode: SampleMode<'_, S>,
    ) -> Result<Var, TapeError> {
        let n = features.rows();
        if edges.is_empty() {
            return Ok(tape.constant(Tensor::zeros(n, n)));
        }
        let logits = self.logits(tape, bound, features, edges)?;
        let keep = match mode {
            SampleMode::Deterministic => tape.sigmoid(logits)?,
            SampleMode::Stochastic { noise, temperature } => {
                if !(temperature > S::zero()) {
                    return Err(TapeError::Domain {
                        op: "ptdnet_sample",
                        detail: format!("temperature must be positive, got {temperature}"),
                    });
                }
                let noise = tape.constant(Tensor::column(noise.to_vec()));
                let perturbed = tape.add(logits, noise)?;
                let scaled = tape.scale(perturbed, S::one() / temperature)?;
                tape.sigmoid(scaled)?
            }
        };
        tape.scatter_symmetric(keep, edges.clone(), n)
    }
}

/// Binary-concrete relaxed sample for a single logit.
pub fn relaxed_bernoulli(logit: f64, noise: f64, temperature: f64) -> f64 {
    crate::tapegrad::sigmoid((logit + noise) / temperature)
}
