//! Dirichlet action distribution over the fleet simplex.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::scalar::Scalar;
use crate::tapegrad::special::{digamma, log_gamma};
use crate::tapegrad::{Activation, Tape, TapeError, Tensor, Var};

/// Smallest simplex coordinate kept after sampling.
pub const SIMPLEX_FLOOR: f64 = 1e-12;

/// Draws `a ~ Dir(c)` by normalizing independent `Gamma(c_i, 1)` draws.
/// Returns the sample and its log-density.
pub fn sample(rng: &mut impl Rng, concentration: &[f64]) -> Result<(Vec<f64>, f64), TapeError> {
    let mut draws = Vec::with_capacity(concentration.len());
    for &c in concentration {
        let gamma = Gamma::new(c, 1.0).map_err(|e| TapeError::Domain {
            op: "dirichlet_sample",
            detail: format!("concentration {c}: {e}"),
        })?;
        draws.push(gamma.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    let mut a: Vec<f64> = draws.iter().map(|g| g / total).collect();
    if a.iter().any(|&x| !(x >= SIMPLEX_FLOOR)) {
        log::debug!("dirichlet sample hit the simplex boundary; clamping to {SIMPLEX_FLOOR}");
        for x in a.iter_mut() {
            *x = if x.is_finite() { x.max(SIMPLEX_FLOOR) } else { SIMPLEX_FLOOR };
        }
        let s: f64 = a.iter().sum();
        for x in a.iter_mut() {
            *x /= s;
        }
    }
    let logp = log_density(concentration, &a)?;
    Ok((a, logp))
}

/// `c / Σc`.
pub fn mean(concentration: &[f64]) -> Vec<f64> {
    let total: f64 = concentration.iter().sum();
    concentration.iter().map(|c| c / total).collect()
}

/// `log Γ(Σc) − Σ log Γ(c_i) + Σ (c_i − 1) log a_i`.
pub fn log_density(concentration: &[f64], a: &[f64]) -> Result<f64, TapeError> {
    let total: f64 = concentration.iter().sum();
    let mut out = log_gamma(total)?;
    for (&c, &x) in concentration.iter().zip(a) {
        out += (c - 1.0) * x.ln() - log_gamma(c)?;
    }
    Ok(out)
}

/// Differential entropy of `Dir(c)`.
pub fn entropy(concentration: &[f64]) -> Result<f64, TapeError> {
    let n = concentration.len() as f64;
    let total: f64 = concentration.iter().sum();
    let mut out = -log_gamma(total)? + (total - n) * digamma(total)?;
    for &c in concentration {
        out += log_gamma(c)? - (c - 1.0) * digamma(c)?;
    }
    Ok(out)
}

/// Log-density of the fixed sample `a` under concentrations `c` (`[n, 1]`
/// on the tape), as a `[1, 1]` scalar.
pub fn tape_log_density<S: Scalar>(tape: &mut Tape<S>, c: Var, a: &[f64]) -> Result<Var, TapeError> {
    let total = tape.sum(c)?;
    let lg_total = tape.activation(total, Activation::LogGamma)?;
    let lg = tape.activation(c, Activation::LogGamma)?;
    let lg_sum = tape.sum(lg)?;
    let log_a = tape.constant(Tensor::column(a.iter().map(|&x| S::lit(x.ln())).collect()));
    let cm1 = tape.add_scalar(c, -S::one())?;
    let weighted = tape.mul(cm1, log_a)?;
    let dot = tape.sum(weighted)?;
    let norm = tape.sub(lg_total, lg_sum)?;
    tape.add(norm, dot)
}

/// Dirichlet entropy of concentrations `c` (`[n, 1]`) as a `[1, 1]` scalar.
pub fn tape_entropy<S: Scalar>(tape: &mut Tape<S>, c: Var) -> Result<Var, TapeError> {
    let n = tape.value(c).len();
    let total = tape.sum(c)?;
    let lg_total = tape.activation(total, Activation::LogGamma)?;
    let psi_total = tape.activation(total, Activation::Digamma)?;
    let shifted = tape.add_scalar(total, -S::lit(n as f64))?;
    let spread = tape.mul(shifted, psi_total)?;
    let lg = tape.activation(c, Activation::LogGamma)?;
    let lg_sum = tape.sum(lg)?;
    let psi = tape.activation(c, Activation::Digamma)?;
    let cm1 = tape.add_scalar(c, -S::one())?;
    let weighted = tape.mul(cm1, psi)?;
    let w_sum = tape.sum(weighted)?;
    let a = tape.sub(lg_sum, lg_total)?;
    let b = tape.add(a, spread)?;
    tape.sub(b, w_sum)
}
