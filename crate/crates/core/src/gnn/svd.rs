//! One-sided (Hestenes) Jacobi SVD for the small dense matrices of the
//! structure-refinement step.

use crate::scalar::Scalar;
use crate::tapegrad::Tensor;

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("Jacobi SVD did not converge after {sweeps} sweeps")]
pub struct SvdError {
    pub sweeps: usize,
}

/// `A = W Vᵀ` with mutually orthogonal columns `w_j = σ_j u_j`.
pub struct JacobiSvd<S> {
    /// `A V`, columns orthogonal; their norms are the singular values.
    pub scaled_left: Tensor<S>,
    pub right: Tensor<S>,
    pub sweeps: usize,
}

impl<S: Scalar> JacobiSvd<S> {
    pub fn singular_values(&self) -> Vec<S> {
        let (m, n) = (self.scaled_left.rows(), self.scaled_left.cols());
        (0..n)
            .map(|j| (0..m).map(|i| self.scaled_left.at(i, j).powi(2)).sum::<S>().sqrt())
            .collect()
    }

    /// `Σ_j f(σ_j) u_j v_jᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        let sigma = self.singular_values();
        let (m, n) = (self.scaled_left.rows(), self.scaled_left.cols());
        let mut scaled = self.scaled_left.clone();
        for (j, &s) in sigma.iter().enumerate() {
            let factor = if s > S::zero() { f(s) / s } else { S::zero() };
            for i in 0..m {
                scaled.set(i, j, scaled.at(i, j) * factor);
            }
        }
        debug_assert_eq!(self.right.rows(), n);
        scaled
            .matmul(&self.right.transpose())
            .expect("factor shapes agree")
    }
}

pub fn jacobi_svd<S: Scalar>(a: &Tensor<S>) -> Result<JacobiSvd<S>, SvdError> {
    let (m, n) = (a.rows(), a.cols());
    let mut w = a.clone();
    let mut v = Tensor::<S>::identity(n);
    let tol = S::lit(JACOBI_TOLERANCE);
    for sweep in 1..=JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (S::zero(), S::zero(), S::zero());
                for i in 0..m {
                    let (wp, wq) = (w.at(i, p), w.at(i, q));
                    alpha = alpha + wp * wp;
                    beta = beta + wq * wq;
                    gamma = gamma + wp * wq;
                }
                if gamma == S::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (S::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (wp, wq) = (w.at(i, p), w.at(i, q));
                    w.set(i, p, c * wp - s * wq);
                    w.set(i, q, s * wp + c * wq);
                }
                for i in 0..n {
                    let (vp, vq) = (v.at(i, p), v.at(i, q));
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            return Ok(JacobiSvd {
                scaled_left: w,
                right: v,
                sweeps: sweep,
            });
        }
    }
    Err(SvdError {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}
