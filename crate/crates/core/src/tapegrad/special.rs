//! Log-gamma and its derivatives, used by the Dirichlet log-density and entropy.
//!
//! All three use the same scheme: shift the argument above a threshold with the
//! upward recurrence, then evaluate the asymptotic (Stirling-type) series.

use crate::scalar::Scalar;

use super::TapeError;

const SHIFT_THRESHOLD: f64 = 10.0;

fn check_domain<S: Scalar>(op: &'static str, x: S) -> Result<(), TapeError> {
    if x > S::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(TapeError::Domain {
            op,
            detail: format!("argument must be positive and finite, got {x}"),
        })
    }
}

/// `log Γ(x)` for `x > 0`.
pub fn log_gamma<S: Scalar>(x: S) -> Result<S, TapeError> {
    check_domain("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

/// `ψ(x) = d/dx log Γ(x)` for `x > 0`.
pub fn digamma<S: Scalar>(x: S) -> Result<S, TapeError> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// `ψ₁(x) = d²/dx² log Γ(x)` for `x > 0`.
pub fn trigamma<S: Scalar>(x: S) -> Result<S, TapeError> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked<S: Scalar>(x: S) -> S {
    let mut z = x.as_f64();
    // log of the product x (x+1) ... accumulated as a sum to avoid overflow
    let mut shift = 0.0;
    while z < SHIFT_THRESHOLD {
        shift += z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Bernoulli terms B_{2k} / (2k (2k-1) z^{2k-1})
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2 * (1.0 / 1188.0 + inv2 * (-691.0 / 360360.0))))));
    let half_ln_two_pi = 0.918_938_533_204_672_8;
    S::lit((z - 0.5) * z.ln() - z + half_ln_two_pi + series - shift)
}

pub(crate) fn digamma_unchecked<S: Scalar>(x: S) -> S {
    let mut z = x.as_f64();
    let mut shift = 0.0;
    while z < SHIFT_THRESHOLD {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    // B_{2k} / (2k z^{2k})
    let series = inv2
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 120.0
                    + inv2
                        * (1.0 / 252.0
                            + inv2 * (-1.0 / 240.0 + inv2 * (1.0 / 132.0 + inv2 * (-691.0 / 32760.0))))));
    S::lit(z.ln() - 0.5 / z - series - shift)
}

pub(crate) fn trigamma_unchecked<S: Scalar>(x: S) -> S {
    let mut z = x.as_f64();
    let mut shift = 0.0;
    while z < SHIFT_THRESHOLD {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/(2z²) + Σ B_{2k} / z^{2k+1}
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))));
    S::lit(series + shift)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_gamma_at_integers() {
        assert!(log_gamma(1.0f64).unwrap().abs() < 1e-14);
        assert!((log_gamma(5.0f64).unwrap() - 24f64.ln()).abs() < 1e-13);
        assert!(log_gamma(2.0f64).unwrap().abs() < 1e-14);
    }

    #[test]
    fn log_gamma_half() {
        let expected = std::f64::consts::PI.sqrt().ln();
        assert!((log_gamma(0.5f64).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(matches!(log_gamma(0.0f64), Err(TapeError::Domain { .. })));
        assert!(matches!(digamma(-1.0f64), Err(TapeError::Domain { .. })));
        assert!(trigamma(f64::NAN).is_err());
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0f64).unwrap() + euler).abs() < 1e-13);
        // ψ(1/2) = -γ - 2 ln 2
        let expected = -euler - 2.0 * 2f64.ln();
        assert!((digamma(0.5f64).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0f64).unwrap() - pi2_6).abs() < 1e-12);
    }

    #[test]
    fn digamma_matches_log_gamma_difference() {
        let h = 1e-5;
        for &x in &[0.01f64, 0.3, 1.0, 2.5, 7.0, 11.3, 150.0, 999.0] {
            let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
            let d = digamma(x).unwrap();
            assert!((fd - d).abs() < 1e-6 * d.abs().max(1.0), "x={x}: {fd} vs {d}");
        }
    }

    #[test]
    fn recurrences_hold() {
        for &x in &[1e-3f64, 0.2, 3.7, 42.0] {
            let lg = log_gamma(x + 1.0).unwrap() - log_gamma(x).unwrap();
            assert!((lg - f64::ln(x)).abs() < 1e-11);
            let dg = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((dg - 1.0 / x).abs() < 1e-9 * (1.0 / x).max(1.0));
        }
    }
}
