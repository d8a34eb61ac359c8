//! Time-uniform boundaries and confidence-sequence widths.
//!
//! The boundary is the polynomial-stitched curve
//!
//! ```text
//! psi(v; alpha) = 1.7 * sqrt(v * (ln ln(2v) + 0.72 * ln(5.2 / alpha)))
//! ```
//!
//! evaluated at `v_eff = max(v, 1)` with the radicand clamped at zero, so it is
//! real and monotone for every `v >= 0`. Natural logarithms throughout.
//!
//! Two widths are built on top of it: one for the proxy-score mean (a
//! sub-Gaussian martingale with known variance process `n / 4`) and one for
//! the IPW residual mean (empirical-Bernstein form with the observed
//! uncentered sum of squares and range `2 / pi_min`).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Constants of the stitched boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub leading_coeff: f64,
    pub log_coeff: f64,
    pub alpha_scale: f64,
    pub range_coeff: f64,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        Self {
            leading_coeff: 1.7,
            log_coeff: 0.72,
            alpha_scale: 5.2,
            range_coeff: 0.45,
        }
    }
}

/// Per-arm failure budget: `delta_k = delta / num_arms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsBudget {
    delta: f64,
    num_arms: usize,
    delta_k: f64,
}

impl CsBudget {
    pub fn new(delta: f64, num_arms: usize) -> Result<Self> {
        check_probability("delta", delta)?;
        if num_arms == 0 {
            return Err(invalid("num_arms", "must be positive"));
        }
        Ok(Self {
            delta,
            num_arms,
            delta_k: delta / num_arms as f64,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn delta_k(&self) -> f64 {
        self.delta_k
    }
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{p} is not in (0, 1)")))
    }
}

impl BoundaryParams {
    pub fn psi(&self, v: f64, alpha: f64) -> Result<f64> {
        check_probability("alpha", alpha)?;
        if !(v >= 0.0) {
            return Err(invalid("v", format!("{v} is negative or NaN")));
        }
        Ok(self.psi_unchecked(v, alpha))
    }

    #[inline]
    pub(crate) fn psi_unchecked(&self, v: f64, alpha: f64) -> f64 {
        let v_eff = v.max(1.0);
        let radicand = (2.0 * v_eff).ln().ln() + self.log_coeff * (self.alpha_scale / alpha).ln();
        self.leading_coeff * (v_eff * radicand.max(0.0)).sqrt()
    }

    pub fn width_proxy(&self, n_pulls: u64, delta_k: f64) -> Result<f64> {
        if n_pulls == 0 {
            return Err(invalid("n_pulls", "width is undefined before the first pull"));
        }
        check_probability("delta_k", delta_k)?;
        Ok(self.width_proxy_unchecked(n_pulls, delta_k))
    }

    #[inline]
    pub(crate) fn width_proxy_unchecked(&self, n_pulls: u64, delta_k: f64) -> f64 {
        let n = n_pulls as f64;
        self.psi_unchecked(n / 4.0, delta_k / 2.0) / n
    }

    pub fn width_residual(&self, n_pulls: u64, v_hat: f64, pi_min: f64, delta_k: f64) -> Result<f64> {
        if n_pulls == 0 {
            return Err(invalid("n_pulls", "width is undefined before the first pull"));
        }
        if !(pi_min > 0.0 && pi_min <= 1.0) {
            return Err(invalid("pi_min", format!("{pi_min} is not in (0, 1]")));
        }
        if !(v_hat >= 0.0) {
            return Err(invalid("v_hat", format!("{v_hat} is negative or NaN")));
        }
        check_probability("delta_k", delta_k)?;
        Ok(self.width_residual_unchecked(n_pulls, v_hat, pi_min, delta_k))
    }

    #[inline]
    pub(crate) fn width_residual_unchecked(
        &self,
        n_pulls: u64,
        v_hat: f64,
        pi_min: f64,
        delta_k: f64,
    ) -> f64 {
        (self.psi_unchecked(v_hat, delta_k / 2.0) + self.range_term(pi_min, delta_k)) / n_pulls as f64
    }

    /// `c_range * (2 / pi_min) * ln(2 * alpha_scale / delta_k)`, the part of the
    /// residual boundary that does not shrink with the observed variance.
    #[inline]
    pub fn range_term(&self, pi_min: f64, delta_k: f64) -> f64 {
        self.range_coeff * (2.0 / pi_min) * (2.0 * self.alpha_scale / delta_k).ln()
    }
}

/// [`BoundaryParams::psi`] with the default constants.
pub fn psi(v: f64, alpha: f64) -> Result<f64> {
    BoundaryParams::default().psi(v, alpha)
}

/// Width of the proxy-mean sequence: `psi(n / 4, delta_k / 2) / n`.
pub fn width_proxy(n_pulls: u64, delta_k: f64) -> Result<f64> {
    BoundaryParams::default().width_proxy(n_pulls, delta_k)
}

/// Width of the IPW residual-mean sequence:
/// `(psi(v_hat, delta_k / 2) + 0.45 * (2 / pi_min) * ln(10.4 / delta_k)) / n`.
pub fn width_residual(n_pulls: u64, v_hat: f64, pi_min: f64, delta_k: f64) -> Result<f64> {
    BoundaryParams::default().width_residual(n_pulls, v_hat, pi_min, delta_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Reference values from a 30-digit evaluation of the closed form.
    const PSI_25_005: f64 = 18.443_268_739_557_11;
    const PSI_1_005: f64 = 2.933_398_411_817_317;
    const WIDTH_PROXY_100: f64 = 0.211_737_268_991_009_1;
    const WIDTH_PROXY_1: f64 = 3.389_605_810_278_037;
    const WIDTH_RESIDUAL_200: f64 = 0.756_820_971_101_967_1;

    #[test]
    fn psi_reference_values() {
        assert_abs_diff_eq!(psi(25.0, 0.05).unwrap(), PSI_25_005, epsilon = 1e-12);
        assert_abs_diff_eq!(psi(25.0, 0.05).unwrap(), 18.44, epsilon = 0.01);
        assert_abs_diff_eq!(psi(1.0, 0.05).unwrap(), PSI_1_005, epsilon = 1e-12);
        assert_eq!(psi(0.0, 0.05).unwrap(), psi(1.0, 0.05).unwrap());
        assert_eq!(psi(0.3, 0.05).unwrap(), psi(1.0, 0.05).unwrap());
    }

    #[test]
    fn psi_rejects_bad_arguments() {
        assert!(psi(1.0, 0.0).is_err());
        assert!(psi(1.0, 1.0).is_err());
        assert!(psi(1.0, -0.1).is_err());
        assert!(psi(-1.0, 0.05).is_err());
        assert!(psi(f64::NAN, 0.05).is_err());
    }

    #[test]
    fn proxy_width_reference_values() {
        assert_abs_diff_eq!(width_proxy(100, 0.0125).unwrap(), WIDTH_PROXY_100, epsilon = 1e-12);
        assert_abs_diff_eq!(
            width_proxy(100, 0.0125).unwrap(),
            psi(25.0, 0.00625).unwrap() / 100.0,
            epsilon = 1e-15
        );
        // variance floor active at n = 1
        assert_abs_diff_eq!(width_proxy(1, 0.025).unwrap(), psi(1.0, 0.0125).unwrap(), epsilon = 1e-15);
        assert_abs_diff_eq!(width_proxy(1, 0.025).unwrap(), WIDTH_PROXY_1, epsilon = 1e-12);
        assert!(width_proxy(0, 0.025).is_err());
    }

    #[test]
    fn residual_width_reference_values() {
        assert_abs_diff_eq!(
            width_residual(200, 50.0, 0.05, 0.0125).unwrap(),
            WIDTH_RESIDUAL_200,
            epsilon = 1e-12
        );
        assert!(width_residual(10, 1.0, 0.0, 0.05).is_err());
        assert!(width_residual(10, 1.0, -0.5, 0.05).is_err());
        assert!(width_residual(0, 1.0, 0.5, 0.05).is_err());
    }

    #[test]
    fn zero_audit_residual_width_is_finite_and_shrinking() {
        let (pi_min, dk) = (0.05, 0.0125);
        let p = BoundaryParams::default();
        let mut prev = f64::INFINITY;
        for n in [1, 10, 100, 1000, 10_000] {
            let w = width_residual(n, 0.0, pi_min, dk).unwrap();
            let expected = (p.range_term(pi_min, dk) + psi(0.0, dk / 2.0).unwrap()) / n as f64;
            assert_abs_diff_eq!(w, expected, epsilon = 1e-12);
            assert!(w.is_finite() && w < prev);
            prev = w;
        }
    }

    #[test]
    fn doubling_pi_min_halves_range_term() {
        let p = BoundaryParams::default();
        for dk in [0.001, 0.0125, 0.1] {
            let a = p.range_term(0.05, dk);
            let b = p.range_term(0.1, dk);
            assert_abs_diff_eq!(a, 2.0 * b, epsilon = 1e-12);
            let split = width_residual(50, 7.0, 0.05, dk).unwrap() * 50.0 - psi(7.0, dk / 2.0).unwrap();
            assert_abs_diff_eq!(split, a, epsilon = 1e-9);
        }
    }

    #[test]
    fn budget_splits_evenly() {
        let b = CsBudget::new(0.05, 4).unwrap();
        assert_eq!(b.delta_k(), 0.05 / 4.0);
        assert!(CsBudget::new(0.05, 0).is_err());
        assert!(CsBudget::new(1.5, 2).is_err());
    }

    #[test]
    fn psi_monotone_on_grid() {
        let alphas = [0.001, 0.01, 0.05, 0.1, 0.3, 0.7, 0.99];
        let vs: Vec<f64> = (0..200).map(|i| 1.0 + i as f64 * 2.5).collect();
        for &a in &alphas {
            for w in vs.windows(2) {
                assert!(psi(w[1], a).unwrap() >= psi(w[0], a).unwrap());
            }
        }
        for &v in &vs {
            for w in alphas.windows(2) {
                assert!(psi(v, w[1]).unwrap() <= psi(v, w[0]).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn proxy_width_times_n_is_psi(n in 1u64..1_000_000, dk in 1e-6f64..0.99) {
            let w = width_proxy(n, dk).unwrap();
            let p = psi(n as f64 / 4.0, dk / 2.0).unwrap();
            prop_assert!((w * n as f64 - p).abs() <= 1e-9 * p.max(1.0));
        }

        #[test]
        fn proxy_width_shrinks_beyond_floor(n in 4u64..1_000_000, dk in 1e-6f64..0.99) {
            prop_assert!(width_proxy(n + 1, dk).unwrap() < width_proxy(n, dk).unwrap());
            prop_assert!(width_proxy(4 * n, dk).unwrap() <= width_proxy(n, dk).unwrap());
        }
    }
}
