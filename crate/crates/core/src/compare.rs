//! Goodness of fit and likelihood-ratio statistics.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of a chi-square likelihood-ratio test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// `1 - p_value`.
    pub confidence: f64,
    /// Set when the statistic came out negative, which points at optimizer
    /// noise in the unrestricted fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Akaike information criterion, `2k - 2 LL`.
pub fn aic<T: Scalar>(n_params: usize, ll: T) -> T {
    T::lit(2.0) * T::from_usize_lossy(n_params) - T::lit(2.0) * ll
}

/// McFadden's `1 - LL(convergence) / LL(zero)`.
pub fn pseudo_r2<T: Scalar>(ll_zero: T, ll_convergence: T) -> T {
    T::one() - ll_convergence / ll_zero
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_survival(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

fn chi2_result(statistic: f64, df: usize) -> Result<TestResult> {
    if df == 0 {
        return Err(Error::Argument("degrees of freedom must be at least 1".into()));
    }
    if !statistic.is_finite() {
        return Err(Error::Argument(format!("statistic {statistic} is not finite")));
    }
    let warning = (statistic < 0.0).then(|| {
        format!("negative statistic {statistic:.4}: the larger model fits worse, likely a local optimum")
    });
    let p_value = chi2_survival(statistic, df);
    Ok(TestResult {
        statistic,
        degrees_of_freedom: df,
        p_value,
        confidence: 1.0 - p_value,
        warning,
    })
}

/// Nested test with statistic `-2 (LL_r - LL_f)`.
pub fn lr_test<T: Scalar>(ll_restricted: T, ll_full: T, df: usize) -> Result<TestResult> {
    chi2_result(-2.0 * (ll_restricted.as_f64() - ll_full.as_f64()), df)
}

/// Pooled-versus-split test, `-2 [LL(pooled) - LL(group 1) - LL(group 2)]`.
pub fn transferability_test<T: Scalar>(ll_pooled: T, ll_group1: T, ll_group2: T, df: usize) -> Result<TestResult> {
    let stat = -2.0 * (ll_pooled.as_f64() - ll_group1.as_f64() - ll_group2.as_f64());
    chi2_result(stat, df)
}

/// Transferability degrees of freedom from significant-parameter counts.
pub fn transferability_df(significant_group1: usize, significant_group2: usize, significant_pooled: usize) -> usize {
    (significant_group1 + significant_group2).saturating_sub(significant_pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn aic_examples() {
        assert_abs_diff_eq!(aic(45, -956.14), 2002.28, epsilon = 1e-9);
        assert_abs_diff_eq!(aic(25, -733.22), 1516.44, epsilon = 1e-9);
        assert_eq!(aic(0, 0.0), 0.0);
    }

    #[test]
    fn pseudo_r2_examples() {
        assert_abs_diff_eq!(pseudo_r2(-1184.3, -956.14), 0.19266, epsilon = 1e-5);
        assert_abs_diff_eq!(pseudo_r2(-1100.81, -733.22), 0.33392, epsilon = 1e-5);
        assert_eq!(pseudo_r2(-10.0, -10.0), 0.0);
    }

    #[test]
    fn chi2_examples() {
        assert_abs_diff_eq!(chi2_survival(3.841, 1), 0.05, epsilon = 5e-4);
        assert_eq!(chi2_survival(0.0, 7), 1.0);
        assert_abs_diff_eq!(chi2_survival(26.62, 9), 0.0016, epsilon = 1e-4);
        // exp(-x/2) for df = 2
        assert_abs_diff_eq!(chi2_survival(5.0, 2), (-2.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn lr_examples() {
        let r = lr_test(-959.36, -956.14, 3).unwrap();
        assert_abs_diff_eq!(r.statistic, 6.44, epsilon = 1e-9);
        assert_abs_diff_eq!(r.confidence, 0.908, epsilon = 1e-3);
        let r = lr_test(-737.21, -733.22, 2).unwrap();
        assert_abs_diff_eq!(r.confidence, 0.982, epsilon = 1e-3);
        let r = lr_test(-5.0, -5.0, 1).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(r.warning.is_none());
        let r = lr_test(-4.0, -5.0, 1).unwrap();
        assert!(r.warning.is_some());
        assert_eq!(r.p_value, 1.0);
        assert!(lr_test(-4.0, -5.0, 0).is_err());
    }

    #[test]
    fn transferability_examples() {
        let r = transferability_test(-10.0, -10.0, 0.0, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        let r = transferability_test(-10.0, -2.0, -3.0, 4).unwrap();
        assert_eq!(r.statistic, 10.0);
        assert!(chi2_survival(175.4, 16) < 1e-4);
        assert_eq!(transferability_df(20, 15, 19), 16);
    }

    proptest! {
        #[test]
        fn aic_monotone(k in 0usize..100, ll in -1e4f64..0.0, d in 0.001f64..100.0) {
            prop_assert!(aic(k, ll + d) < aic(k, ll));
            prop_assert!((aic(k + 1, ll) - aic(k, ll) - 2.0).abs() < 1e-9);
        }

        #[test]
        fn pseudo_r2_range(ll0 in -1e4f64..-1.0, frac in 0.0f64..0.999) {
            let llc = ll0 * (1.0 - frac);
            let r = pseudo_r2(ll0, llc);
            prop_assert!((0.0..1.0).contains(&r));
        }

        #[test]
        fn chi2_monotone(x in 0.0f64..60.0, dx in 0.01f64..5.0, df in 1usize..40) {
            prop_assert!(chi2_survival(x + dx, df) <= chi2_survival(x, df));
            prop_assert!(chi2_survival(x, df + 1) >= chi2_survival(x, df));
            let p = chi2_survival(x, df);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn lr_shift_invariant(a in -1e3f64..0.0, b in -1e3f64..0.0, c in -1e3f64..1e3) {
            let r1 = lr_test(a, b, 2).unwrap();
            let r2 = lr_test(a + c, b + c, 2).unwrap();
            prop_assert!((r1.statistic - r2.statistic).abs() < 1e-9);
        }
    }
}
