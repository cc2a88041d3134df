//! Normal and chi-square quantiles (double precision).

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile `z_s` for `s` in (0, 1).
pub fn normal_quantile(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level must lie in (0, 1), got {s}")));
    }
    Ok(std_normal().inverse_cdf(s))
}

/// Unchecked quantile for hot loops; `s` is clamped away from 0 and 1.
#[inline]
pub(crate) fn normal_quantile_clamped(s: f64) -> f64 {
    let s = s.clamp(1e-300, 1.0 - f64::EPSILON);
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * s)
}

/// Chi-square quantile `χ²_{df, s}`.
pub fn chi2_quantile(df: usize, s: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidParameter("chi-square needs df >= 1".into()));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level must lie in (0, 1), got {s}")));
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(chi.inverse_cdf(s))
}

/// Two-sided critical value `z_{1−p/2}` for significance `p`.
pub fn two_sided_z(p: f64) -> Result<f64> {
    check_significance(p)?;
    normal_quantile(1.0 - p / 2.0)
}

pub(crate) fn check_significance(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
    }
    Ok(())
}
