//! Confidence regions from `(θ̂, Σ̂, n)` and delta-method prediction intervals.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{check_significance, chi2_quantile, normal_quantile};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::models::sigmoid;
use crate::mvn::{MvnOptions, RectProbEvaluator};
use crate::scalar::Scalar;

/// Relative eigenvalue floor below which a covariance is treated as singular.
const SINGULAR_RTOL: f64 = 1e-13;

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// `{θ : n (θ̂−θ)ᵀ Σ̂⁻¹ (θ̂−θ) ≤ χ²_{d,1−p}}`.
#[derive(Clone, Debug, Serialize)]
pub struct EllipsoidRegion {
    pub center: Vec<f64>,
    /// `Σ̂` rows.
    pub shape: Vec<Vec<f64>>,
    #[serde(skip)]
    chol: Matrix<f64>,
    pub n: u64,
    /// `χ²_{d,1−p}`.
    pub threshold: f64,
    pub p: f64,
    #[serde(skip)]
    ln_det_sigma: f64,
}

pub fn ellipsoid_region<T: Scalar>(theta_hat: &[T], sigma: &Matrix<T>, n: u64, p: f64) -> Result<EllipsoidRegion> {
    check_significance(p)?;
    let d = theta_hat.len();
    check_dim(d, sigma.rows())?;
    check_dim(d, sigma.cols())?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let s: Matrix<f64> = sigma.cast();
    let eig = s.symmetric_eigen()?;
    let top = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.values[0] <= SINGULAR_RTOL * top || top == 0.0 {
        return Err(Error::Singular {
            index: 0,
            eigenvalue: eig.values[0],
        });
    }
    let chol = s.cholesky().map_err(|_| Error::Singular {
        index: 0,
        eigenvalue: eig.values[0],
    })?;
    let ln_det_sigma = eig.values.iter().map(|v| v.ln()).sum();
    Ok(EllipsoidRegion {
        center: to_f64(theta_hat),
        shape: s.to_rows(),
        chol,
        n,
        threshold: chi2_quantile(d, 1.0 - p)?,
        p,
        ln_det_sigma,
    })
}

impl EllipsoidRegion {
    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    /// `n (θ̂−θ)ᵀ Σ̂⁻¹ (θ̂−θ)`.
    pub fn statistic<T: Scalar>(&self, theta: &[T]) -> Result<f64> {
        let d = self.dimension();
        check_dim(d, theta.len())?;
        // forward substitution L w = θ̂ − θ
        let mut w = vec![0.0; d];
        for i in 0..d {
            let row = self.chol.row(i);
            let s: f64 = row[..i].iter().zip(&w[..i]).map(|(l, v)| l * v).sum();
            w[i] = (self.center[i] - theta[i].as_f64() - s) / row[i];
        }
        Ok(self.n as f64 * dot(&w, &w))
    }

    pub fn contains<T: Scalar>(&self, theta: &[T]) -> Result<bool> {
        Ok(self.statistic(theta)? <= self.threshold)
    }

    /// `ln Vol(E)` for the ellipsoid with shape `Σ̂/n`.
    pub fn ln_volume(&self) -> f64 {
        let d = self.dimension() as f64;
        0.5 * d * std::f64::consts::PI.ln() - ln_gamma(0.5 * d + 1.0)
            + 0.5 * d * self.threshold.ln()
            + 0.5 * (self.ln_det_sigma - d * (self.n as f64).ln())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RectKind {
    Uncorrected,
    Bonferroni,
    Simultaneous,
}

/// Axis-aligned box `θ̂_i ± z·sqrt(σ̂_ii/n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectRegion {
    pub kind: RectKind,
    pub center: Vec<f64>,
    pub halfwidths: Vec<f64>,
    pub z: f64,
    pub p: f64,
    /// Normal-law probability of the box, when it was computed.
    pub probability: Option<f64>,
    pub qmc_std_error: Option<f64>,
    pub warning: Option<String>,
}

impl RectRegion {
    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn contains<T: Scalar>(&self, theta: &[T]) -> Result<bool> {
        check_dim(self.dimension(), theta.len())?;
        Ok(self
            .center
            .iter()
            .zip(&self.halfwidths)
            .zip(theta)
            .all(|((c, h), t)| (t.as_f64() - c).abs() <= *h))
    }

    pub fn ln_volume(&self) -> f64 {
        self.halfwidths.iter().map(|h| (2.0 * h).ln()).sum()
    }
}

fn standard_errors<T: Scalar>(sigma: &Matrix<T>, n: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    sigma
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let v = v.as_f64();
            if v > 0.0 && v.is_finite() {
                Ok((v / n as f64).sqrt())
            } else {
                Err(Error::Degenerate(format!("variance of coordinate {i} is {v}")))
            }
        })
        .collect()
}

fn rect<T: Scalar>(kind: RectKind, theta_hat: &[T], sigma: &Matrix<T>, n: u64, p: f64, z: f64) -> Result<RectRegion> {
    check_dim(theta_hat.len(), sigma.rows())?;
    let se = standard_errors(sigma, n)?;
    Ok(RectRegion {
        kind,
        center: to_f64(theta_hat),
        halfwidths: se.iter().map(|s| z * s).collect(),
        z,
        p,
        probability: None,
        qmc_std_error: None,
        warning: None,
    })
}

/// Per-coordinate intervals at level `1−p`, no multiplicity correction.
pub fn marginal_cis<T: Scalar>(theta_hat: &[T], sigma: &Matrix<T>, n: u64, p: f64) -> Result<RectRegion> {
    check_significance(p)?;
    rect(RectKind::Uncorrected, theta_hat, sigma, n, p, normal_quantile(1.0 - p / 2.0)?)
}

pub fn bonferroni_region<T: Scalar>(theta_hat: &[T], sigma: &Matrix<T>, n: u64, p: f64) -> Result<RectRegion> {
    check_significance(p)?;
    let d = theta_hat.len() as f64;
    rect(RectKind::Bonferroni, theta_hat, sigma, n, p, normal_quantile(1.0 - p / (2.0 * d))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousOptions {
    /// Stop once the box probability is this close to `1−p`.
    pub prob_tol: f64,
    /// Stop once the bracket on `z` is this narrow.
    pub z_tol: f64,
    pub mvn: MvnOptions,
}

impl Default for SimultaneousOptions {
    fn default() -> Self {
        Self {
            prob_tol: 1e-3,
            z_tol: 1e-3,
            mvn: MvnOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousZ {
    pub z: f64,
    pub z_lower: f64,
    pub z_upper: f64,
    pub probability: f64,
    pub std_error: f64,
    pub points: usize,
    pub evaluations: usize,
    pub warning: Option<String>,
}

/// Critical value `z*` with `P(|X_i| ≤ z*·σ_i ∀i) = 1−p` under `N(0, Σ̂)`.
///
/// Bracketed root search between the uncorrected and Bonferroni values. The
/// lattice size is fixed after the first evaluation so every probability uses
/// the same random shifts, which makes the estimate monotone and smooth in `z`.
pub fn simultaneous_z<T: Scalar>(sigma: &Matrix<T>, p: f64, opts: &SimultaneousOptions) -> Result<SimultaneousZ> {
    check_significance(p)?;
    if !(opts.prob_tol > 0.0 && opts.z_tol > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    let d = sigma.rows();
    let target = 1.0 - p;
    let z_lower = normal_quantile(1.0 - p / 2.0)?;
    let z_upper = normal_quantile(1.0 - p / (2.0 * d as f64))?;
    let done = |z: f64, probability: f64, std_error: f64, points, evaluations, warning| SimultaneousZ {
        z,
        z_lower,
        z_upper,
        probability,
        std_error,
        points,
        evaluations,
        warning,
    };
    if d == 1 {
        return Ok(done(z_lower, target, 0.0, 0, 0, None));
    }
    let eval = RectProbEvaluator::new(&sigma.cast(), opts.mvn)?;
    let mid = 0.5 * (z_lower + z_upper);
    let first = eval.estimate(mid);
    let points = first.points;
    let mut evaluations = 1;
    let mut prob = |z: f64| {
        evaluations += 1;
        eval.estimate_with_points(z, points)
    };
    let (mut lo, mut hi) = if first.probability < target {
        let hi_est = prob(z_upper);
        if hi_est.probability < target {
            let w = format!(
                "box probability {:.6} at the Bonferroni value is below {target}; using the Bonferroni value",
                hi_est.probability
            );
            return Ok(done(z_upper, hi_est.probability, hi_est.std_error, points, evaluations, Some(w)));
        }
        ((mid, first.probability), (z_upper, hi_est.probability))
    } else {
        let lo_est = prob(z_lower);
        if lo_est.probability >= target {
            return Ok(done(z_lower, lo_est.probability, lo_est.std_error, points, evaluations, None));
        }
        ((z_lower, lo_est.probability), (mid, first.probability))
    };
    // Illinois false position on P(z) − (1−p); the last two iterates feed a
    // closing secant step.
    let mut recent: Vec<(f64, f64)> = Vec::new();
    let mut side = 0i8;
    let (mut flo, mut fhi) = (lo.1 - target, hi.1 - target);
    for _ in 0..100 {
        if hi.0 - lo.0 <= opts.z_tol {
            break;
        }
        let z = if fhi > flo {
            (lo.0 - flo * (hi.0 - lo.0) / (fhi - flo)).clamp(lo.0, hi.0)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let est = prob(z);
        recent.push((z, est.probability));
        let f = est.probability - target;
        if f < 0.0 {
            lo = (z, est.probability);
            flo = f;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = (z, est.probability);
            fhi = f;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if f.abs() <= opts.prob_tol {
            break;
        }
    }
    let secant = match recent.as_slice() {
        [.., (z0, p0), (z1, p1)] if p1 != p0 => Some(z1 + (target - p1) * (z1 - z0) / (p1 - p0)),
        _ => None,
    };
    let z = match secant.filter(|z| *z >= lo.0 && *z <= hi.0) {
        Some(z) => z,
        None if hi.1 > lo.1 => lo.0 + (target - lo.1) / (hi.1 - lo.1) * (hi.0 - lo.0),
        None => 0.5 * (lo.0 + hi.0),
    };
    let z = z.clamp(lo.0, hi.0);
    let fin = prob(z);
    Ok(done(z, fin.probability, fin.std_error, points, evaluations, None))
}

/// Box with the simultaneous critical value.
pub fn simultaneous_region<T: Scalar>(
    theta_hat: &[T],
    sigma: &Matrix<T>,
    n: u64,
    p: f64,
    opts: &SimultaneousOptions,
) -> Result<RectRegion> {
    standard_errors(sigma, n)?;
    let sz = simultaneous_z(sigma, p, opts)?;
    let mut r = rect(RectKind::Simultaneous, theta_hat, sigma, n, p, sz.z)?;
    r.probability = Some(sz.probability);
    r.qmc_std_error = Some(sz.std_error);
    r.warning = sz.warning;
    Ok(r)
}

/// `(Vol(C)/Vol(E))^{1/d}`.
pub fn volume_ratio(rect: &RectRegion, ell: &EllipsoidRegion) -> Result<f64> {
    let d = ell.dimension();
    check_dim(d, rect.dimension())?;
    Ok(((rect.ln_volume() - ell.ln_volume()) / d as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub p_hat: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    /// Significance `p` of the two-sided interval.
    pub p: f64,
}

/// Delta-method interval for `σ(xᵀθ)`, `se = p̂(1−p̂)·sqrt(xᵀΣ̂x/n)`.
pub fn predict_prob_interval<T: Scalar>(
    x: &[T],
    theta_hat: &[T],
    sigma: &Matrix<T>,
    n: u64,
    p: f64,
) -> Result<PredictionInterval> {
    check_significance(p)?;
    check_dim(theta_hat.len(), x.len())?;
    let z = normal_quantile(1.0 - p / 2.0)?;
    let p_hat = sigmoid(dot(x, theta_hat).as_f64());
    let q = sigma.quad_form(x)?.as_f64().max(0.0);
    let se = p_hat * (1.0 - p_hat) * (q / n as f64).sqrt();
    Ok(PredictionInterval {
        p_hat,
        se,
        lower: (p_hat - z * se).max(0.0),
        upper: (p_hat + z * se).min(1.0),
        p,
    })
}

/// `ỹ = 1` iff the lower bound `p̂ − z·se` exceeds the cutoff.
pub fn classify_conservative(p_hat: f64, se: f64, q: f64, z: f64) -> u8 {
    u8::from(p_hat - z * se > q)
}

/// `ŷ = 1` iff `p̂ > q`.
pub fn classify_plain(p_hat: f64, q: f64) -> u8 {
    u8::from(p_hat > q)
}

/// The four regions built from one estimate.
#[derive(Clone, Debug, Serialize)]
pub struct RegionSet {
    pub ellipsoid: EllipsoidRegion,
    pub uncorrected: RectRegion,
    pub bonferroni: RectRegion,
    pub simultaneous: RectRegion,
    pub volume_ratio: f64,
}

pub fn all_regions<T: Scalar>(
    theta_hat: &[T],
    sigma: &Matrix<T>,
    n: u64,
    p: f64,
    opts: &SimultaneousOptions,
) -> Result<RegionSet> {
    let ellipsoid = ellipsoid_region(theta_hat, sigma, n, p)?;
    let simultaneous = simultaneous_region(theta_hat, sigma, n, p, opts)?;
    let volume_ratio = volume_ratio(&simultaneous, &ellipsoid)?;
    Ok(RegionSet {
        uncorrected: marginal_cis(theta_hat, sigma, n, p)?,
        bonferroni: bonferroni_region(theta_hat, sigma, n, p)?,
        ellipsoid,
        simultaneous,
        volume_ratio,
    })
}
