use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Identity,
    Toeplitz,
    Equicorr,
}

/// Gaussian covariate law `x ~ N(0, A)` with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovariateDesign<T> {
    kind: DesignKind,
    d: usize,
    rho: f64,
    a: Matrix<T>,
    chol: Matrix<T>,
}

fn design_matrix(kind: DesignKind, d: usize, rho: f64) -> Result<Matrix<f64>> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if kind != DesignKind::Identity && !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(match kind {
        DesignKind::Identity => Matrix::identity(d),
        DesignKind::Toeplitz => Matrix::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32)),
        DesignKind::Equicorr => Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho }),
    })
}

/// Builds the design. `rho` is ignored for `Identity`.
pub fn gen_design<T: Scalar>(kind: DesignKind, d: usize, rho: f64) -> Result<CovariateDesign<T>> {
    let a = design_matrix(kind, d, rho)?;
    let chol = a.cholesky()?;
    Ok(CovariateDesign {
        kind,
        d,
        rho,
        a: a.cast(),
        chol: chol.cast(),
    })
}

impl<T: Scalar> CovariateDesign<T> {
    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn covariance(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn cholesky_factor(&self) -> &Matrix<T> {
        &self.chol
    }

    /// Writes `L z` into `x`, using `z` as scratch for the standard normals.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [T], x: &mut [T]) {
        for zi in z.iter_mut() {
            *zi = T::lit(rng.sample::<f64, _>(StandardNormal));
        }
        match self.kind {
            DesignKind::Identity => x.copy_from_slice(z),
            _ => {
                for (i, xi) in x.iter_mut().enumerate() {
                    let row = &self.chol.row(i)[..=i];
                    *xi = row.iter().zip(&z[..=i]).map(|(&l, &v)| l * v).sum();
                }
            }
        }
    }

    pub fn sample_covariate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut z = vec![T::zero(); self.d];
        let mut x = vec![T::zero(); self.d];
        self.sample_into(rng, &mut z, &mut x);
        x
    }
}

/// `A⁻¹`, the asymptotic covariance for the linear and LAD designs.
pub fn true_sigma<T: Scalar>(kind: DesignKind, d: usize, rho: f64) -> Result<Matrix<T>> {
    let a = design_matrix(kind, d, rho)?;
    let inv = match kind {
        DesignKind::Identity => Matrix::identity(d),
        DesignKind::Equicorr => {
            let s = rho / (1.0 + (d as f64 - 1.0) * rho);
            let k = 1.0 / (1.0 - rho);
            Matrix::from_fn(d, d, |i, j| k * (f64::from(u8::from(i == j)) - s))
        }
        DesignKind::Toeplitz => {
            let mut m = a.inverse_spd()?;
            m.symmetrize();
            m
        }
    };
    Ok(inv.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn residual(kind: DesignKind, d: usize, rho: f64) -> f64 {
        let a = design_matrix(kind, d, rho).unwrap();
        let s: Matrix<f64> = true_sigma(kind, d, rho).unwrap();
        a.matmul(&s).unwrap().sub(&Matrix::identity(d)).unwrap().max_abs()
    }

    #[test]
    fn true_sigma_inverts_design() {
        for kind in [DesignKind::Identity, DesignKind::Toeplitz, DesignKind::Equicorr] {
            for d in [2, 5, 20] {
                assert!(residual(kind, d, 0.5) <= 1e-10, "{kind:?} d={d}");
            }
        }
        let s: Matrix<f64> = true_sigma(DesignKind::Equicorr, 3, 0.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.5 } else { -0.5 };
                assert!((s[(i, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn toeplitz_two_by_two_factor() {
        let des: CovariateDesign<f64> = gen_design(DesignKind::Toeplitz, 2, 0.5).unwrap();
        let l = des.cholesky_factor();
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_rho_is_identity() {
        for kind in [DesignKind::Toeplitz, DesignKind::Equicorr] {
            let des: CovariateDesign<f64> = gen_design(kind, 4, 0.0).unwrap();
            assert_eq!(des.covariance(), &Matrix::identity(4));
        }
        assert!(gen_design::<f64>(DesignKind::Toeplitz, 3, 1.0).is_err());
        assert!(gen_design::<f64>(DesignKind::Equicorr, 3, -0.1).is_err());
    }

    #[test]
    fn empirical_covariance_matches() {
        let n = 100_000;
        for kind in [DesignKind::Identity, DesignKind::Toeplitz, DesignKind::Equicorr] {
            let des: CovariateDesign<f64> = gen_design(kind, 3, 0.5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut acc = Matrix::zeros(3, 3);
            for _ in 0..n {
                let x = des.sample_covariate(&mut rng);
                acc.rank1_update_upper(1.0, &x);
            }
            acc.mirror_upper();
            let emp = acc.scaled(1.0 / n as f64);
            let a = des.covariance();
            for i in 0..3 {
                for j in 0..3 {
                    // Var(x_i x_j) = a_ii a_jj + a_ij^2
                    let se = ((a[(i, i)] * a[(j, j)] + a[(i, j)].powi(2)) / n as f64).sqrt();
                    assert!((emp[(i, j)] - a[(i, j)]).abs() < 5.0 * se, "{kind:?} ({i},{j})");
                }
            }
        }
    }
}
