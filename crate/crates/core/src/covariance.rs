//! Batch-means estimators of the asymptotic covariance of averaged SGD.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::batching::{BatchMeans, IbsBatches};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimatorKind {
    Ebs,
    /// EBS at twice the batch size, from pairwise-merged batch means.
    Ebs2b,
    Lugsail,
    Ibs,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ebs => "EBS",
            Self::Ebs2b => "EBS2B",
            Self::Lugsail => "LUGSAIL",
            Self::Ibs => "IBS",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize + Scalar", deserialize = "T: Deserialize<'de> + Scalar"))]
pub struct CovEstimate<T> {
    #[serde(with = "rows")]
    pub matrix: Matrix<T>,
    pub kind: EstimatorKind,
    /// Batch size; 0 for IBS.
    pub b_n: u64,
    /// Number of batches.
    pub a_n: usize,
    /// Iterates covered by the batches.
    pub n: u64,
    pub min_eigenvalue: T,
    /// Set when `min_eigenvalue < 0` (only possible for lugsail).
    pub indefinite: bool,
    /// Set when eigenvalues were clipped by [`psd_project`].
    #[serde(default)]
    pub projected: bool,
}

mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: Scalar + Serialize>(
        m: &Matrix<T>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        m.to_rows().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar + Deserialize<'de>>(
        d: D,
    ) -> std::result::Result<Matrix<T>, D::Error> {
        let r: Vec<Vec<T>> = Vec::deserialize(d)?;
        Matrix::from_rows(&r).map_err(serde::de::Error::custom)
    }
}

impl<T: Scalar> CovEstimate<T> {
    fn build(mut matrix: Matrix<T>, kind: EstimatorKind, b_n: u64, a_n: usize, n: u64) -> Result<Self> {
        matrix.symmetrize();
        let min_eigenvalue = matrix.min_eigenvalue()?;
        Ok(Self {
            matrix,
            kind,
            b_n,
            a_n,
            n,
            min_eigenvalue,
            indefinite: min_eigenvalue < T::zero(),
            projected: false,
        })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.rows()
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Upper triangle as `i,j,value` CSV rows.
    pub fn write_upper_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["i", "j", "value"])?;
        let d = self.dimension();
        for i in 0..d {
            for j in i..d {
                wtr.write_record([i.to_string(), j.to_string(), self.matrix[(i, j)].to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `(1/K) Σ_k w_k (m_k − c)(m_k − c)ᵀ` accumulated on the upper triangle.
fn weighted_scatter<T: Scalar>(means: &[Vec<T>], weights: &[T], center: &[T]) -> Matrix<T> {
    let d = center.len();
    let mut out = Matrix::zeros(d, d);
    let mut dev = vec![T::zero(); d];
    for (m, &w) in means.iter().zip(weights) {
        for ((di, &mi), &ci) in dev.iter_mut().zip(m).zip(center) {
            *di = mi - ci;
        }
        out.rank1_update_upper(w, &dev);
    }
    out.mirror_upper();
    out.scaled(T::one() / T::from_count(means.len()))
}

/// Equal-batch-size estimator `(b/a) Σ_k (θ̄_k − θ̄)(θ̄_k − θ̄)ᵀ`, centered at
/// the average of the batch means.
pub fn ebs_estimate<T: Scalar>(bm: &BatchMeans<T>) -> Result<CovEstimate<T>> {
    ebs_with_kind(bm, EstimatorKind::Ebs)
}

fn ebs_with_kind<T: Scalar>(bm: &BatchMeans<T>, kind: EstimatorKind) -> Result<CovEstimate<T>> {
    let a = bm.count();
    if a < 2 {
        return Err(Error::InsufficientBatches { needed: 2, found: a });
    }
    let b = T::from_u64(bm.batch_size()).expect("batch size representable");
    let weights = vec![b; a];
    let m = weighted_scatter(bm.means(), &weights, bm.center());
    CovEstimate::build(m, kind, bm.batch_size(), a, bm.covered())
}

/// Averages adjacent batch means into batches of twice the size. An odd
/// trailing mean is dropped.
pub fn pair_merge<T: Scalar>(bm: &BatchMeans<T>) -> Result<BatchMeans<T>> {
    let a = bm.count();
    if a < 4 {
        return Err(Error::InsufficientBatches { needed: 4, found: a });
    }
    let half = T::lit(0.5);
    let merged = bm
        .means()
        .chunks_exact(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(&x, &y)| (x + y) * half).collect())
        .collect();
    BatchMeans::new(merged, bm.batch_size() * 2)
}

/// Estimator at doubled batch size built from merged batch means.
pub fn ebs2b_estimate<T: Scalar>(bm: &BatchMeans<T>) -> Result<CovEstimate<T>> {
    ebs_with_kind(&pair_merge(bm)?, EstimatorKind::Ebs2b)
}

/// Lugsail combination `2 Σ̂_{2b} − Σ̂_b`. May be indefinite; see
/// [`CovEstimate::indefinite`].
pub fn lugsail_estimate<T: Scalar>(bm: &BatchMeans<T>) -> Result<CovEstimate<T>> {
    let big = ebs2b_estimate(bm)?;
    let small = ebs_estimate(bm)?;
    lugsail_combine(&big, &small, bm)
}

fn lugsail_combine<T: Scalar>(
    big: &CovEstimate<T>,
    small: &CovEstimate<T>,
    bm: &BatchMeans<T>,
) -> Result<CovEstimate<T>> {
    let two = T::lit(2.0);
    let d = small.dimension();
    let m = Matrix::from_fn(d, d, |i, j| two * big.matrix[(i, j)] - small.matrix[(i, j)]);
    CovEstimate::build(m, EstimatorKind::Lugsail, bm.batch_size(), bm.count(), bm.covered())
}

/// EBS, doubled-batch and lugsail estimates in one pass.
#[derive(Clone, Debug)]
pub struct EbsFamily<T> {
    pub ebs: CovEstimate<T>,
    pub ebs2b: CovEstimate<T>,
    pub lugsail: CovEstimate<T>,
}

pub fn ebs_family<T: Scalar>(bm: &BatchMeans<T>) -> Result<EbsFamily<T>> {
    let ebs = ebs_estimate(bm)?;
    let ebs2b = ebs2b_estimate(bm)?;
    let lugsail = lugsail_combine(&ebs2b, &ebs, bm)?;
    Ok(EbsFamily { ebs, ebs2b, lugsail })
}

/// General batch-means estimator `(1/K) Σ_k b_k (θ̄_k − θ̂)(θ̄_k − θ̂)ᵀ` with
/// `θ̂` the mean of all covered iterates.
pub fn ibs_estimate<T: Scalar>(batches: &IbsBatches<T>) -> Result<CovEstimate<T>> {
    let k = batches.means.len();
    check_dim(k, batches.sizes.len())?;
    if k < 2 {
        return Err(Error::InsufficientBatches { needed: 2, found: k });
    }
    let d = batches.means[0].len();
    let total: u64 = batches.sizes.iter().sum();
    let weights: Vec<T> = batches
        .sizes
        .iter()
        .map(|&b| T::from_u64(b).expect("size representable"))
        .collect();
    let mut center = vec![T::zero(); d];
    for (m, &w) in batches.means.iter().zip(&weights) {
        check_dim(d, m.len())?;
        for (c, &v) in center.iter_mut().zip(m) {
            *c += w * v;
        }
    }
    let tf = T::from_u64(total).expect("count representable");
    center.iter_mut().for_each(|c| *c /= tf);
    let m = weighted_scatter(&batches.means, &weights, &center);
    CovEstimate::build(m, EstimatorKind::Ibs, 0, k, total)
}

/// Clips eigenvalues below `ε = 1e-10 · trace / d`. Inputs already above the
/// floor are returned unchanged.
pub fn psd_project<T: Scalar>(est: &CovEstimate<T>) -> Result<CovEstimate<T>> {
    let d = est.dimension();
    let eig = est.matrix.symmetric_eigen()?;
    let trace = est.matrix.trace();
    let mut floor = T::lit(1e-10) * trace / T::from_count(d);
    if !(floor > T::zero()) {
        let scale = eig.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        floor = T::lit(1e-10) * scale.max(T::min_positive_value());
    }
    if eig.values[0] >= floor {
        return Ok(est.clone());
    }
    let mut clipped = eig.clone();
    clipped.values.iter_mut().for_each(|v| *v = v.max(floor));
    let matrix = clipped.reconstruct();
    let min_eigenvalue = clipped.values[0];
    Ok(CovEstimate {
        matrix,
        kind: est.kind,
        b_n: est.b_n,
        a_n: est.a_n,
        n: est.n,
        min_eigenvalue,
        indefinite: false,
        projected: true,
    })
}
