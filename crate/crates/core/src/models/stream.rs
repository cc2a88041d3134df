use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

use super::design::CovariateDesign;
use super::{DataSource, Datum, ModelKind};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::models::sigmoid;
use crate::scalar::Scalar;

/// Generator for replication `rep` of a run seeded with `master`.
///
/// ChaCha streams give independent sequences per index, so the result does
/// not depend on which thread runs which replication.
pub fn replication_rng(master: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng
}

/// Laplace draw with density `e^{−|ε|}/2`, by inverting the CDF.
pub fn sample_double_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `β*_k = k/(d+1)`, or `(k−1)/(d−1)` with `include_endpoints` (and `d > 1`).
pub fn default_beta_star(d: usize, include_endpoints: bool) -> Vec<f64> {
    if include_endpoints && d > 1 {
        (0..d).map(|k| k as f64 / (d - 1) as f64).collect()
    } else {
        (1..=d).map(|k| k as f64 / (d + 1) as f64).collect()
    }
}

/// Unbounded i.i.d. stream from one of the simulation models.
#[derive(Clone, Debug)]
pub struct SyntheticStream<T> {
    model: ModelKind,
    design: CovariateDesign<T>,
    beta_star: Vec<T>,
    intercept: bool,
    rng: ChaCha8Rng,
    z: Vec<T>,
}

/// Stream seeded directly from `seed`.
pub fn gen_stream<T: Scalar>(
    model: ModelKind,
    design: CovariateDesign<T>,
    beta_star: Vec<T>,
    seed: u64,
) -> Result<SyntheticStream<T>> {
    SyntheticStream::new(model, design, beta_star, ChaCha8Rng::seed_from_u64(seed))
}

impl<T: Scalar> SyntheticStream<T> {
    /// For `ModelKind::Mean` the design is ignored and `beta_star[0]` is the mean.
    pub fn new(model: ModelKind, design: CovariateDesign<T>, beta_star: Vec<T>, rng: ChaCha8Rng) -> Result<Self> {
        let need = if model == ModelKind::Mean { 1 } else { design.dimension() };
        if beta_star.len() != need {
            return Err(Error::DimensionMismatch {
                expected: need,
                found: beta_star.len(),
            });
        }
        let z = vec![T::zero(); design.dimension()];
        Ok(Self {
            model,
            design,
            beta_star,
            intercept: false,
            rng,
            z,
        })
    }

    /// Replace the first covariate by the constant 1.
    pub fn with_intercept(mut self) -> Self {
        self.intercept = true;
        self
    }

    pub fn beta_star(&self) -> &[T] {
        &self.beta_star
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    /// Draws `k` observations into memory.
    pub fn take_vec(&mut self, k: usize) -> Vec<Datum<T>> {
        let mut out = Vec::with_capacity(k);
        let mut datum = Datum::with_dimension(self.covariate_dimension());
        for _ in 0..k {
            self.fill(&mut datum);
            out.push(datum.clone());
        }
        out
    }

    fn fill(&mut self, datum: &mut Datum<T>) {
        if self.model == ModelKind::Mean {
            datum.x[0] = T::one();
            datum.y = self.beta_star[0] + T::lit(self.rng.sample::<f64, _>(StandardNormal));
            return;
        }
        self.design.sample_into(&mut self.rng, &mut self.z, &mut datum.x);
        if self.intercept {
            datum.x[0] = T::one();
        }
        let mu = dot(&datum.x, &self.beta_star);
        datum.y = match self.model {
            ModelKind::Linear => mu + T::lit(self.rng.sample::<f64, _>(StandardNormal)),
            ModelKind::Lad => mu + T::lit(sample_double_exponential(&mut self.rng)),
            ModelKind::Logistic => {
                let u: f64 = self.rng.random();
                if u < sigmoid(mu).as_f64() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ModelKind::Mean => unreachable!(),
        };
    }
}

impl<T: Scalar> DataSource<T> for SyntheticStream<T> {
    fn covariate_dimension(&self) -> usize {
        if self.model == ModelKind::Mean {
            1
        } else {
            self.design.dimension()
        }
    }

    fn next_into(&mut self, datum: &mut Datum<T>) -> Result<bool> {
        self.fill(datum);
        Ok(true)
    }
}
