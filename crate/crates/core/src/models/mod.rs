//! Loss oracles, synthetic data generators and CSV ingestion.

mod csv_data;
mod design;
mod loss;
mod mle;
mod stream;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;

pub use csv_data::{csv_split_reader, csv_stream, CsvSplit, CsvSpec};
pub use design::{gen_design, true_sigma, CovariateDesign, DesignKind};
pub use loss::{LadLoss, LinearLoss, LogisticLoss, Loss, MeanLoss, sigmoid};
pub use mle::{logistic_mle, MleFit};
pub use stream::{default_beta_star, gen_stream, replication_rng, sample_double_exponential, SyntheticStream};

/// One observation `ζ = (x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Datum<T> {
    pub x: Vec<T>,
    pub y: T,
}

impl<T: Scalar> Datum<T> {
    pub fn with_dimension(d: usize) -> Self {
        Self {
            x: vec![T::zero(); d],
            y: T::zero(),
        }
    }
}

/// Sequential source of observations.
pub trait DataSource<T> {
    /// Length of `Datum::x` produced by this source.
    fn covariate_dimension(&self) -> usize;

    /// Overwrites `datum` with the next observation; `Ok(false)` at the end.
    fn next_into(&mut self, datum: &mut Datum<T>) -> Result<bool>;
}

impl<T, S: DataSource<T> + ?Sized> DataSource<T> for &mut S {
    fn covariate_dimension(&self) -> usize {
        (**self).covariate_dimension()
    }

    fn next_into(&mut self, datum: &mut Datum<T>) -> Result<bool> {
        (**self).next_into(datum)
    }
}

impl<T, S: DataSource<T> + ?Sized> DataSource<T> for Box<S> {
    fn covariate_dimension(&self) -> usize {
        (**self).covariate_dimension()
    }

    fn next_into(&mut self, datum: &mut Datum<T>) -> Result<bool> {
        (**self).next_into(datum)
    }
}

/// In-memory finite source.
#[derive(Clone, Debug)]
pub struct VecSource<T> {
    data: Vec<Datum<T>>,
    pos: usize,
    d: usize,
}

impl<T: Scalar> VecSource<T> {
    pub fn new(data: Vec<Datum<T>>) -> Self {
        let d = data.first().map_or(0, |x| x.x.len());
        Self { data, pos: 0, d }
    }

    /// Mean-model data: `x = [1]`, `y` as given.
    pub fn scalar_responses(ys: &[T]) -> Self {
        Self::new(ys.iter().map(|&y| Datum { x: vec![T::one()], y }).collect())
    }

    pub fn data(&self) -> &[Datum<T>] {
        &self.data
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    /// Splits off the next `k` observations (e.g. a warm-start prefix).
    pub fn take_prefix(&mut self, k: usize) -> Vec<Datum<T>> {
        let end = (self.pos + k).min(self.data.len());
        let out = self.data[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

impl<T: Scalar> DataSource<T> for VecSource<T> {
    fn covariate_dimension(&self) -> usize {
        self.d
    }

    fn next_into(&mut self, datum: &mut Datum<T>) -> Result<bool> {
        match self.data.get(self.pos) {
            Some(next) => {
                datum.x.clone_from(&next.x);
                datum.y = next.y;
                self.pos += 1;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Lad,
    Logistic,
    Mean,
}

impl ModelKind {
    pub fn oracle<T: Scalar>(self, d: usize) -> Box<dyn Loss<T>> {
        match self {
            Self::Linear => Box::new(LinearLoss::new(d)),
            Self::Lad => Box::new(LadLoss::new(d)),
            Self::Logistic => Box::new(LogisticLoss::new(d)),
            Self::Mean => Box::new(MeanLoss),
        }
    }
}
