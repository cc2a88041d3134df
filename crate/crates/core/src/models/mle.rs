use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::models::{Datum, LogisticLoss, Loss};
use crate::scalar::Scalar;

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct MleFit<T> {
    pub theta: Vec<T>,
    pub iterations: usize,
    /// Max-norm of the mean score at `theta`.
    pub grad_norm: f64,
    pub converged: bool,
}

fn mean_loss(data: &[Datum<f64>], theta: &[f64]) -> f64 {
    let l = LogisticLoss::new(theta.len());
    data.iter().map(|z| l.loss(theta, z)).sum::<f64>() / data.len() as f64
}

/// Logistic maximum likelihood by Newton's method with step halving.
pub fn logistic_mle<T: Scalar>(data: &[Datum<T>]) -> Result<MleFit<T>> {
    let Some(first) = data.first() else {
        return Err(Error::Degenerate("no observations for the warm start".into()));
    };
    let d = first.x.len();
    let ones = data.iter().filter(|z| z.y > T::lit(0.5)).count();
    if ones == 0 || ones == data.len() {
        return Err(Error::Degenerate("warm-start data contain a single class".into()));
    }
    let data: Vec<Datum<f64>> = data
        .iter()
        .map(|z| Datum {
            x: z.x.iter().map(|v| v.as_f64()).collect(),
            y: z.y.as_f64(),
        })
        .collect();
    let n = data.len() as f64;
    let mut theta = vec![0.0; d];
    let mut f = mean_loss(&data, &theta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < MAX_ITER {
        let mut g = vec![0.0; d];
        let mut h = Matrix::zeros(d, d);
        for z in &data {
            let p = super::sigmoid(dot(&z.x, &theta));
            for (gi, &xi) in g.iter_mut().zip(&z.x) {
                *gi += (p - z.y) * xi / n;
            }
            h.rank1_update_upper(p * (1.0 - p) / n, &z.x);
        }
        h.mirror_upper();
        grad_norm = g.iter().fold(0.0, |m, v| m.max(v.abs()));
        if grad_norm <= GRAD_TOL {
            break;
        }
        iterations += 1;
        let step = match h.solve_spd(&g) {
            Ok(s) => s,
            // separable or rank-deficient: fall back to a gradient step
            Err(_) => g.clone(),
        };
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let fc = mean_loss(&data, &cand);
            if fc <= f || t < 1e-10 {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(MleFit {
        theta: theta.into_iter().map(T::lit).collect(),
        iterations,
        grad_norm,
        converged: grad_norm <= GRAD_TOL,
    })
}
