use serde::{Deserialize, Serialize};

use super::config::DEFAULT_IBS_SCALE;
use crate::batching::{ibs_boundaries_with_min, EbsTracker, IbsTracker};
use crate::covariance::{ebs_family, ibs_estimate, psd_project, CovEstimate, EstimatorKind};
use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{logistic_mle, Datum, LogisticLoss, VecSource};
use crate::regions::{classify_conservative, classify_plain, predict_prob_interval};
use crate::scalar::Scalar;
use crate::sgd::{run_asgd, LearningRateSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassificationConfig {
    pub eta0: f64,
    pub alpha: f64,
    pub c: f64,
    pub beta: Option<f64>,
    /// Leading training rows used only for the maximum-likelihood start.
    pub warm_start: usize,
    pub burn_in: u64,
    /// Significance of the interval whose lower end drives `ỹ`.
    pub p: f64,
    pub estimator: EstimatorKind,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            alpha: 0.51,
            c: 0.1,
            beta: None,
            warm_start: 10_000,
            burn_in: 5_000,
            p: 0.05,
            estimator: EstimatorKind::Lugsail,
        }
    }
}

/// ASGD fit with its covariance estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize + Scalar", deserialize = "T: Deserialize<'de> + Scalar"))]
pub struct FittedModel<T> {
    pub theta_hat: Vec<T>,
    /// Number of averaged iterates.
    pub n: u64,
    pub estimate: CovEstimate<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassRow {
    pub q: f64,
    pub plain_error: f64,
    pub conservative_error: f64,
    pub plain_positive: usize,
    pub conservative_positive: usize,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "T: Serialize + Scalar"))]
pub struct ClassificationResult<T> {
    pub model: FittedModel<T>,
    pub rows: Vec<ClassRow>,
}

fn check_binary<T: Scalar>(data: &[Datum<T>]) -> Result<()> {
    let ones = data.iter().filter(|z| z.y > T::lit(0.5)).count();
    if ones == 0 || ones == data.len() {
        return Err(Error::Degenerate("training responses contain a single class".into()));
    }
    Ok(())
}

/// Warm start on the first `warm_start` rows, then ASGD over the rest.
pub fn fit_logistic<T: Scalar>(train: &[Datum<T>], cfg: &ClassificationConfig) -> Result<FittedModel<T>> {
    check_binary(train)?;
    let Some(first) = train.first() else {
        return Err(Error::Degenerate("empty training set".into()));
    };
    let d = first.x.len();
    let warm = cfg.warm_start.min(train.len());
    let theta0 = if warm > 0 {
        logistic_mle(&train[..warm])?.theta
    } else {
        vec![T::zero(); d]
    };
    let rest = &train[warm..];
    let n = (rest.len() as u64).checked_sub(cfg.burn_in).filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "{} training rows leave nothing after warm start {} and burn-in {}",
            train.len(),
            warm,
            cfg.burn_in
        ))
    })?;
    let beta = cfg.beta.unwrap_or((1.0 + cfg.alpha) / 2.0);
    let schedule = LearningRateSchedule::new(T::lit(cfg.eta0), T::lit(cfg.alpha))?;
    let mut source = VecSource::new(rest.to_vec());
    let loss = LogisticLoss::new(d);
    if cfg.estimator == EstimatorKind::Ibs {
        let scale = ibs_boundaries_with_min(n, cfg.alpha, DEFAULT_IBS_SCALE, d + 1)?.scale;
        let mut ibs = IbsTracker::new(d, cfg.alpha, scale)?;
        let out = run_asgd(&loss, &mut source, &schedule, theta0, cfg.burn_in, n, &mut ibs)?;
        return Ok(FittedModel {
            theta_hat: out.theta_hat,
            n,
            estimate: ibs_estimate(&ibs.batches())?,
        });
    }
    let mut tracker = EbsTracker::<T>::doubling(d, cfg.c, beta)?;
    let out = run_asgd(&loss, &mut source, &schedule, theta0, cfg.burn_in, n, &mut tracker)?;
    let fam = ebs_family(&tracker.batch_means()?)?;
    let estimate = match cfg.estimator {
        EstimatorKind::Ebs => fam.ebs,
        EstimatorKind::Ebs2b => fam.ebs2b,
        _ => fam.lugsail,
    };
    Ok(FittedModel {
        theta_hat: out.theta_hat,
        n,
        estimate,
    })
}

/// Error rates of `ŷ` and `ỹ` on labelled data for each cutoff.
pub fn misclassification_table<T: Scalar>(
    test: &[Datum<T>],
    theta_hat: &[T],
    sigma: &Matrix<T>,
    n: u64,
    p: f64,
    cutoffs: &[f64],
) -> Result<Vec<ClassRow>> {
    if test.is_empty() {
        return Err(Error::Degenerate("empty test set".into()));
    }
    let z = normal_quantile(1.0 - p / 2.0)?;
    let preds = test
        .iter()
        .map(|row| predict_prob_interval(&row.x, theta_hat, sigma, n, p).map(|pi| (pi, row.y > T::lit(0.5))))
        .collect::<Result<Vec<_>>>()?;
    let m = test.len() as f64;
    Ok(cutoffs
        .iter()
        .map(|&q| {
            let (mut ep, mut ec, mut pp, mut pc) = (0usize, 0usize, 0usize, 0usize);
            for (pi, y) in &preds {
                let plain = classify_plain(pi.p_hat, q) == 1;
                let cons = classify_conservative(pi.p_hat, pi.se, q, z) == 1;
                ep += usize::from(plain != *y);
                ec += usize::from(cons != *y);
                pp += usize::from(plain);
                pc += usize::from(cons);
            }
            ClassRow {
                q,
                plain_error: ep as f64 / m,
                conservative_error: ec as f64 / m,
                plain_positive: pp,
                conservative_positive: pc,
            }
        })
        .collect())
}

/// Fits on `train`, then scores both classifiers on `test`.
pub fn classification_experiment<T: Scalar>(
    train: &[Datum<T>],
    test: &[Datum<T>],
    cfg: &ClassificationConfig,
    cutoffs: &[f64],
) -> Result<ClassificationResult<T>> {
    let model = fit_logistic(train, cfg)?;
    let usable = if model.estimate.indefinite {
        psd_project(&model.estimate)?
    } else {
        model.estimate.clone()
    };
    let rows = misclassification_table(test, &model.theta_hat, &usable.matrix, model.n, cfg.p, cutoffs)?;
    Ok(ClassificationResult { model, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_design, gen_stream, DesignKind, ModelKind};

    fn data(seed: u64, n: usize) -> Vec<Datum<f64>> {
        let des = gen_design(DesignKind::Identity, 3, 0.0).unwrap();
        gen_stream(ModelKind::Logistic, des, vec![1.0, -0.5, 0.25], seed).unwrap().take_vec(n)
    }

    fn small_cfg() -> ClassificationConfig {
        ClassificationConfig {
            warm_start: 1000,
            burn_in: 500,
            ..Default::default()
        }
    }

    #[test]
    fn zero_sigma_gives_identical_columns() {
        let test = data(2, 500);
        let rows = misclassification_table(&test, &[1.0, -0.5, 0.25], &Matrix::zeros(3, 3), 100, 0.05, &[0.2, 0.5, 0.8]).unwrap();
        for r in rows {
            assert_eq!(r.plain_error, r.conservative_error);
        }
    }

    #[test]
    fn zero_cutoff_predicts_all_ones() {
        let test = data(3, 400);
        let zeros = test.iter().filter(|z| z.y == 0.0).count() as f64 / 400.0;
        let rows = misclassification_table(&test, &[1.0, -0.5, 0.25], &Matrix::zeros(3, 3), 100, 0.05, &[0.0]).unwrap();
        assert_eq!(rows[0].plain_error, zeros);
        assert_eq!(rows[0].plain_positive, 400);
    }

    #[test]
    fn fit_and_score() {
        let train = data(4, 6000);
        let test = data(5, 2000);
        let res = classification_experiment(&train, &test, &small_cfg(), &[0.5]).unwrap();
        assert_eq!(res.model.n, 4500);
        assert!((res.model.theta_hat[0] - 1.0).abs() < 0.2, "{:?}", res.model.theta_hat);
        let r = res.rows[0];
        assert!(r.conservative_positive <= r.plain_positive);
        assert!(r.plain_error < 0.45);
    }

    #[test]
    fn single_class_rejected() {
        let mut train = data(6, 3000);
        train.iter_mut().for_each(|z| z.y = 1.0);
        assert!(matches!(fit_logistic(&train, &small_cfg()), Err(Error::Degenerate(_))));
    }
}
