use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `‖Σ̂ − Σ‖_F / ‖Σ‖_F`.
pub fn rel_frobenius<T: Scalar>(sigma_hat: &Matrix<T>, sigma_true: &Matrix<T>) -> Result<f64> {
    check_dim(sigma_true.rows(), sigma_hat.rows())?;
    check_dim(sigma_true.cols(), sigma_hat.cols())?;
    let den = sigma_true.frobenius_norm().as_f64();
    if den == 0.0 {
        return Err(Error::InvalidParameter("true covariance has zero norm".into()));
    }
    Ok(sigma_hat.sub(sigma_true)?.frobenius_norm().as_f64() / den)
}

/// Mean and standard error `sd/sqrt(k)` of the finite values.
pub fn mean_se(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    let k = v.len();
    if k == 0 {
        return None;
    }
    let m = v.iter().sum::<f64>() / k as f64;
    let se = if k > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64 / k as f64).sqrt()
    } else {
        f64::NAN
    };
    Some((m, se, k))
}

/// Proportion and its binomial standard error `sqrt(p̂(1−p̂)/R)`.
pub fn proportion(hits: impl IntoIterator<Item = bool>) -> Option<(f64, f64, usize)> {
    let (mut k, mut r) = (0usize, 0usize);
    for h in hits {
        r += 1;
        k += usize::from(h);
    }
    if r == 0 {
        return None;
    }
    let p = k as f64 / r as f64;
    Some((p, (p * (1.0 - p) / r as f64).sqrt(), r))
}

/// Aggregate over replications for one `(n, estimator)` cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n: u64,
    pub estimator: String,
    /// Replications with a usable estimate.
    pub reps: usize,
    /// Replications where the estimate was unavailable.
    pub absent: usize,
    pub absent_reason: Option<String>,
    pub rel_frobenius: Option<f64>,
    pub rel_frobenius_se: Option<f64>,
    /// Mean over reps of `tr(Σ̂ − Σ)/d`.
    pub bias: Option<f64>,
    pub bias_se: Option<f64>,
    pub ellipsoid_coverage: Option<f64>,
    pub ellipsoid_coverage_se: Option<f64>,
    pub uncorrected_coverage: Option<f64>,
    pub bonferroni_coverage: Option<f64>,
    pub rect_coverage: Option<f64>,
    pub rect_coverage_se: Option<f64>,
    pub volume_ratio: Option<f64>,
    pub volume_ratio_se: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub indefinite_fraction: Option<f64>,
}

impl MetricsRow {
    fn metrics(&self) -> Vec<(&'static str, Option<f64>, Option<f64>)> {
        vec![
            ("rel_frobenius", self.rel_frobenius, self.rel_frobenius_se),
            ("bias", self.bias, self.bias_se),
            ("ellipsoid_coverage", self.ellipsoid_coverage, self.ellipsoid_coverage_se),
            ("uncorrected_coverage", self.uncorrected_coverage, None),
            ("bonferroni_coverage", self.bonferroni_coverage, None),
            ("rect_coverage", self.rect_coverage, self.rect_coverage_se),
            ("volume_ratio", self.volume_ratio, self.volume_ratio_se),
            ("min_eigenvalue", self.min_eigenvalue, None),
            ("indefinite_fraction", self.indefinite_fraction, None),
        ]
    }
}

/// Column names of the long-form metrics file.
pub const LONG_CSV_HEADER: [&str; 7] = ["n", "estimator", "metric", "value", "se", "reps", "absent"];

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.10e}"),
        _ => String::new(),
    }
}

/// One line per `(n, estimator, metric)`; missing values are empty cells.
pub fn write_long_csv<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LONG_CSV_HEADER)?;
    for r in rows {
        for (name, v, se) in r.metrics() {
            if v.is_none() {
                continue;
            }
            out.write_record([
                r.n.to_string(),
                r.estimator.clone(),
                name.to_string(),
                fmt(v),
                fmt(se),
                r.reps.to_string(),
                r.absent.to_string(),
            ])?;
        }
        if r.reps == 0 {
            out.write_record([
                r.n.to_string(),
                r.estimator.clone(),
                "absent".into(),
                String::new(),
                String::new(),
                "0".into(),
                r.absent.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_frobenius_examples() {
        let i3 = Matrix::<f64>::identity(3);
        assert_eq!(rel_frobenius(&i3, &i3).unwrap(), 0.0);
        assert_eq!(rel_frobenius(&i3.scaled(2.0), &i3).unwrap(), 1.0);
        let v = rel_frobenius(&Matrix::from_diag(&[1.0, 2.0]), &Matrix::from_diag(&[2.0, 2.0])).unwrap();
        assert!((v - 1.0 / 8f64.sqrt()).abs() < 1e-15);
        assert!(rel_frobenius(&i3, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn aggregates() {
        let (m, se, k) = mean_se([1.0, 2.0, 3.0, f64::NAN]).unwrap();
        assert_eq!((m, k), (2.0, 3));
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let (p, se, r) = proportion([true, false, true, true]).unwrap();
        assert_eq!((p, r), (0.75, 4));
        assert!((se - (0.75f64 * 0.25 / 4.0).sqrt()).abs() < 1e-15);
        assert!(mean_se([]).is_none());
    }

    #[test]
    fn long_csv_layout() {
        let row = MetricsRow {
            n: 10,
            estimator: "EBS".into(),
            reps: 2,
            rel_frobenius: Some(0.5),
            rel_frobenius_se: Some(0.1),
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_long_csv(&[row], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "n,estimator,metric,value,se,reps,absent\n10,EBS,rel_frobenius,5.0000000000e-1,1.0000000000e-1,2,0\n"
        );
    }
}
