use std::io::Write;

use serde::Serialize;

use crate::batching::BatchMeans;
use crate::dist::{normal_cdf, normal_quantile};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QqPoint {
    pub empirical: f64,
    pub theoretical: f64,
}

/// Pooled, standardized components of `sqrt(b)(θ̄_k − ref)` against normal
/// quantiles. `ref` is `theta_star` when given, else the batch-means center.
pub fn qq_data<T: Scalar>(bm: &BatchMeans<T>, theta_star: Option<&[T]>) -> Result<Vec<QqPoint>> {
    if bm.count() < 2 {
        return Err(Error::InsufficientBatches {
            needed: 2,
            found: bm.count(),
        });
    }
    let reference = theta_star.unwrap_or(bm.center());
    check_dim(bm.dimension(), reference.len())?;
    let sb = (bm.batch_size() as f64).sqrt();
    let mut v: Vec<f64> = bm
        .means()
        .iter()
        .flat_map(|m| m.iter().zip(reference).map(move |(x, r)| sb * (x.as_f64() - r.as_f64())))
        .collect();
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("batch means have zero spread".into()));
    }
    v.iter_mut().for_each(|x| *x /= sd);
    v.sort_by(f64::total_cmp);
    v.into_iter()
        .enumerate()
        .map(|(i, e)| {
            Ok(QqPoint {
                empirical: e,
                theoretical: normal_quantile((i as f64 + 0.5) / k)?,
            })
        })
        .collect()
}

/// Kolmogorov–Smirnov distance of the sorted empirical values from `N(0, 1)`.
pub fn ks_distance(points: &[QqPoint]) -> f64 {
    let k = points.len() as f64;
    points.iter().enumerate().fold(0.0, |m, (i, p)| {
        let f = normal_cdf(p.empirical);
        m.max((f - i as f64 / k).abs()).max(((i + 1) as f64 / k - f).abs())
    })
}

pub fn write_qq_csv<W: Write>(points: &[QqPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["empirical", "theoretical"])?;
    for p in points {
        out.write_record([format!("{:.10e}", p.empirical), format!("{:.10e}", p.theoretical)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn normal_components_pass_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, a) = (3, 400);
        let means: Vec<Vec<f64>> = (0..a)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let bm = BatchMeans::new(means, 1).unwrap();
        let pts = qq_data(&bm, Some(&[0.0; 3])).unwrap();
        assert_eq!(pts.len(), d * a);
        assert!(ks_distance(&pts) < 1.63 / ((d * a) as f64).sqrt());
        assert!(pts.windows(2).all(|w| w[0].empirical <= w[1].empirical));
    }

    #[test]
    fn constant_means_rejected() {
        let bm = BatchMeans::new(vec![vec![1.0, 2.0]; 5], 4).unwrap();
        assert!(matches!(qq_data(&bm, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn csv_rows() {
        let bm = BatchMeans::new(vec![vec![1.0], vec![2.0], vec![4.0]], 2).unwrap();
        let pts = qq_data(&bm, None).unwrap();
        let mut buf = Vec::new();
        write_qq_csv(&pts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
