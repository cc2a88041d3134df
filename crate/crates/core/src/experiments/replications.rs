use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, DEFAULT_IBS_SCALE};
use super::metrics::{mean_se, proportion, rel_frobenius, write_long_csv, MetricsRow};
use crate::batching::{ibs_boundaries_with_min, EbsTracker, IbsTracker};
use crate::covariance::{ebs2b_estimate, ebs_estimate, ibs_estimate, lugsail_estimate, psd_project, CovEstimate, EstimatorKind};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::models::{default_beta_star, gen_design, replication_rng, true_sigma, ModelKind, SyntheticStream};
use crate::mvn::MvnOptions;
use crate::regions::{
    bonferroni_region, ellipsoid_region, marginal_cis, simultaneous_region, simultaneous_z, volume_ratio,
    SimultaneousOptions,
};
use crate::scalar::Scalar;
use crate::sgd::{run_asgd, IterateObserver, IterateState, LearningRateSchedule};

/// Label of the row built from the true covariance.
pub const ORACLE_LABEL: &str = "TRUE";

/// Outcome of one estimator at one checkpoint of one replication.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RepCell {
    pub n: u64,
    pub estimator: String,
    /// Row-major estimate as computed (before any projection).
    pub sigma: Option<Vec<f64>>,
    pub rel_frobenius: Option<f64>,
    pub bias: Option<f64>,
    pub ellipsoid_covers: Option<bool>,
    pub uncorrected_covers: Option<bool>,
    pub bonferroni_covers: Option<bool>,
    pub rect_covers: Option<bool>,
    pub volume_ratio: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub indefinite: Option<bool>,
    pub absent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepResult {
    pub rep: usize,
    pub theta_hat: Vec<f64>,
    pub cells: Vec<RepCell>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
    #[serde(skip)]
    pub reps: Vec<RepResult>,
}

/// Quantities shared by all replications.
struct Context<T> {
    cfg: ExperimentConfig,
    d: usize,
    sigma_true: Option<Matrix<T>>,
    theta_star: Vec<T>,
    ibs_scale: f64,
    /// Simultaneous critical value of the true Σ per checkpoint.
    oracle_z: Vec<Option<f64>>,
}

fn mvn_seed(master: u64, rep: usize) -> u64 {
    master ^ (rep as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl<T: Scalar> Context<T> {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dimension();
        let sigma_true = match cfg.model {
            ModelKind::Linear | ModelKind::Lad => Some(true_sigma(cfg.design, d, cfg.rho)?),
            ModelKind::Mean => Some(Matrix::identity(1)),
            ModelKind::Logistic => None,
        };
        let theta_star = default_beta_star(d, cfg.beta_star_endpoints).into_iter().map(T::lit).collect();
        let first = cfg.checkpoints()[0];
        let ibs_scale = match cfg.ibs_scale {
            Some(s) => s,
            None => ibs_boundaries_with_min(first, cfg.alpha, DEFAULT_IBS_SCALE, d + 1)
                .map(|p| p.scale)
                .unwrap_or(DEFAULT_IBS_SCALE),
        };
        let mut oracle_z = vec![None; cfg.checkpoints().len()];
        if cfg.oracle && cfg.rectangles {
            if let Some(s) = &sigma_true {
                let opts = SimultaneousOptions {
                    mvn: MvnOptions {
                        seed: mvn_seed(cfg.seed, usize::MAX),
                        ..Default::default()
                    },
                    ..Default::default()
                };
                let z = simultaneous_z(s, cfg.p, &opts)?.z;
                oracle_z.iter_mut().for_each(|v| *v = Some(z));
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            d,
            sigma_true,
            theta_star,
            ibs_scale,
            oracle_z,
        })
    }

    fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cfg.estimators.iter().map(|k| k.to_string()).collect();
        if self.cfg.oracle && self.sigma_true.is_some() {
            out.push(ORACLE_LABEL.to_string());
        }
        out
    }

    fn regions(&self, cell: &mut RepCell, theta_hat: &[T], sigma: &Matrix<T>, n: u64, rep: usize, z: Option<f64>) {
        let p = self.cfg.p;
        let ell = match ellipsoid_region(theta_hat, sigma, n, p) {
            Ok(e) => e,
            Err(e) => {
                cell.absent = Some(format!("ellipsoid: {e}"));
                return;
            }
        };
        cell.ellipsoid_covers = ell.contains(&self.theta_star).ok();
        if !self.cfg.rectangles {
            return;
        }
        let star = &self.theta_star;
        cell.uncorrected_covers = marginal_cis(theta_hat, sigma, n, p).and_then(|r| r.contains(star)).ok();
        cell.bonferroni_covers = bonferroni_region(theta_hat, sigma, n, p).and_then(|r| r.contains(star)).ok();
        let rect = match z {
            Some(z) => marginal_cis(theta_hat, sigma, n, p).map(|mut r| {
                let scale = z / r.z;
                r.halfwidths.iter_mut().for_each(|h| *h *= scale);
                r.z = z;
                r
            }),
            None => {
                let opts = SimultaneousOptions {
                    mvn: MvnOptions {
                        seed: mvn_seed(self.cfg.seed, rep),
                        ..Default::default()
                    },
                    ..Default::default()
                };
                simultaneous_region(theta_hat, sigma, n, p, &opts)
            }
        };
        if let Ok(r) = rect {
            cell.rect_covers = r.contains(star).ok();
            cell.volume_ratio = volume_ratio(&r, &ell).ok();
        }
    }

    fn estimate_cell(&self, est: Result<CovEstimate<T>>, label: String, theta_hat: &[T], n: u64, rep: usize) -> RepCell {
        let mut cell = RepCell {
            n,
            estimator: label,
            ..Default::default()
        };
        let est = match est {
            Ok(e) => e,
            Err(e) => {
                cell.absent = Some(e.to_string());
                return cell;
            }
        };
        cell.sigma = Some(est.matrix.as_slice().iter().map(|v| v.as_f64()).collect());
        cell.min_eigenvalue = Some(est.min_eigenvalue.as_f64());
        cell.indefinite = Some(est.indefinite);
        if let Some(s) = &self.sigma_true {
            cell.rel_frobenius = rel_frobenius(&est.matrix, s).ok();
            let diff = est.matrix.trace() - s.trace();
            cell.bias = Some(diff.as_f64() / self.d as f64);
        }
        let usable = if self.cfg.psd_project && est.indefinite {
            match psd_project(&est) {
                Ok(p) => p,
                Err(e) => {
                    cell.absent = Some(e.to_string());
                    return cell;
                }
            }
        } else {
            est
        };
        self.regions(&mut cell, theta_hat, &usable.matrix, n, rep, None);
        cell
    }
}

struct CheckpointObserver<'a, T> {
    ctx: &'a Context<T>,
    rep: usize,
    checkpoints: Vec<u64>,
    next: usize,
    ebs: EbsTracker<T>,
    ibs: Option<IbsTracker<T>>,
    cells: Vec<RepCell>,
}

impl<T: Scalar> CheckpointObserver<'_, T> {
    fn evaluate(&mut self, state: &IterateState<T>) {
        let n = state.averaged();
        let theta_hat = &state.running_mean;
        let ctx = self.ctx;
        for kind in &ctx.cfg.estimators {
            let est = match kind {
                EstimatorKind::Ebs => self.ebs.batch_means().and_then(|bm| ebs_estimate(&bm)),
                EstimatorKind::Ebs2b => self.ebs.batch_means().and_then(|bm| ebs2b_estimate(&bm)),
                EstimatorKind::Lugsail => self.ebs.batch_means().and_then(|bm| lugsail_estimate(&bm)),
                EstimatorKind::Ibs => match &self.ibs {
                    Some(t) => ibs_estimate(&t.batches()),
                    None => unreachable!("IBS tracker exists when requested"),
                },
            };
            let cell = ctx.estimate_cell(est, kind.to_string(), theta_hat, n, self.rep);
            self.cells.push(cell);
        }
        if ctx.cfg.oracle {
            if let Some(s) = &ctx.sigma_true {
                let mut cell = RepCell {
                    n,
                    estimator: ORACLE_LABEL.to_string(),
                    rel_frobenius: Some(0.0),
                    bias: Some(0.0),
                    ..Default::default()
                };
                ctx.regions(&mut cell, theta_hat, s, n, self.rep, ctx.oracle_z[self.next]);
                self.cells.push(cell);
            }
        }
    }
}

impl<T: Scalar> IterateObserver<T> for CheckpointObserver<'_, T> {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()> {
        self.ebs.push(&state.theta)?;
        if let Some(t) = &mut self.ibs {
            t.push(&state.theta)?;
        }
        if self.checkpoints.get(self.next) == Some(&state.averaged()) {
            self.evaluate(state);
            self.next += 1;
        }
        Ok(())
    }
}

fn run_one<T: Scalar>(ctx: &Context<T>, rep: usize) -> Result<RepResult> {
    let cfg = &ctx.cfg;
    let d = ctx.d;
    let design = gen_design::<T>(cfg.design, if cfg.model == ModelKind::Mean { 1 } else { d }, cfg.rho)?;
    let mut stream = SyntheticStream::new(cfg.model, design, ctx.theta_star.clone(), replication_rng(cfg.seed, rep as u64))?;
    let oracle = cfg.model.oracle::<T>(d);
    let schedule = LearningRateSchedule::new(T::lit(cfg.eta0), T::lit(cfg.alpha))?;
    let theta0: Vec<T> = match &cfg.theta0 {
        Some(t) => t.iter().map(|&v| T::lit(v)).collect(),
        None => vec![T::zero(); d],
    };
    let ibs = if cfg.estimators.contains(&EstimatorKind::Ibs) {
        Some(IbsTracker::new(d, cfg.alpha, ctx.ibs_scale)?)
    } else {
        None
    };
    let mut obs = CheckpointObserver {
        ctx,
        rep,
        checkpoints: cfg.checkpoints(),
        next: 0,
        ebs: EbsTracker::doubling(d, cfg.c, cfg.beta())?,
        ibs,
        cells: Vec::new(),
    };
    let out = run_asgd(&oracle, &mut stream, &schedule, theta0, cfg.burn_in, cfg.n_max, &mut obs)?;
    Ok(RepResult {
        rep,
        theta_hat: out.theta_hat.iter().map(|v| v.as_f64()).collect(),
        cells: obs.cells,
    })
}

fn aggregate(cells: &[&RepCell]) -> MetricsRow {
    let first = cells[0];
    let present: Vec<&&RepCell> = cells.iter().filter(|c| c.sigma.is_some() || c.estimator == ORACLE_LABEL).collect();
    let absent = cells.len() - present.len();
    let pick = |f: &dyn Fn(&RepCell) -> Option<f64>| mean_se(present.iter().filter_map(|c| f(c)));
    let prop = |f: &dyn Fn(&RepCell) -> Option<bool>| {
        let v: Vec<bool> = present.iter().filter_map(|c| f(c)).collect();
        proportion(v)
    };
    let rf = pick(&|c| c.rel_frobenius);
    let bias = pick(&|c| c.bias);
    let ell = prop(&|c| c.ellipsoid_covers);
    let rect = prop(&|c| c.rect_covers);
    let vol = pick(&|c| c.volume_ratio);
    let indef = prop(&|c| c.indefinite);
    MetricsRow {
        n: first.n,
        estimator: first.estimator.clone(),
        reps: present.len(),
        absent,
        absent_reason: cells.iter().find_map(|c| c.absent.clone()),
        rel_frobenius: rf.map(|v| v.0),
        rel_frobenius_se: rf.map(|v| v.1),
        bias: bias.map(|v| v.0),
        bias_se: bias.map(|v| v.1),
        ellipsoid_coverage: ell.map(|v| v.0),
        ellipsoid_coverage_se: ell.map(|v| v.1),
        uncorrected_coverage: prop(&|c| c.uncorrected_covers).map(|v| v.0),
        bonferroni_coverage: prop(&|c| c.bonferroni_covers).map(|v| v.0),
        rect_coverage: rect.map(|v| v.0),
        rect_coverage_se: rect.map(|v| v.1),
        volume_ratio: vol.map(|v| v.0),
        volume_ratio_se: vol.map(|v| v.1),
        min_eigenvalue: pick(&|c| c.min_eigenvalue).map(|v| v.0),
        indefinite_fraction: indef.map(|v| v.0),
    }
}

/// Runs every replication and aggregates per `(checkpoint, estimator)`.
///
/// Replication `r` draws from its own ChaCha stream, so results do not depend
/// on scheduling; `cfg.parallel` only changes wall time.
pub fn run_replications<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunResult> {
    let ctx = Context::<T>::new(cfg)?;
    let reps: Vec<RepResult> = if cfg.parallel {
        (0..cfg.replications).into_par_iter().map(|r| run_one(&ctx, r)).collect::<Result<_>>()?
    } else {
        (0..cfg.replications).map(|r| run_one(&ctx, r)).collect::<Result<_>>()?
    };
    let per_rep = ctx.labels().len() * cfg.checkpoints().len();
    let rows = (0..per_rep)
        .map(|j| {
            let cells: Vec<&RepCell> = reps.iter().map(|r| &r.cells[j]).collect();
            aggregate(&cells)
        })
        .collect();
    Ok(RunResult {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        rows,
        reps,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    metrics_file: &'a str,
    rows_file: &'a str,
    rows: usize,
}

/// Writes `metrics.csv` (long form), `rows.json` and `manifest.json` into `dir`.
pub fn write_run(result: &RunResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_long_csv(&result.rows, fs::File::create(dir.join("metrics.csv"))?)?;
    fs::write(dir.join("rows.json"), serde_json::to_string_pretty(&result.rows)?)?;
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &result.config,
        config_hash: &result.config_hash,
        metrics_file: "metrics.csv",
        rows_file: "rows.json",
        rows: result.rows.len(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelKind::Mean,
            d: 1,
            eta0: 1.0,
            burn_in: 0,
            n_max: 1000,
            replications: 2,
            seed: 5,
            estimators: vec![EstimatorKind::Ebs, EstimatorKind::Lugsail],
            oracle: false,
            ..Default::default()
        }
    }

    #[test]
    fn mean_model_smoke() {
        let r = run_replications::<f64>(&smoke()).unwrap();
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert_eq!(row.reps, 2);
            assert!(row.rel_frobenius.unwrap().is_finite());
            let cov = row.ellipsoid_coverage.unwrap();
            assert!((0.0..=1.0).contains(&cov));
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let mut cfg = ExperimentConfig {
            model: ModelKind::Linear,
            d: 3,
            n_max: 3000,
            checkpoints: vec![1000, 3000],
            replications: 6,
            burn_in: 100,
            ..Default::default()
        };
        let a = run_replications::<f64>(&cfg).unwrap();
        cfg.parallel = false;
        let b = run_replications::<f64>(&cfg).unwrap();
        assert_eq!(a.reps, b.reps);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 2 * 4);
    }

    #[test]
    fn insufficient_batches_marked_absent() {
        let cfg = ExperimentConfig {
            n_max: 3,
            burn_in: 0,
            replications: 2,
            d: 2,
            estimators: vec![EstimatorKind::Lugsail],
            oracle: false,
            ..Default::default()
        };
        let r = run_replications::<f64>(&cfg).unwrap();
        assert_eq!(r.rows[0].reps, 0);
        assert_eq!(r.rows[0].absent, 2);
        assert!(r.rows[0].absent_reason.as_deref().unwrap().contains("batches"));
    }

    #[test]
    fn single_precision_runs() {
        let r = run_replications::<f32>(&smoke()).unwrap();
        assert!(r.rows[0].rel_frobenius.unwrap().is_finite());
    }

    #[test]
    fn writes_deterministic_files() {
        let r = run_replications::<f64>(&smoke()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_run(&r, a.path()).unwrap();
        write_run(&run_replications::<f64>(&smoke()).unwrap(), b.path()).unwrap();
        for f in ["metrics.csv", "rows.json", "manifest.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }
}
