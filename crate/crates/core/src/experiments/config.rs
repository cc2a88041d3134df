use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::EstimatorKind;
use crate::error::{Error, Result};
use crate::models::{DesignKind, ModelKind};

/// Default IBS first-batch size.
pub const DEFAULT_IBS_SCALE: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub design: DesignKind,
    pub d: usize,
    pub rho: f64,
    pub eta0: f64,
    pub alpha: f64,
    /// `None` means `(1+α)/2`.
    pub beta: Option<f64>,
    pub c: f64,
    pub burn_in: u64,
    pub n_max: u64,
    /// Empty means `[n_max]`.
    pub checkpoints: Vec<u64>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Significance level of every region.
    pub p: f64,
    /// `None` starts at [`DEFAULT_IBS_SCALE`] and halves until the first
    /// checkpoint has `d + 1` batches.
    pub ibs_scale: Option<f64>,
    pub beta_star_endpoints: bool,
    /// Starting point; zero when absent.
    pub theta0: Option<Vec<f64>>,
    /// Build the three rectangles (the simultaneous one costs a QMC bisection).
    pub rectangles: bool,
    /// Add a row for regions built from the true Σ, when it is known.
    pub oracle: bool,
    /// Project lugsail onto the PSD cone before building regions.
    pub psd_project: bool,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Linear,
            design: DesignKind::Identity,
            d: 5,
            rho: 0.5,
            eta0: 0.5,
            alpha: 0.51,
            beta: None,
            c: 0.1,
            burn_in: 1000,
            n_max: 100_000,
            checkpoints: Vec::new(),
            replications: 100,
            seed: 0,
            estimators: vec![EstimatorKind::Ebs, EstimatorKind::Lugsail, EstimatorKind::Ibs],
            p: 0.05,
            ibs_scale: None,
            beta_star_endpoints: false,
            theta0: None,
            rectangles: true,
            oracle: true,
            psd_project: true,
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or((1.0 + self.alpha) / 2.0)
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        if self.checkpoints.is_empty() {
            vec![self.n_max]
        } else {
            self.checkpoints.clone()
        }
    }

    /// Dimension of θ (always 1 for the mean model).
    pub fn dimension(&self) -> usize {
        if self.model == ModelKind::Mean {
            1
        } else {
            self.d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0.5, 1), got {}", self.alpha));
        }
        let beta = self.beta();
        if !(beta > self.alpha && beta < 1.0) {
            return bad(format!("beta must lie in (alpha, 1), got {beta}"));
        }
        if !(self.eta0 > 0.0) || !(self.c > 0.0) {
            return bad("eta0 and c must be positive".into());
        }
        if self.d == 0 || (self.model == ModelKind::Mean && self.d != 1) {
            return bad(format!("invalid dimension {} for model {:?}", self.d, self.model));
        }
        if self.design != DesignKind::Identity && !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if self.replications == 0 || self.n_max == 0 {
            return bad("replications and n_max must be positive".into());
        }
        let cps = self.checkpoints();
        if cps[0] == 0 || cps.windows(2).any(|w| w[0] >= w[1]) || *cps.last().unwrap() > self.n_max {
            return bad("checkpoints must be positive, strictly increasing and at most n_max".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        if let Some(s) = self.ibs_scale {
            if !(s > 0.0) {
                return bad("ibs_scale must be positive".into());
            }
        }
        if let Some(t) = &self.theta0 {
            if t.len() != self.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: self.dimension(),
                    found: t.len(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert!((c.beta() - 0.755).abs() < 1e-15);
        assert_eq!(c.checkpoints(), vec![100_000]);
    }

    #[test]
    fn toml_roundtrip_and_errors() {
        let c = ExperimentConfig::from_toml_str(
            "model = \"lad\"\ndesign = \"toeplitz\"\nd = 3\nn_max = 1000\ncheckpoints = [100, 1000]\nestimators = [\"EBS\", \"LUGSAIL\"]\n",
        )
        .unwrap();
        assert_eq!(c.model, ModelKind::Lad);
        assert_eq!(c.checkpoints(), vec![100, 1000]);
        assert!(ExperimentConfig::from_toml_str("alpha = 0.4").is_err());
        assert!(ExperimentConfig::from_toml_str("beta = 0.5").is_err());
        assert!(ExperimentConfig::from_toml_str("n_max = 10\ncheckpoints = [5, 20]").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("model = \"mean\"").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
