//! Versioned JSON persistence of a fitted classifier, plus scoring of new
//! data against a stored artifact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::density::gaussian_log_density;
use crate::eigen::EigenDecomposition;
use crate::error::{RaeddaError, Result};
use crate::inductive::InductiveFit;
use crate::model::ModelName;
use crate::selection::Approach;
use crate::transductive::{FitConfig, FitResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Serialized `Σ = λ D A Dᵀ` factors of one component.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CovarianceTriple {
    pub lambda: f64,
    /// diagonal of A, non-increasing, product 1
    pub shape: Vec<f64>,
    /// D in row-major order, p×p
    pub orientation: Vec<f64>,
}

impl CovarianceTriple {
    fn from_decomp(d: &EigenDecomposition) -> Self {
        CovarianceTriple {
            lambda: d.lambda,
            shape: d.shape.iter().copied().collect(),
            orientation: d.orientation.transpose().iter().copied().collect(),
        }
    }

    fn to_decomp(&self, p: usize) -> Result<EigenDecomposition> {
        if self.shape.len() != p || self.orientation.len() != p * p {
            return Err(RaeddaError::ShapeError(
                "covariance triple dimensions inconsistent with p".into(),
            ));
        }
        Ok(EigenDecomposition {
            lambda: self.lambda,
            shape: DVector::from_vec(self.shape.clone()),
            orientation: DMatrix::from_row_slice(p, p, &self.orientation),
        })
    }
}

/// Everything needed to classify new rows without the training data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub approach: Approach,
    pub model: ModelName,
    /// learning-phase model when the two phases differ
    pub learning_model: Option<ModelName>,
    pub g: usize,
    pub e: usize,
    pub p: usize,
    pub class_names: Vec<String>,
    pub tau: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<CovarianceTriple>,
    pub alpha_l: f64,
    pub alpha_u: f64,
    pub c: f64,
    pub c_tilde: Option<f64>,
    /// sorted own-class training log-densities at the final parameters;
    /// entry `⌊len·α_l⌋` is the smallest kept value and acts as the
    /// outlier threshold when scoring new rows
    pub density_quantiles: Vec<f64>,
    pub seed: u64,
    pub loglik_trace: Vec<f64>,
    pub loglik: f64,
    pub rbic: f64,
}

/// One scored row: MAP class, its display name, posterior, outlier flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    pub max_posterior: f64,
    pub outlier: bool,
}

/// Display name of a class index: stored names for known classes,
/// `HIDDEN_k` for discovered ones.
pub fn class_display_name(index: usize, g: usize, class_names: &[String]) -> String {
    if index < g {
        class_names[index].clone()
    } else {
        format!("HIDDEN_{}", index - g + 1)
    }
}

fn density_ladder(
    tau_mu_sigma: (&[f64], &[DVector<f64>], &[EigenDecomposition]),
    labeled: &LabeledDataset,
) -> Vec<f64> {
    let (_, mu, sigma) = tau_mu_sigma;
    let mut out: Vec<f64> = (0..labeled.n())
        .map(|i| {
            let g = labeled.labels[i];
            gaussian_log_density(&labeled.row(i), &mu[g], &sigma[g])
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

impl ModelArtifact {
    pub fn from_transductive(
        fit: &FitResult,
        labeled: &LabeledDataset,
        config: &FitConfig,
    ) -> Self {
        let params = &fit.params;
        ModelArtifact {
            schema_version: SCHEMA_VERSION,
            approach: Approach::Transductive,
            model: params.model,
            learning_model: None,
            g: params.g,
            e: params.e(),
            p: params.p(),
            class_names: labeled.class_names.clone(),
            tau: params.tau.clone(),
            mu: params.mu.iter().map(|m| m.iter().copied().collect()).collect(),
            sigma: params.sigma.iter().map(CovarianceTriple::from_decomp).collect(),
            alpha_l: config.alpha_l,
            alpha_u: config.alpha_u,
            c: fit.c,
            c_tilde: None,
            density_quantiles: density_ladder(
                (&params.tau, &params.mu, &params.sigma),
                labeled,
            ),
            seed: config.seed,
            loglik_trace: fit.loglik_trace.clone(),
            loglik: fit.loglik,
            rbic: fit.rbic,
        }
    }

    pub fn from_inductive(
        ind: &InductiveFit,
        labeled: &LabeledDataset,
        config: &FitConfig,
    ) -> Self {
        let params = &ind.fit.params;
        ModelArtifact {
            schema_version: SCHEMA_VERSION,
            approach: Approach::InductiveDiscovery,
            model: params.model,
            learning_model: Some(ind.learned.model),
            g: params.g,
            e: params.e(),
            p: params.p(),
            class_names: labeled.class_names.clone(),
            tau: params.tau.clone(),
            mu: params.mu.iter().map(|m| m.iter().copied().collect()).collect(),
            sigma: params.sigma.iter().map(CovarianceTriple::from_decomp).collect(),
            alpha_l: config.alpha_l,
            alpha_u: config.alpha_u,
            c: ind.fit.c,
            c_tilde: Some(ind.learned.c_tilde),
            density_quantiles: ind.learned.density_quantiles.clone(),
            seed: config.seed,
            loglik_trace: ind.fit.loglik_trace.clone(),
            loglik: ind.fit.loglik,
            rbic: ind.fit.rbic,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if version != SCHEMA_VERSION {
            return Err(RaeddaError::SchemaVersion(version));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn decomps(&self) -> Result<Vec<EigenDecomposition>> {
        self.sigma.iter().map(|t| t.to_decomp(self.p)).collect()
    }

    /// Smallest own-class training log-density that survived trimming.
    pub fn outlier_threshold(&self) -> f64 {
        let drop = (self.density_quantiles.len() as f64 * self.alpha_l).floor() as usize;
        self.density_quantiles
            .get(drop)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// MAP-classifies rows of `y`; a row is flagged as an outlier when its
    /// assigned-class log-density falls below the stored trimming cutoff.
    pub fn predict(&self, y: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        if y.ncols() != self.p && y.nrows() > 0 {
            return Err(RaeddaError::ShapeError(format!(
                "artifact expects {} features, data has {}",
                self.p,
                y.ncols()
            )));
        }
        let sigma = self.decomps()?;
        let mu: Vec<DVector<f64>> = self
            .mu
            .iter()
            .map(|m| DVector::from_vec(m.clone()))
            .collect();
        let threshold = self.outlier_threshold();
        let mut out = Vec::with_capacity(y.nrows());
        for i in 0..y.nrows() {
            let x = DVector::from_iterator(self.p, y.row(i).iter().copied());
            let logs: Vec<f64> = (0..self.e)
                .map(|k| self.tau[k].ln() + gaussian_log_density(&x, &mu[k], &sigma[k]))
                .collect();
            let total = crate::density::log_sum_exp(&logs);
            let best = logs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            let density = gaussian_log_density(&x, &mu[best], &sigma[best]);
            out.push(Prediction {
                class_index: best,
                class_name: class_display_name(best, self.g, &self.class_names),
                max_posterior: (logs[best] - total).exp(),
                outlier: density < threshold,
            });
        }
        Ok(out)
    }
}
