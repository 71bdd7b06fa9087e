//! On-disk form of a fitted model.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Points;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::likelihood::LikelihoodScale;
use crate::model::FittedModel;
use crate::vi::{FitReport, VariationalState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub final_elbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    /// Training objects, one row each.
    pub features: Vec<Vec<f64>>,
    /// Row of the fitting dataset each training object came from.
    pub train_rows: Vec<usize>,
    pub latent_dim: usize,
    /// One vector when shared, else one per latent dimension.
    pub lengthscales: Vec<Vec<f64>>,
    pub jitter: Vec<f64>,
    pub sigma: f64,
    pub nu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub fit: FitMetadata,
}

impl ModelFile {
    pub fn from_model(model: &FittedModel, report: &FitReport) -> Self {
        let st = model.state();
        Self {
            schema_version: SCHEMA_VERSION,
            features: model.points().to_rows(),
            train_rows: model.train_rows().to_vec(),
            latent_dim: model.latent_dim(),
            lengthscales: st.kernels.iter().map(|k| k.lengthscales.clone()).collect(),
            jitter: st.kernels.iter().map(|k| k.jitter).collect(),
            sigma: st.sigma.get(),
            nu: st.nu.iter().map(|v| v.iter().copied().collect()).collect(),
            lambda: st.lambda.iter().map(|v| v.iter().copied().collect()).collect(),
            fit: FitMetadata {
                seed: report.seed,
                iterations: report.iterations,
                final_elbo: report.final_elbo,
            },
        }
    }

    pub fn into_model(self) -> Result<FittedModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.nu.len() != self.latent_dim || self.lambda.len() != self.latent_dim {
            return Err(Error::InvalidArgument("ν/λ count differs from latent_dim".into()));
        }
        if self.jitter.len() != self.lengthscales.len() {
            return Err(Error::InvalidArgument("one jitter per lengthscale vector is required".into()));
        }
        let kernels = self
            .lengthscales
            .into_iter()
            .zip(self.jitter)
            .map(|(l, j)| KernelParams::new(l, j))
            .collect::<Result<Vec<_>>>()?;
        let state = VariationalState::new(
            self.nu.into_iter().map(DVector::from_vec).collect(),
            self.lambda.into_iter().map(DVector::from_vec).collect(),
            kernels,
            LikelihoodScale::new(self.sigma)?,
        )?;
        FittedModel::new(Points::from_rows(&self.features)?, self.train_rows, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
