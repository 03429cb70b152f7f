//! Desk-scale generative evaluation metrics.
//!
//! Fréchet distance between Gaussian moment fits (the gFID proxy), k-NN
//! precision/recall, PSNR/SSIM for reconstructions, and the exposure-drift
//! curve quantifying how free-running generation departs from the data
//! distribution position by position.

mod drift;
mod frechet;
mod imgmetrics;
mod knn;

pub use drift::{exposure_drift, DriftCurve, DriftOptions};
pub use frechet::{
    frechet_distance, frechet_distance_diagonal, frechet_from_moments, FeatureRows,
    GaussianMoments,
};
pub use imgmetrics::{psnr, ssim};
pub use knn::precision_recall;

use thiserror::Error;

/// One named metric value with its run identity, the unit of the long-form
/// metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub profile: String,
    pub mode: String,
    pub alpha: f32,
    pub norm: bool,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Ar(#[from] ar_backbone::ArError),

    #[error(transparent)]
    Diffusion(#[from] diffusion_head::DiffusionError),
}

impl EvalError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        EvalError::Contract(msg.into())
    }
}
