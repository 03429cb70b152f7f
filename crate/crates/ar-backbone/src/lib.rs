//! Autoregressive backbone over continuous latent tokens.
//!
//! Two regression modes share one transformer: causal raster-scan
//! prediction and masked parallel prediction. The backbone's per-position
//! outputs are the conditions consumed by the diffusion head; training
//! optionally normalizes tokens and injects Gaussian noise into the
//! conditioning inputs only, with clean (post-normalization) targets.

mod backbone;
mod generate;
mod train;

pub use backbone::{
    causal_forward, masked_forward, teacher_forced_conditions, ArMode, BackboneConfig,
    BackboneParams, ConditionBatch,
};
pub use generate::{generate, generate_causal, generate_masked, unmask_plan, GenerationConfig};
pub use train::{pipeline_inputs, train_step, TrainContext};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ArError>;

#[derive(Debug, Error)]
pub enum ArError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: loss {0}")]
    Divergence(f64),

    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),

    #[error(transparent)]
    Stats(#[from] token_stats::StatsError),

    #[error(transparent)]
    Diffusion(#[from] diffusion_head::DiffusionError),
}

impl ArError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        ArError::Contract(msg.into())
    }
}
