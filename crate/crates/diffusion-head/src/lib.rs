//! Per-token diffusion loss and sampler.
//!
//! The token distribution of a continuous autoregressive model is realized
//! by a small MLP denoiser `ε̂(x_t | t, z)` trained with the denoising
//! objective `‖ε − ε̂‖²` and sampled with DDPM ancestral steps, conditioned
//! on the sequence model's per-position output `z`.

mod denoiser;
mod loss;
mod sampler;
mod schedule;

pub use denoiser::{denoiser_forward, denoiser_forward_nodes, DenoiserConfig, DenoiserParams};
pub use loss::{diffusion_loss, diffusion_loss_node, forward_noise, DiffusionDraw};
pub use sampler::{ancestral_sample, sample_token, sample_tokens_batch};
pub use schedule::{shift_timesteps, DiffusionSchedule, ScheduleKind};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DiffusionError>;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
}

impl DiffusionError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        DiffusionError::Contract(msg.into())
    }
}
