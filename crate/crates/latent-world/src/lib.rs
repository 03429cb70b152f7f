//! Synthetic latent worlds.
//!
//! A stand-in for a real dataset plus pretrained encoder: procedural
//! class-conditional images, a frozen random-projection encoder whose token
//! statistics are calibrated to named profiles, and a small trainable ViT
//! decoder optimized for mean absolute pixel error.

mod decoder;
mod encoder;
mod image;
mod profile;

pub use decoder::{decode, train_decoder, DecoderConfig, DecoderParams, DecoderTraining};
pub use encoder::{frozen_encode, EncoderConfig, FrozenEncoder, Nonlinearity};
pub use image::{synth_image, Image, SyntheticImage};
pub use profile::{calibrate_profile, CalibrationOutcome, ProfileName, StatProfile};

pub use token_stats::LatentGrid;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, WorldError>;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("calibration failed after {iterations} iterations: residuals a={res_a:.4} b={res_b:.4} c={res_c:.4}")]
    Calibration {
        iterations: usize,
        res_a: f64,
        res_b: f64,
        res_c: f64,
    },

    #[error("decoder training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Stats(#[from] token_stats::StatsError),

    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
}

impl WorldError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        WorldError::Contract(msg.into())
    }
}
