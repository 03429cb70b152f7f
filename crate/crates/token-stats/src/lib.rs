//! Token-distribution analysis kernel.
//!
//! A latent image is a square grid of N = g² continuous tokens with d
//! channels each. Per-token statistics along the channel dimension form the
//! spatial mean-map and var-map; their corpus-level summaries (statistics
//! (a), (b) and (c)) quantify how unevenly tokens are distributed. Two
//! transforms act on grids: per-token normalization to zero mean / unit
//! variance, and additive Gaussian perturbation `E + α·Δ`.

mod grid;
mod perturb;
mod stats;

pub use grid::LatentGrid;
pub use perturb::{perturb_tokens, perturbation_draw, PerturbationDraw};
pub use stats::{
    denormalize_tokens, mean_map, normalize_tokens, summary_stats, var_map, NormalizationRecord,
    TokenStatsSummary, STD_FLOOR,
};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl StatsError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        StatsError::Contract(msg.into())
    }
}
