use crate::grid::LatentGrid;
use crate::{Result, StatsError};
use tensor_core::Rng;

/// A standard-normal noise matrix with its scale, as applied by
/// [`perturb_tokens`]. Kept around for calibration-style analysis.
#[derive(Clone, Debug)]
pub struct PerturbationDraw {
    delta: Vec<f32>,
    alpha: f32,
    seed: u64,
}

impl PerturbationDraw {
    pub fn delta(&self) -> &[f32] {
        &self.delta
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws Δ ~ N(0, I) of shape [n_tokens, dim] for the given seed.
pub fn perturbation_draw(
    n_tokens: usize,
    dim: usize,
    alpha: f32,
    seed: u64,
) -> Result<PerturbationDraw> {
    if alpha < 0.0 {
        return Err(StatsError::contract(format!(
            "perturbation level must be non-negative, got {alpha}"
        )));
    }
    let mut rng = Rng::derive(seed, "token-perturb", 0);
    let delta = (0..n_tokens * dim).map(|_| rng.normal_f32()).collect();
    Ok(PerturbationDraw { delta, alpha, seed })
}

/// `Ẽ = E + α·Δ` with Δ standard normal per entry, deterministic per seed.
/// At α = 0 the input is returned bit-exactly and no noise is drawn.
pub fn perturb_tokens(grid: &LatentGrid, alpha: f32, seed: u64) -> Result<LatentGrid> {
    if alpha < 0.0 {
        return Err(StatsError::contract(format!(
            "perturbation level must be non-negative, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(grid.clone());
    }
    let draw = perturbation_draw(grid.n_tokens(), grid.dim(), alpha, seed)?;
    let data: Vec<f32> = grid
        .data()
        .iter()
        .zip(&draw.delta)
        .map(|(&e, &dl)| e + alpha * dl)
        .collect();
    LatentGrid::new(grid.grid_side(), grid.dim(), data)
}
