use crate::backbone::{ArMode, BackboneParams};
use crate::{ArError, Result};
use diffusion_head::{sample_token, sample_tokens_batch, DenoiserParams, DiffusionSchedule};
use serde::{Deserialize, Serialize};
use tensor_core::{Rng, Tape};
use token_stats::LatentGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub class_id: usize,
    /// Sampler steps per token.
    pub steps: usize,
    /// Unmasking rounds for masked generation (K).
    pub mask_rounds: usize,
    pub seed: u64,
}

/// Raster-scan free-running generation: each position is conditioned on the
/// previously generated tokens only, never ground truth.
pub fn generate_causal(
    params: &BackboneParams,
    head: &DenoiserParams,
    schedule: &DiffusionSchedule,
    gen: &GenerationConfig,
) -> Result<LatentGrid> {
    let cfg = params.cfg();
    if gen.class_id >= cfg.class_count {
        return Err(ArError::contract(format!(
            "class {} outside [0, {})",
            gen.class_id, cfg.class_count
        )));
    }
    let n = cfg.n_tokens();
    let d = cfg.token_dim;
    let cond = cfg.cond_dim();
    let mut tokens: Vec<f32> = Vec::with_capacity(n * d);
    for pos in 0..n {
        let mut tape: Tape<f32> = Tape::new();
        let ids = params.set().leaf_all_frozen(&mut tape)?;
        let z_all = params.causal_nodes(&mut tape, &ids, &tokens, pos, gen.class_id)?;
        let z_last = tape.slice_rows(z_all, pos, 1)?;
        let z = tape.tensor(z_last).data().to_vec();
        debug_assert_eq!(z.len(), cond);
        let mut rng = Rng::derive(gen.seed, "gen-causal", pos as u64);
        let token = sample_token(&z, head, schedule, gen.steps, &mut rng)?;
        tokens.extend_from_slice(&token);
    }
    LatentGrid::new(cfg.grid_side, d, tokens).map_err(Into::into)
}

/// The unmasking schedule for K rounds over n positions: cosine-shaped
/// counts, each round unmasking at least one position, covering every
/// position exactly once.
pub fn unmask_plan(n: usize, rounds: usize) -> Result<Vec<usize>> {
    if rounds == 0 || rounds > n {
        return Err(ArError::contract(format!(
            "rounds must be in [1, {n}], got {rounds}"
        )));
    }
    // Invariant: `remaining` always leaves at least one position for every
    // later round, so each round unmasks at least one and the counts
    // telescope to exactly n.
    let mut plan = Vec::with_capacity(rounds);
    let mut remaining = n;
    for k in 1..=rounds {
        let rounds_left = rounds - k;
        let target = if k == rounds {
            0
        } else {
            let cos = (std::f64::consts::FRAC_PI_2 * k as f64 / rounds as f64).cos();
            ((n as f64 * cos).floor() as usize).clamp(rounds_left, remaining - 1)
        };
        plan.push(remaining - target);
        remaining = target;
    }
    Ok(plan)
}

/// Mask-based parallel generation: iterative unmasking over K rounds in a
/// seeded random position order, each round sampling the newly unmasked
/// positions conditioned on everything generated so far.
pub fn generate_masked(
    params: &BackboneParams,
    head: &DenoiserParams,
    schedule: &DiffusionSchedule,
    gen: &GenerationConfig,
) -> Result<LatentGrid> {
    let cfg = params.cfg();
    if gen.class_id >= cfg.class_count {
        return Err(ArError::contract(format!(
            "class {} outside [0, {})",
            gen.class_id, cfg.class_count
        )));
    }
    let n = cfg.n_tokens();
    let d = cfg.token_dim;
    let plan = unmask_plan(n, gen.mask_rounds)?;

    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(gen.seed, "gen-order", 0).shuffle(&mut order);

    let mut grid = LatentGrid::zeros(cfg.grid_side, d);
    let mut generated = vec![false; n];
    let mut cursor = 0;
    for (round, &count) in plan.iter().enumerate() {
        let to_unmask: Vec<usize> = order[cursor..cursor + count].to_vec();
        cursor += count;
        let mask: Vec<bool> = generated.iter().map(|&g| !g).collect();

        let mut tape: Tape<f32> = Tape::new();
        let ids = params.set().leaf_all_frozen(&mut tape)?;
        let z_all = params.masked_nodes(&mut tape, &ids, &grid, &mask, gen.class_id)?;
        let z_tensor = tape.tensor(z_all);
        let cond = cfg.cond_dim();
        let zs: Vec<Vec<f32>> = to_unmask
            .iter()
            .map(|&pos| z_tensor.data()[pos * cond..(pos + 1) * cond].to_vec())
            .collect();
        let mut rng = Rng::derive(gen.seed, "gen-masked", round as u64);
        let sampled = sample_tokens_batch(&zs, head, schedule, gen.steps, &mut rng)?;
        for (&pos, token) in to_unmask.iter().zip(&sampled) {
            grid.token_mut(pos).copy_from_slice(token);
            generated[pos] = true;
        }
    }
    debug_assert!(generated.iter().all(|&g| g));
    Ok(grid)
}

/// Generates a grid in the mode the backbone was configured for.
pub fn generate(
    params: &BackboneParams,
    head: &DenoiserParams,
    schedule: &DiffusionSchedule,
    gen: &GenerationConfig,
) -> Result<LatentGrid> {
    match params.cfg().mode {
        ArMode::Causal => generate_causal(params, head, schedule, gen),
        ArMode::Masked => generate_masked(params, head, schedule, gen),
    }
}
