use crate::backbone::{ArMode, BackboneConfig, BackboneParams};
use crate::{ArError, Result};
use diffusion_head::{diffusion_loss_node, DenoiserParams, DiffusionSchedule};
use tensor_core::{adamw_step, AdamWConfig, OptimizerState, Rng, Tape};
use token_stats::{normalize_tokens, perturb_tokens, LatentGrid};

/// Optimizer state for the jointly trained backbone + head, plus the step
/// counter that seeds each step's noise streams.
#[derive(Clone, Debug)]
pub struct TrainContext {
    pub opt_backbone: OptimizerState,
    pub opt_head: OptimizerState,
    pub step: u64,
}

impl TrainContext {
    pub fn new(lr: f32) -> Self {
        let cfg = AdamWConfig {
            lr,
            ..Default::default()
        };
        TrainContext {
            opt_backbone: OptimizerState::new(cfg),
            opt_head: OptimizerState::new(cfg),
            step: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.opt_backbone.cfg.lr = lr;
        self.opt_head.cfg.lr = lr;
    }
}

/// The data half of a training step: (targets, conditioning inputs).
///
/// Targets are the (optionally per-token normalized) clean tokens; the
/// conditioning inputs additionally receive the additive Gaussian
/// perturbation at level α. With normalization off and α = 0 both outputs
/// are bit-identical to the raw grid — the unmodified pipeline.
pub fn pipeline_inputs(
    grid: &LatentGrid,
    cfg: &BackboneConfig,
    seed: u64,
    stream: u64,
) -> Result<(LatentGrid, LatentGrid)> {
    let targets = if cfg.normalize {
        normalize_tokens(grid)?.0
    } else {
        grid.clone()
    };
    let conditioning = perturb_tokens(&targets, cfg.noise_alpha, seed ^ stream.rotate_left(32))?;
    Ok((targets, conditioning))
}

/// One optimization step over a batch of grids.
///
/// Pipeline per sample: (optional normalize) → perturb conditioning inputs
/// → backbone forward → diffusion loss against clean targets → joint AdamW
/// update. Returns the scalar batch loss.
pub fn train_step(
    batch: &[LatentGrid],
    labels: &[usize],
    cfg: &BackboneConfig,
    params: &mut BackboneParams,
    head: &mut DenoiserParams,
    schedule: &DiffusionSchedule,
    ctx: &mut TrainContext,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(ArError::contract(format!(
            "batch of {} grids with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let n = cfg.n_tokens();
    let d = cfg.token_dim;
    let step = ctx.step;

    let mut tape: Tape<f32> = Tape::new();
    let ids_bb = params.set().leaf_all(&mut tape)?;
    let ids_head = head.set().leaf_all(&mut tape)?;

    let mut z_nodes = Vec::with_capacity(batch.len());
    let mut x0 = Vec::new();
    for (i, (grid, &label)) in batch.iter().zip(labels).enumerate() {
        let stream = step.wrapping_mul(8192) + i as u64;
        let (targets, conditioning) = pipeline_inputs(grid, cfg, seed, stream)?;
        match cfg.mode {
            ArMode::Causal => {
                let prefix = &conditioning.data()[..(n - 1) * d];
                let z = params.causal_nodes(&mut tape, &ids_bb, prefix, n - 1, label)?;
                z_nodes.push(z);
                x0.extend_from_slice(targets.data());
            }
            ArMode::Masked => {
                let mut mask_rng = Rng::derive(seed, "train-mask", stream);
                // MAR-style mask ratio, uniform in [0.5, 1.0].
                let ratio = 0.5 + 0.5 * mask_rng.next_f32();
                let k = ((ratio * n as f32).round() as usize).clamp(1, n);
                let mut order: Vec<usize> = (0..n).collect();
                mask_rng.shuffle(&mut order);
                let mut mask = vec![false; n];
                for &p in &order[..k] {
                    mask[p] = true;
                }
                let all = params.masked_nodes(&mut tape, &ids_bb, &conditioning, &mask, label)?;
                // Loss only on masked positions.
                let mut picked = Vec::with_capacity(k);
                for (pos, &m) in mask.iter().enumerate() {
                    if m {
                        picked.push(tape.slice_rows(all, pos, 1)?);
                        x0.extend_from_slice(targets.token(pos));
                    }
                }
                z_nodes.push(tape.concat_rows(&picked)?);
            }
        }
    }
    let z = if z_nodes.len() == 1 {
        z_nodes[0]
    } else {
        tape.concat_rows(&z_nodes)?
    };
    let mut loss_rng = Rng::derive(seed, "train-diffuse", step);
    let loss = diffusion_loss_node(&mut tape, head, &ids_head, &x0, z, schedule, &mut loss_rng)?;
    let loss_val = tape.scalar(loss)?;
    if !loss_val.is_finite() {
        return Err(ArError::Divergence(loss_val));
    }

    let grads = tape.backward(loss)?;
    let map_bb = params.set().gradient_map(&ids_bb, &grads)?;
    let map_head = head.set().gradient_map(&ids_head, &grads)?;
    adamw_step(params.set_mut(), &map_bb, &mut ctx.opt_backbone)?;
    adamw_step(head.set_mut(), &map_head, &mut ctx.opt_head)?;
    ctx.step += 1;
    Ok(loss_val)
}
