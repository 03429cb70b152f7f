use crate::image::Image;
use crate::{Result, WorldError};
use tensor_core::nn::{add_transformer_block, transformer_block, BLOCK_PARAM_COUNT};
use tensor_core::{
    adamw_step, AdamWConfig, NodeId, OptimizerState, ParamSet, Rng, Tape, Tensor,
};
use token_stats::LatentGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub token_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub patch: usize,
    pub grid_side: usize,
}

impl DecoderConfig {
    fn patch_len(&self) -> usize {
        3 * self.patch * self.patch
    }

    fn n_tokens(&self) -> usize {
        self.grid_side * self.grid_side
    }
}

/// Bidirectional ViT decoder: token projection + positional embeddings,
/// transformer blocks, sigmoid patch projection back to pixels.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    cfg: DecoderConfig,
    set: ParamSet,
}

impl DecoderParams {
    pub fn init(cfg: DecoderConfig, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "decoder-init", 0);
        let mut set = ParamSet::new();
        let std = (1.0 / cfg.token_dim as f32).sqrt();
        set.add(
            "dec.in_w",
            Tensor::randn(vec![cfg.token_dim, cfg.width], std, &mut rng),
        );
        set.add("dec.in_b", Tensor::zeros(vec![cfg.width]));
        set.add(
            "dec.pos",
            Tensor::randn(vec![cfg.n_tokens(), cfg.width], 0.02, &mut rng),
        );
        for i in 0..cfg.blocks {
            add_transformer_block(&mut set, &format!("dec.blk{i}"), cfg.width, &mut rng);
        }
        set.add(
            "dec.out_w",
            Tensor::randn(
                vec![cfg.width, cfg.patch_len()],
                (1.0 / cfg.width as f32).sqrt(),
                &mut rng,
            ),
        );
        set.add("dec.out_b", Tensor::zeros(vec![cfg.patch_len()]));
        DecoderParams { cfg, set }
    }

    pub fn cfg(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    /// Patch-pixel output [N, 3p²] for one grid, values in (0, 1).
    fn forward_nodes<R: tensor_core::Real>(
        &self,
        tape: &mut Tape<R>,
        ids: &[NodeId],
        tokens: NodeId,
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        let (in_w, in_b, pos) = (ids[0], ids[1], ids[2]);
        let out_w = ids[3 + cfg.blocks * BLOCK_PARAM_COUNT];
        let out_b = ids[4 + cfg.blocks * BLOCK_PARAM_COUNT];
        let x = tape.matmul(tokens, in_w)?;
        let x = tape.add_bias(x, in_b)?;
        let mut x = tape.add(x, pos)?;
        for b in 0..cfg.blocks {
            let ids_blk = &ids[3 + b * BLOCK_PARAM_COUNT..3 + (b + 1) * BLOCK_PARAM_COUNT];
            x = transformer_block(tape, ids_blk, x, cfg.heads, None)?;
        }
        let x = tape.layer_norm(x, 1e-6)?;
        let x = tape.matmul(x, out_w)?;
        let x = tape.add_bias(x, out_b)?;
        Ok(tape.sigmoid(x)?)
    }
}

/// L1-trained decoder with its loss trace.
#[derive(Clone, Debug)]
pub struct DecoderTraining {
    pub params: DecoderParams,
    /// Mean absolute pixel error of the untouched initialization.
    pub baseline_l1: f64,
    /// Mean absolute pixel error after training (equals `baseline_l1` for
    /// zero epochs).
    pub final_l1: f64,
    /// Per-epoch mean training loss.
    pub epoch_losses: Vec<f64>,
}

fn image_to_patch_rows(image: &Image, patch: usize) -> Vec<f32> {
    let side = image.size() / patch;
    let mut rows = Vec::with_capacity(image.pixels().len());
    for gy in 0..side {
        for gx in 0..side {
            for py in 0..patch {
                let y = gy * patch + py;
                let base = (y * image.size() + gx * patch) * 3;
                rows.extend_from_slice(&image.pixels()[base..base + 3 * patch]);
            }
        }
    }
    rows
}

fn patch_rows_to_image(rows: &[f32], patch: usize, grid_side: usize) -> Result<Image> {
    let size = patch * grid_side;
    let mut pixels = vec![0.0f32; size * size * 3];
    let patch_len = 3 * patch * patch;
    for gy in 0..grid_side {
        for gx in 0..grid_side {
            let row = &rows[(gy * grid_side + gx) * patch_len..][..patch_len];
            for py in 0..patch {
                let y = gy * patch + py;
                let dst = (y * size + gx * patch) * 3;
                let src = py * 3 * patch;
                pixels[dst..dst + 3 * patch].copy_from_slice(&row[src..src + 3 * patch]);
            }
        }
    }
    for p in pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    Image::new(size, pixels)
}

fn corpus_l1(params: &DecoderParams, pairs: &[(LatentGrid, Image)]) -> Result<f64> {
    let mut acc = 0.0;
    for (grid, image) in pairs {
        let decoded = decode(grid, params)?;
        let err: f64 = decoded
            .pixels()
            .iter()
            .zip(image.pixels())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        acc += err / image.pixels().len() as f64;
    }
    Ok(acc / pairs.len() as f64)
}

/// Trains the decoder to minimize mean absolute pixel error over
/// latent/image pairs produced by one frozen encoder.
pub fn train_decoder(
    pairs: &[(LatentGrid, Image)],
    cfg: DecoderConfig,
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<DecoderTraining> {
    if pairs.is_empty() {
        return Err(WorldError::contract("no training pairs".to_string()));
    }
    for (grid, image) in pairs {
        if grid.dim() != cfg.token_dim
            || grid.grid_side() != cfg.grid_side
            || image.size() != cfg.patch * cfg.grid_side
        {
            return Err(WorldError::contract(
                "pair geometry does not match decoder config".to_string(),
            ));
        }
    }
    let mut params = DecoderParams::init(cfg, seed);
    let baseline_l1 = corpus_l1(&params, pairs)?;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut opt = OptimizerState::new(AdamWConfig {
        lr,
        ..Default::default()
    });

    let targets: Vec<Vec<f32>> = pairs
        .iter()
        .map(|(_, img)| image_to_patch_rows(img, cfg.patch))
        .collect();

    let batch = 8;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut total_step = 0usize;
    for epoch in 0..epochs {
        let mut shuffle_rng = Rng::derive(seed, "decoder-epoch", epoch as u64);
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let mut tape: Tape<f32> = Tape::new();
            let ids = params.set.leaf_all(&mut tape)?;
            let mut losses = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (grid, _) = &pairs[idx];
                let tokens = tape.leaf_frozen(&grid.to_tensor())?;
                let out = params.forward_nodes(&mut tape, &ids, tokens)?;
                let target = tape.leaf_raw(
                    vec![cfg.n_tokens(), cfg.patch_len()],
                    targets[idx].clone(),
                    false,
                )?;
                losses.push(tape.l1(out, target)?);
            }
            let mut loss = losses[0];
            for &l in &losses[1..] {
                loss = tape.add(loss, l)?;
            }
            let loss = tape.scale(loss, 1.0 / chunk.len() as f64)?;
            let loss_val = tape.scalar(loss)?;
            if !loss_val.is_finite() {
                return Err(WorldError::Divergence {
                    step: total_step,
                    loss: loss_val,
                });
            }
            epoch_loss += loss_val;
            batches += 1;
            total_step += 1;
            let grads = tape.backward(loss)?;
            let map = params.set.gradient_map(&ids, &grads)?;
            adamw_step(&mut params.set, &map, &mut opt)?;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    let final_l1 = if epochs == 0 {
        baseline_l1
    } else {
        corpus_l1(&params, pairs)?
    };
    Ok(DecoderTraining {
        params,
        baseline_l1,
        final_l1,
        epoch_losses,
    })
}

/// Deterministic decode of a latent grid to an image in [0, 1].
pub fn decode(latents: &LatentGrid, params: &DecoderParams) -> Result<Image> {
    let cfg = params.cfg;
    if latents.dim() != cfg.token_dim || latents.grid_side() != cfg.grid_side {
        return Err(WorldError::contract(format!(
            "grid {}x{} (dim {}) does not match decoder ({}x{}, dim {})",
            latents.grid_side(),
            latents.grid_side(),
            latents.dim(),
            cfg.grid_side,
            cfg.grid_side,
            cfg.token_dim
        )));
    }
    let mut tape: Tape<f32> = Tape::new();
    let ids = params.set.leaf_all_frozen(&mut tape)?;
    let tokens = tape.leaf_frozen(&latents.to_tensor())?;
    let out = params.forward_nodes(&mut tape, &ids, tokens)?;
    patch_rows_to_image(tape.tensor(out).data(), cfg.patch, cfg.grid_side)
}
