use crate::{ArError, Result};
use serde::{Deserialize, Serialize};
use tensor_core::nn::{add_transformer_block, causal_mask, transformer_block, BLOCK_PARAM_COUNT};
use tensor_core::{NodeId, ParamSet, Real, Rng, Tape, Tensor};
use token_stats::LatentGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArMode {
    Causal,
    Masked,
}

impl std::fmt::Display for ArMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArMode::Causal => "causal",
            ArMode::Masked => "masked",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mode: ArMode,
    pub token_dim: usize,
    pub grid_side: usize,
    pub class_count: usize,
    /// Training-time Gaussian noise level on conditioning inputs.
    pub noise_alpha: f32,
    /// Per-token normalization of targets and conditioning inputs.
    pub normalize: bool,
    pub seed: u64,
}

impl BackboneConfig {
    pub fn n_tokens(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Conditions share the transformer width.
    pub fn cond_dim(&self) -> usize {
        self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.width % self.heads != 0 || self.heads == 0 {
            return Err(ArError::contract(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.noise_alpha < 0.0 {
            return Err(ArError::contract("noise level must be non-negative".to_string()));
        }
        if self.class_count == 0 || self.grid_side == 0 || self.token_dim == 0 {
            return Err(ArError::contract("degenerate geometry".to_string()));
        }
        Ok(())
    }
}

/// Per-position condition vectors z produced by the backbone. For masked
/// forwards, `positions` lists the (masked) positions the rows belong to;
/// for causal forwards it is simply 0..N.
#[derive(Clone, Debug)]
pub struct ConditionBatch {
    pub positions: Vec<usize>,
    pub cond_dim: usize,
    pub rows: Vec<f32>,
}

impl ConditionBatch {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.cond_dim..(i + 1) * self.cond_dim]
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    cfg: BackboneConfig,
    set: ParamSet,
}

impl BackboneParams {
    pub fn init(cfg: BackboneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::derive(seed, "backbone-init", 0);
        let mut set = ParamSet::new();
        let w = cfg.width;
        set.add(
            "bb.in_w",
            Tensor::randn(vec![cfg.token_dim, w], (1.0 / cfg.token_dim as f32).sqrt(), &mut rng),
        );
        set.add("bb.in_b", Tensor::zeros(vec![w]));
        set.add(
            "bb.pos",
            Tensor::randn(vec![cfg.n_tokens(), w], 0.02, &mut rng),
        );
        set.add(
            "bb.class_emb",
            Tensor::randn(vec![cfg.class_count, w], 0.02, &mut rng),
        );
        set.add("bb.mask_emb", Tensor::randn(vec![1, w], 0.02, &mut rng));
        for i in 0..cfg.depth {
            add_transformer_block(&mut set, &format!("bb.blk{i}"), w, &mut rng);
        }
        set.add(
            "bb.out_w",
            Tensor::randn(vec![w, w], (1.0 / w as f32).sqrt(), &mut rng),
        );
        set.add("bb.out_b", Tensor::zeros(vec![w]));
        Ok(BackboneParams { cfg, set })
    }

    pub fn cfg(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    fn block_ids<'a>(&self, ids: &'a [NodeId], block: usize) -> &'a [NodeId] {
        &ids[5 + block * BLOCK_PARAM_COUNT..5 + (block + 1) * BLOCK_PARAM_COUNT]
    }

    /// Causal forward over a (possibly partial) token prefix. Sequence
    /// layout: row 0 is the class embedding, row i > 0 is token i-1; output
    /// row i is the condition for position i. With `prefix` tokens given,
    /// conditions for positions 0..=prefix are produced.
    pub fn causal_nodes<R: Real>(
        &self,
        tape: &mut Tape<R>,
        ids: &[NodeId],
        tokens: &[f32],
        n_prefix: usize,
        class_id: usize,
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        let d = cfg.token_dim;
        if tokens.len() != n_prefix * d {
            return Err(ArError::contract(format!(
                "{} token values for prefix of {n_prefix}",
                tokens.len()
            )));
        }
        let s = n_prefix + 1;
        if s > cfg.n_tokens() {
            return Err(ArError::contract(format!(
                "prefix {n_prefix} exceeds {} positions",
                cfg.n_tokens() - 1
            )));
        }
        if class_id >= cfg.class_count {
            return Err(ArError::contract(format!(
                "class {class_id} outside [0, {})",
                cfg.class_count
            )));
        }
        let (in_w, in_b, pos, class_emb) = (ids[0], ids[1], ids[2], ids[3]);

        let cls_row = tape.gather(class_emb, &[class_id])?;
        let seq = if n_prefix > 0 {
            let tok = tape.leaf_raw(
                vec![n_prefix, d],
                tokens.iter().map(|&v| R::from_f32(v)).collect(),
                false,
            )?;
            let proj = tape.matmul(tok, in_w)?;
            let proj = tape.add_bias(proj, in_b)?;
            tape.concat_rows(&[cls_row, proj])?
        } else {
            cls_row
        };
        let pos_rows = tape.slice_rows(pos, 0, s)?;
        let mut x = tape.add(seq, pos_rows)?;

        let mask = tape.leaf_frozen(&causal_mask(s))?;
        for b in 0..cfg.depth {
            let blk = self.block_ids(ids, b).to_vec();
            x = transformer_block(tape, &blk, x, cfg.heads, Some(mask))?;
        }
        let x = tape.layer_norm(x, 1e-6)?;
        let out_w = ids[5 + cfg.depth * BLOCK_PARAM_COUNT];
        let out_b = ids[6 + cfg.depth * BLOCK_PARAM_COUNT];
        let x = tape.matmul(x, out_w)?;
        tape.add_bias(x, out_b).map_err(Into::into)
    }

    /// Masked forward: masked positions are replaced by the mask embedding,
    /// class embedding is added to every row, attention is bidirectional.
    /// Returns the [N, cond] condition node (all rows).
    pub fn masked_nodes<R: Real>(
        &self,
        tape: &mut Tape<R>,
        ids: &[NodeId],
        tokens: &LatentGrid,
        mask: &[bool],
        class_id: usize,
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        let n = cfg.n_tokens();
        if tokens.n_tokens() != n || tokens.dim() != cfg.token_dim {
            return Err(ArError::contract("grid does not match config".to_string()));
        }
        if mask.len() != n {
            return Err(ArError::contract(format!(
                "mask covers {} of {n} positions",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(ArError::contract("empty mask".to_string()));
        }
        if class_id >= cfg.class_count {
            return Err(ArError::contract(format!(
                "class {class_id} outside [0, {})",
                cfg.class_count
            )));
        }
        let (in_w, in_b, pos, class_emb, mask_emb) = (ids[0], ids[1], ids[2], ids[3], ids[4]);

        let tok = tape.leaf_frozen(&tokens.to_tensor())?;
        let proj = tape.matmul(tok, in_w)?;
        let proj = tape.add_bias(proj, in_b)?;
        // Select per row: mask embedding where masked, projection otherwise.
        let mut row_nodes = Vec::with_capacity(n);
        for (i, &masked) in mask.iter().enumerate() {
            if masked {
                row_nodes.push(tape.gather(mask_emb, &[0])?);
            } else {
                row_nodes.push(tape.slice_rows(proj, i, 1)?);
            }
        }
        let seq = tape.concat_rows(&row_nodes)?;
        let cls = tape.gather(class_emb, &vec![class_id; n])?;
        let seq = tape.add(seq, cls)?;
        let mut x = tape.add(seq, pos)?;
        for b in 0..cfg.depth {
            let blk = self.block_ids(ids, b).to_vec();
            x = transformer_block(tape, &blk, x, cfg.heads, None)?;
        }
        let x = tape.layer_norm(x, 1e-6)?;
        let out_w = ids[5 + cfg.depth * BLOCK_PARAM_COUNT];
        let out_b = ids[6 + cfg.depth * BLOCK_PARAM_COUNT];
        let x = tape.matmul(x, out_w)?;
        tape.add_bias(x, out_b).map_err(Into::into)
    }
}

/// Conditions for every position of a full grid under causal attention.
pub fn causal_forward(
    tokens: &LatentGrid,
    class_id: usize,
    params: &BackboneParams,
) -> Result<ConditionBatch> {
    let cfg = params.cfg();
    let n = cfg.n_tokens();
    if tokens.n_tokens() != n || tokens.dim() != cfg.token_dim {
        return Err(ArError::contract("grid does not match config".to_string()));
    }
    let mut tape: Tape<f32> = Tape::new();
    let ids = params.set().leaf_all_frozen(&mut tape)?;
    let prefix = &tokens.data()[..(n - 1) * cfg.token_dim];
    let out = params.causal_nodes(&mut tape, &ids, prefix, n - 1, class_id)?;
    Ok(ConditionBatch {
        positions: (0..n).collect(),
        cond_dim: cfg.cond_dim(),
        rows: tape.tensor(out).data().to_vec(),
    })
}

/// Conditions at the masked positions of a partially observed grid.
pub fn masked_forward(
    tokens: &LatentGrid,
    mask: &[bool],
    class_id: usize,
    params: &BackboneParams,
) -> Result<ConditionBatch> {
    let mut tape: Tape<f32> = Tape::new();
    let ids = params.set().leaf_all_frozen(&mut tape)?;
    let out = params.masked_nodes(&mut tape, &ids, tokens, mask, class_id)?;
    let all_rows = tape.tensor(out);
    let cond = params.cfg().cond_dim();
    let mut positions = Vec::new();
    let mut rows = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            positions.push(i);
            rows.extend_from_slice(&all_rows.data()[i * cond..(i + 1) * cond]);
        }
    }
    Ok(ConditionBatch {
        positions,
        cond_dim: cond,
        rows,
    })
}

/// The teacher-forcing reference: conditions computed from ground-truth
/// tokens with no perturbation. Alias of [`causal_forward`], kept as the
/// named training-side reference for exposure-drift measurements.
pub fn teacher_forced_conditions(
    tokens: &LatentGrid,
    class_id: usize,
    params: &BackboneParams,
) -> Result<ConditionBatch> {
    causal_forward(tokens, class_id, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(mode: ArMode) -> BackboneConfig {
        BackboneConfig {
            depth: 2,
            width: 16,
            heads: 2,
            mode,
            token_dim: 4,
            grid_side: 2,
            class_count: 3,
            noise_alpha: 0.0,
            normalize: false,
            seed: 1,
        }
    }

    fn grid(seed: u64) -> LatentGrid {
        let mut rng = Rng::new(seed);
        let data = (0..4 * 4).map(|_| rng.normal_f32()).collect();
        LatentGrid::new(2, 4, data).unwrap()
    }

    #[test]
    fn causal_shape_contract() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Causal), 2).unwrap();
        let out = causal_forward(&grid(1), 0, &params).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.cond_dim, 16);
    }

    #[test]
    fn causality_is_bit_exact() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Causal), 3).unwrap();
        let base = grid(2);
        let out_a = causal_forward(&base, 1, &params).unwrap();
        // Perturb token j = 2; conditions at positions <= 2 must be
        // bit-identical, position 3 must differ.
        let mut changed = base.clone();
        changed.token_mut(2)[0] += 1.0;
        let out_b = causal_forward(&changed, 1, &params).unwrap();
        for pos in 0..=2 {
            assert_eq!(out_a.row(pos), out_b.row(pos), "position {pos} changed");
        }
        assert_ne!(out_a.row(3), out_b.row(3));
    }

    #[test]
    fn class_conditioning_reaches_position_zero() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Causal), 4).unwrap();
        let g = grid(3);
        let a = causal_forward(&g, 0, &params).unwrap();
        let b = causal_forward(&g, 2, &params).unwrap();
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn teacher_forcing_is_causal_forward() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Causal), 5).unwrap();
        let g = grid(4);
        let a = causal_forward(&g, 1, &params).unwrap();
        let b = teacher_forced_conditions(&g, 1, &params).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn masked_all_masked_ignores_tokens() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Masked), 6).unwrap();
        let mask = vec![true; 4];
        let a = masked_forward(&grid(5), &mask, 1, &params).unwrap();
        let b = masked_forward(&grid(77), &mask, 1, &params).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn masked_sees_unmasked_tokens() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Masked), 7).unwrap();
        let mask = vec![true, false, true, false];
        let base = grid(6);
        let a = masked_forward(&base, &mask, 1, &params).unwrap();
        let mut changed = base.clone();
        changed.token_mut(1)[2] -= 0.7;
        let b = masked_forward(&changed, &mask, 1, &params).unwrap();
        assert_ne!(a.rows, b.rows);
    }

    #[test]
    fn masked_single_position() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Masked), 8).unwrap();
        let mask = vec![false, false, true, false];
        let out = masked_forward(&grid(7), &mask, 0, &params).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.positions, vec![2]);
    }

    #[test]
    fn masked_empty_mask_rejected() {
        let params = BackboneParams::init(tiny_cfg(ArMode::Masked), 9).unwrap();
        let mask = vec![false; 4];
        assert!(masked_forward(&grid(8), &mask, 0, &params).is_err());
    }
}
