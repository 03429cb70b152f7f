//! Small composite layers shared by the models in this workspace: a
//! pre-norm multi-head attention transformer block and its initializer.
//! Blocks contribute a fixed run of parameters to a [`ParamSet`] and are
//! driven positionally from the leaf-id vector.

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Parameters per transformer block: wq, wk, wv, wo, fc1_w, fc1_b, fc2_w, fc2_b.
pub const BLOCK_PARAM_COUNT: usize = 8;

/// Appends one block's parameters (named `{prefix}.wq` etc.) to the set.
/// The MLP hidden width is 4x the model width.
pub fn add_transformer_block(set: &mut ParamSet, prefix: &str, width: usize, rng: &mut Rng) {
    let std = (1.0 / width as f32).sqrt();
    let hidden = 4 * width;
    set.add(
        format!("{prefix}.wq"),
        Tensor::randn(vec![width, width], std, rng),
    );
    set.add(
        format!("{prefix}.wk"),
        Tensor::randn(vec![width, width], std, rng),
    );
    set.add(
        format!("{prefix}.wv"),
        Tensor::randn(vec![width, width], std, rng),
    );
    set.add(
        format!("{prefix}.wo"),
        Tensor::randn(vec![width, width], std, rng),
    );
    set.add(
        format!("{prefix}.fc1_w"),
        Tensor::randn(vec![width, hidden], std, rng),
    );
    set.add(format!("{prefix}.fc1_b"), Tensor::zeros(vec![hidden]));
    set.add(
        format!("{prefix}.fc2_w"),
        Tensor::randn(vec![hidden, width], (1.0 / hidden as f32).sqrt(), rng),
    );
    set.add(format!("{prefix}.fc2_b"), Tensor::zeros(vec![width]));
}

/// Additive attention mask enforcing causal (lower-triangular) visibility
/// for a length-`s` sequence.
pub fn causal_mask(s: usize) -> Tensor {
    let mut data = vec![0.0f32; s * s];
    for i in 0..s {
        for j in (i + 1)..s {
            data[i * s + j] = -1e9;
        }
    }
    Tensor::new(vec![s, s], data).expect("mask construction")
}

/// Pre-norm transformer block over one sequence `x` of shape [s, width].
/// `block_ids` is the 8-parameter run appended by [`add_transformer_block`].
/// `mask` is an optional additive [s, s] score mask (already on the tape).
pub fn transformer_block<R: Real>(
    tape: &mut Tape<R>,
    block_ids: &[NodeId],
    x: NodeId,
    heads: usize,
    mask: Option<NodeId>,
) -> Result<NodeId> {
    if block_ids.len() != BLOCK_PARAM_COUNT {
        return Err(TensorError::contract(format!(
            "transformer block wants {BLOCK_PARAM_COUNT} params, got {}",
            block_ids.len()
        )));
    }
    let (wq, wk, wv, wo) = (block_ids[0], block_ids[1], block_ids[2], block_ids[3]);
    let (fc1_w, fc1_b, fc2_w, fc2_b) = (block_ids[4], block_ids[5], block_ids[6], block_ids[7]);
    let width = tape.shape(x)[1];
    if heads == 0 || width % heads != 0 {
        return Err(TensorError::contract(format!(
            "width {width} not divisible by {heads} heads"
        )));
    }
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let u = tape.layer_norm(x, 1e-6)?;
    let q = tape.matmul(u, wq)?;
    let k = tape.matmul(u, wk)?;
    let v = tape.matmul(u, wv)?;

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.scale(scores, scale)?;
        if let Some(m) = mask {
            scores = tape.add(scores, m)?;
        }
        let att = tape.softmax(scores)?;
        head_outputs.push(tape.matmul(att, vh)?);
    }
    let merged = tape.concat_cols(&head_outputs)?;
    let o = tape.matmul(merged, wo)?;
    let x = tape.add(x, o)?;

    let u2 = tape.layer_norm(x, 1e-6)?;
    let m = tape.matmul(u2, fc1_w)?;
    let m = tape.add_bias(m, fc1_b)?;
    let m = tape.gelu(m)?;
    let m = tape.matmul(m, fc2_w)?;
    let m = tape.add_bias(m, fc2_b)?;
    tape.add(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_mask_blocks_upper_triangle() {
        let m = causal_mask(3);
        assert_eq!(m.data()[0 * 3 + 1], -1e9);
        assert_eq!(m.data()[1 * 3 + 0], 0.0);
        assert_eq!(m.data()[2 * 3 + 2], 0.0);
    }

    #[test]
    fn block_preserves_shape_and_runs_backward() {
        let mut set = ParamSet::new();
        let mut rng = Rng::new(3);
        add_transformer_block(&mut set, "blk", 8, &mut rng);
        let mut tape: Tape<f32> = Tape::new();
        let ids = set.leaf_all(&mut tape).unwrap();
        let x_data: Vec<f32> = (0..5 * 8).map(|_| rng.normal_f32()).collect();
        let x = tape.leaf_raw(vec![5, 8], x_data, false).unwrap();
        let y = transformer_block(&mut tape, &ids, x, 2, None).unwrap();
        assert_eq!(tape.shape(y), &[5, 8]);
        let loss = tape.mean_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(ids[0]).is_some());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut set = ParamSet::new();
        let mut rng = Rng::new(4);
        add_transformer_block(&mut set, "blk", 8, &mut rng);
        let mut tape: Tape<f32> = Tape::new();
        let ids = set.leaf_all(&mut tape).unwrap();
        let x = tape.leaf_raw(vec![2, 8], vec![0.0; 16], false).unwrap();
        assert!(transformer_block(&mut tape, &ids, x, 3, None).is_err());
    }
}
