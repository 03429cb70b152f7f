use crate::{DiffusionError, Result};
use tensor_core::{NodeId, ParamSet, Real, Rng, Tape, Tensor};

/// Geometry of the MLP denoiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub token_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub blocks: usize,
    /// Timestep count of the schedule this head is trained against; sizes
    /// the learned timestep-embedding table.
    pub t_max: usize,
}

impl DenoiserConfig {
    fn param_count(&self) -> usize {
        // t_emb, z proj, in proj, blocks, final modulation, out proj.
        5 + 6 * self.blocks + 2 + 2
    }
}

/// Parameters of the denoiser: learned timestep table, z projection, input
/// projection, modulated residual blocks, output projection. Parameter
/// order is fixed; [`denoiser_forward_nodes`] indexes it positionally.
#[derive(Clone, Debug)]
pub struct DenoiserParams {
    cfg: DenoiserConfig,
    set: ParamSet,
}

impl DenoiserParams {
    /// Fresh initialization. Linear weights are N(0, 1/fan_in); modulation
    /// and output projections start at zero so the head begins as the
    /// zero predictor with neutral modulation.
    pub fn init(cfg: DenoiserConfig, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "denoiser-init", 0);
        let w = cfg.width;
        let mut set = ParamSet::new();
        let lin = |rng: &mut Rng, rows: usize, cols: usize| {
            Tensor::randn(vec![rows, cols], (1.0 / (rows as f32)).sqrt(), rng)
        };
        set.add(
            "head.t_emb",
            Tensor::randn(vec![cfg.t_max + 1, w], 0.02, &mut rng),
        );
        set.add("head.z_w", lin(&mut rng, cfg.cond_dim, w));
        set.add("head.z_b", Tensor::zeros(vec![w]));
        set.add("head.in_w", lin(&mut rng, cfg.token_dim, w));
        set.add("head.in_b", Tensor::zeros(vec![w]));
        for i in 0..cfg.blocks {
            set.add(format!("head.b{i}.mod_w"), Tensor::zeros(vec![w, 2 * w]));
            set.add(format!("head.b{i}.mod_b"), Tensor::zeros(vec![2 * w]));
            set.add(format!("head.b{i}.fc1_w"), lin(&mut rng, w, w));
            set.add(format!("head.b{i}.fc1_b"), Tensor::zeros(vec![w]));
            set.add(format!("head.b{i}.fc2_w"), lin(&mut rng, w, w));
            set.add(format!("head.b{i}.fc2_b"), Tensor::zeros(vec![w]));
        }
        set.add("head.final.mod_w", Tensor::zeros(vec![w, 2 * w]));
        set.add("head.final.mod_b", Tensor::zeros(vec![2 * w]));
        set.add("head.out_w", Tensor::zeros(vec![w, cfg.token_dim]));
        set.add("head.out_b", Tensor::zeros(vec![cfg.token_dim]));
        DenoiserParams { cfg, set }
    }

    pub fn cfg(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    /// Builds ε̂ = denoiser(x_t | t, z) on the tape from pre-inserted
    /// parameter leaves (`ids`, in set order). `x_t` is [n, d], `z` is
    /// [n, cond_dim], `ts` holds one timestep index per row.
    pub fn forward_nodes<R: Real>(
        &self,
        tape: &mut Tape<R>,
        ids: &[NodeId],
        x_t: NodeId,
        ts: &[usize],
        z: NodeId,
    ) -> Result<NodeId> {
        denoiser_forward_nodes(tape, &self.cfg, ids, x_t, ts, z)
    }

    /// Convenience forward from raw data (allocates its own tape).
    pub fn forward_data(&self, x_t: &[f32], t: usize, z: &[f32]) -> Result<Vec<f32>> {
        let cfg = self.cfg;
        if x_t.len() % cfg.token_dim != 0 {
            return Err(DiffusionError::contract(format!(
                "x_t length {} is not a multiple of token dim {}",
                x_t.len(),
                cfg.token_dim
            )));
        }
        let n = x_t.len() / cfg.token_dim;
        if z.len() != n * cfg.cond_dim {
            return Err(DiffusionError::contract(format!(
                "z length {} does not match {n} rows of cond dim {}",
                z.len(),
                cfg.cond_dim
            )));
        }
        let mut tape: Tape<f32> = Tape::new();
        let ids = self.set.leaf_all(&mut tape)?;
        let x_node = tape.leaf_raw(vec![n, cfg.token_dim], x_t.to_vec(), false)?;
        let z_node = tape.leaf_raw(vec![n, cfg.cond_dim], z.to_vec(), false)?;
        let out = self.forward_nodes(&mut tape, &ids, x_node, &vec![t; n], z_node)?;
        Ok(tape.tensor(out).data().to_vec())
    }
}

/// Free-function forward used by both training and the gradient checker;
/// `param_ids` must follow the [`DenoiserParams::init`] ordering.
pub fn denoiser_forward_nodes<R: Real>(
    tape: &mut Tape<R>,
    cfg: &DenoiserConfig,
    param_ids: &[NodeId],
    x_t: NodeId,
    ts: &[usize],
    z: NodeId,
) -> Result<NodeId> {
    let w = cfg.width;
    let expected = cfg.param_count();
    if param_ids.len() != expected {
        return Err(DiffusionError::contract(format!(
            "denoiser expects {expected} parameters, got {}",
            param_ids.len()
        )));
    }
    let (t_emb, z_w, z_b, in_w, in_b) = (
        param_ids[0],
        param_ids[1],
        param_ids[2],
        param_ids[3],
        param_ids[4],
    );
    let out_w = param_ids[expected - 2];
    let out_b = param_ids[expected - 1];

    let n = tape.shape(x_t)[0];
    if ts.len() != n {
        return Err(DiffusionError::contract(format!(
            "{} timesteps for {n} rows",
            ts.len()
        )));
    }
    if let Some(&bad) = ts.iter().find(|&&t| t == 0 || t > cfg.t_max) {
        return Err(DiffusionError::contract(format!(
            "timestep {bad} outside [1, {}]",
            cfg.t_max
        )));
    }

    // cond = t_emb[t] + z·W_z + b_z, shared by every block's modulation.
    let t_rows = tape.gather(t_emb, ts)?;
    let z_proj = tape.matmul(z, z_w)?;
    let z_proj = tape.add_bias(z_proj, z_b)?;
    let cond = tape.add(t_rows, z_proj)?;

    let h = tape.matmul(x_t, in_w)?;
    let mut h = tape.add_bias(h, in_b)?;

    for i in 0..cfg.blocks {
        let base = 5 + 6 * i;
        let (mod_w, mod_b, fc1_w, fc1_b, fc2_w, fc2_b) = (
            param_ids[base],
            param_ids[base + 1],
            param_ids[base + 2],
            param_ids[base + 3],
            param_ids[base + 4],
            param_ids[base + 5],
        );
        let u = tape.layer_norm(h, 1e-6)?;
        let mods = tape.matmul(cond, mod_w)?;
        let mods = tape.add_bias(mods, mod_b)?;
        let gamma = tape.slice_cols(mods, 0, w)?;
        let beta = tape.slice_cols(mods, w, w)?;
        let gamma1 = tape.add_const(gamma, 1.0)?;
        let u = tape.mul(u, gamma1)?;
        let u = tape.add(u, beta)?;
        let u = tape.matmul(u, fc1_w)?;
        let u = tape.add_bias(u, fc1_b)?;
        let u = tape.silu(u)?;
        let u = tape.matmul(u, fc2_w)?;
        let u = tape.add_bias(u, fc2_b)?;
        h = tape.add(h, u)?;
    }

    // Final layer: modulated norm then projection, so output scale can
    // depend on (t, z).
    let fmod_w = param_ids[expected - 4];
    let fmod_b = param_ids[expected - 3];
    let f = tape.layer_norm(h, 1e-6)?;
    let mods = tape.matmul(cond, fmod_w)?;
    let mods = tape.add_bias(mods, fmod_b)?;
    let gamma = tape.slice_cols(mods, 0, w)?;
    let beta = tape.slice_cols(mods, w, w)?;
    let gamma1 = tape.add_const(gamma, 1.0)?;
    let f = tape.mul(f, gamma1)?;
    let f = tape.add(f, beta)?;
    let out = tape.matmul(f, out_w)?;
    Ok(tape.add_bias(out, out_b)?)
}

/// Contract-level forward: plain data in, ε̂ out.
pub fn denoiser_forward(
    params: &DenoiserParams,
    x_t: &[f32],
    t: usize,
    z: &[f32],
) -> Result<Vec<f32>> {
    params.forward_data(x_t, t, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            token_dim: 3,
            cond_dim: 4,
            width: 8,
            blocks: 2,
            t_max: 50,
        }
    }

    #[test]
    fn zero_output_projection_gives_zero_eps() {
        // Freshly initialized params have zero out_w/out_b.
        let params = DenoiserParams::init(tiny_cfg(), 1);
        let out = params
            .forward_data(&[0.3, -0.2, 0.8], 7, &[0.1, 0.2, 0.3, 0.4])
            .unwrap();
        assert!(out.iter().all(|&v| v == 0.0), "out = {out:?}");
    }

    #[test]
    fn conditioning_changes_output_for_generic_params() {
        let mut params = DenoiserParams::init(tiny_cfg(), 2);
        // Break the zero-initialized projections so conditioning can show up.
        let mut rng = Rng::new(5);
        let names: Vec<String> = params
            .set()
            .iter()
            .filter(|(n, _)| n.contains("out_w") || n.contains("mod_w"))
            .map(|(n, _)| n.to_string())
            .collect();
        for name in names {
            let t = params.set_mut().by_name_mut(&name).unwrap();
            for v in t.data_mut() {
                *v = rng.normal_f32() * 0.3;
            }
        }
        let x_t = [0.5, -0.5, 0.25];
        let za = [0.0, 0.0, 0.0, 0.0];
        let zb = [1.0, -1.0, 0.5, 0.2];
        let out_a = params.forward_data(&x_t, 10, &za).unwrap();
        let out_b = params.forward_data(&x_t, 10, &zb).unwrap();
        assert_ne!(out_a, out_b);
    }

    #[test]
    fn rejects_out_of_range_timestep() {
        let params = DenoiserParams::init(tiny_cfg(), 3);
        assert!(params.forward_data(&[0.0; 3], 0, &[0.0; 4]).is_err());
        assert!(params.forward_data(&[0.0; 3], 51, &[0.0; 4]).is_err());
    }
}
