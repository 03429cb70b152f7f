use crate::denoiser::DenoiserParams;
use crate::schedule::DiffusionSchedule;
use crate::{DiffusionError, Result};
use tensor_core::{NodeId, Real, Rng, Tape};

/// One noising draw: x_t = α_t·x₀ + σ_t·ε, with everything stored.
#[derive(Clone, Debug)]
pub struct DiffusionDraw {
    pub x0: Vec<f32>,
    pub t: usize,
    pub eps: Vec<f32>,
    pub x_t: Vec<f32>,
}

impl DiffusionDraw {
    /// Recovers ε from the stored draw; only valid while σ_t > 0.
    pub fn recover_eps(&self, schedule: &DiffusionSchedule) -> Result<Vec<f32>> {
        let sigma = schedule.sigma(self.t);
        if sigma <= 0.0 {
            return Err(DiffusionError::contract(
                "epsilon is not recoverable at sigma = 0".to_string(),
            ));
        }
        let alpha = schedule.alpha(self.t);
        Ok(self
            .x_t
            .iter()
            .zip(&self.x0)
            .map(|(&xt, &x0)| (xt - alpha * x0) / sigma)
            .collect())
    }
}

/// Applies the forward noising process at timestep `t`.
pub fn forward_noise(
    x0: &[f32],
    t: usize,
    eps: &[f32],
    schedule: &DiffusionSchedule,
) -> Result<DiffusionDraw> {
    if t == 0 || t > schedule.t_max() {
        return Err(DiffusionError::contract(format!(
            "timestep {t} outside [1, {}]",
            schedule.t_max()
        )));
    }
    if x0.len() != eps.len() {
        return Err(DiffusionError::contract(format!(
            "x0 has {} values, eps has {}",
            x0.len(),
            eps.len()
        )));
    }
    let alpha = schedule.alpha(t);
    let sigma = schedule.sigma(t);
    let x_t = x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| alpha * x + sigma * e)
        .collect();
    Ok(DiffusionDraw {
        x0: x0.to_vec(),
        t,
        eps: eps.to_vec(),
        x_t,
    })
}

/// Builds the per-token diffusion loss on an existing tape, so gradients
/// flow into both the denoiser parameters and the condition nodes `z`.
///
/// For each of the `n` rows of `x0` a timestep is drawn uniformly from
/// [1, T] and a fresh ε ~ N(0, I); the scalar node is the mean over rows of
/// ‖ε − ε̂‖² (i.e. `mse · d`).
pub fn diffusion_loss_node<R: Real>(
    tape: &mut Tape<R>,
    params: &DenoiserParams,
    head_ids: &[NodeId],
    x0: &[f32],
    z: NodeId,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<NodeId> {
    let d = params.cfg().token_dim;
    if x0.is_empty() || x0.len() % d != 0 {
        return Err(DiffusionError::contract(format!(
            "x0 length {} is not a positive multiple of token dim {d}",
            x0.len()
        )));
    }
    if params.cfg().t_max != schedule.t_max() {
        return Err(DiffusionError::contract(format!(
            "head built for T = {}, schedule has T = {}",
            params.cfg().t_max,
            schedule.t_max()
        )));
    }
    let n = x0.len() / d;
    let mut ts = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n * d);
    let mut x_t = Vec::with_capacity(n * d);
    for row in 0..n {
        let t = 1 + rng.below(schedule.t_max());
        let alpha = schedule.alpha(t);
        let sigma = schedule.sigma(t);
        ts.push(t);
        for k in 0..d {
            let e = rng.normal_f32();
            eps.push(e);
            x_t.push(alpha * x0[row * d + k] + sigma * e);
        }
    }
    let x_t_node = tape.leaf_raw(vec![n, d], x_t.iter().map(|&v| R::from_f32(v)).collect(), false)?;
    let eps_node = tape.leaf_raw(vec![n, d], eps.iter().map(|&v| R::from_f32(v)).collect(), false)?;
    let eps_hat = params.forward_nodes(tape, head_ids, x_t_node, &ts, z)?;
    let mse = tape.mse(eps_hat, eps_node)?;
    // mse averages over n·d entries; scale by d to make the scalar the mean
    // per-token squared error ‖ε − ε̂‖².
    Ok(tape.scale(mse, d as f64)?)
}

/// Contract-level loss: draws (ε, t) per row, runs the denoiser, returns the
/// scalar. `z` rows are plain data here.
pub fn diffusion_loss(
    params: &DenoiserParams,
    x0: &[f32],
    z: &[f32],
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<f64> {
    let d = params.cfg().token_dim;
    let cond = params.cfg().cond_dim;
    if x0.is_empty() || x0.len() % d != 0 {
        return Err(DiffusionError::contract(format!(
            "x0 length {} is not a positive multiple of token dim {d}",
            x0.len()
        )));
    }
    let n = x0.len() / d;
    if z.len() != n * cond {
        return Err(DiffusionError::contract(format!(
            "z length {} does not match {n} rows of cond dim {cond}",
            z.len()
        )));
    }
    let mut rng = Rng::derive(seed, "diffusion-loss", 0);
    let mut tape: Tape<f32> = Tape::new();
    let ids = params.set().leaf_all(&mut tape)?;
    let z_node = tape.leaf_raw(vec![n, cond], z.to_vec(), false)?;
    let loss = diffusion_loss_node(&mut tape, params, &ids, x0, z_node, schedule, &mut rng)?;
    tape.check_finite(loss, "diffusion loss")?;
    tape.scalar(loss).map_err(Into::into)
}
