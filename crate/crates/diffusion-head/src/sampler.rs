use crate::denoiser::DenoiserParams;
use crate::schedule::DiffusionSchedule;
use crate::{DiffusionError, Result};
use tensor_core::{Rng, Tape};

/// Clamp on the intermediate clean-token estimate; generously wider than
/// any calibrated token scale, it only arrests untrained-head blowups.
const X0_CLAMP: f64 = 20.0;

/// DDPM ancestral sampling of one token conditioned on `z`.
///
/// Starts from x_T ~ N(0, I) and walks a uniformly strided descending
/// subset of `steps` timesteps; each step predicts ε̂, forms the posterior
/// mean of x_{t_prev} and adds the fixed-small posterior noise (none on the
/// final step). Deterministic for a given rng stream.
pub fn sample_token(
    z: &[f32],
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<f32>> {
    let mut out = sample_tokens_batch(&[z.to_vec()], params, schedule, steps, rng)?;
    Ok(out.pop().expect("one row in, one row out"))
}

/// Batched variant: samples one token per condition row, sharing the
/// denoiser forward passes. Rows evolve under independent noise.
pub fn sample_tokens_batch(
    zs: &[Vec<f32>],
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f32>>> {
    let cfg = params.cfg();
    if zs.is_empty() {
        return Err(DiffusionError::contract("no condition rows".to_string()));
    }
    if zs.iter().any(|z| z.len() != cfg.cond_dim) {
        return Err(DiffusionError::contract(format!(
            "condition rows must have dim {}",
            cfg.cond_dim
        )));
    }
    if cfg.t_max != schedule.t_max() {
        return Err(DiffusionError::contract(format!(
            "head built for T = {}, schedule has T = {}",
            cfg.t_max,
            schedule.t_max()
        )));
    }
    let n = zs.len();
    let d = cfg.token_dim;
    let z_flat: Vec<f32> = zs.iter().flatten().copied().collect();

    ancestral_sample(
        |x, t| {
            let mut tape: Tape<f32> = Tape::new();
            let ids = params.set().leaf_all_frozen(&mut tape)?;
            let x_node = tape.leaf_raw(vec![n, d], x.to_vec(), false)?;
            let z_node = tape.leaf_raw(vec![n, cfg.cond_dim], z_flat.clone(), false)?;
            let eps_hat = params.forward_nodes(&mut tape, &ids, x_node, &vec![t; n], z_node)?;
            Ok(tape.tensor(eps_hat).data().to_vec())
        },
        n,
        d,
        schedule,
        steps,
        rng,
    )
}

/// The reverse-process loop itself, driving an arbitrary ε-predictor
/// `denoise(x_flat, t) -> ε̂_flat`. Exposed so tests can run oracle
/// predictors through the exact production update rule.
pub fn ancestral_sample(
    mut denoise: impl FnMut(&[f32], usize) -> Result<Vec<f32>>,
    n: usize,
    d: usize,
    schedule: &DiffusionSchedule,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f32>>> {
    let ts = schedule.strided_steps(steps)?;
    let mut x: Vec<f32> = (0..n * d).map(|_| rng.normal_f32()).collect();

    for (j, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(j + 1).copied().unwrap_or(0);
        let ab_t = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t_prev);

        let eps_hat = denoise(&x, t)?;
        if eps_hat.len() != x.len() {
            return Err(DiffusionError::contract(format!(
                "denoiser returned {} values for {} inputs",
                eps_hat.len(),
                x.len()
            )));
        }

        let alpha_t = ab_t.sqrt();
        let sigma_t = (1.0 - ab_t).sqrt();
        // Posterior q(x_prev | x_t, x̂0) coefficients for the strided jump.
        let beta_eff = 1.0 - ab_t / ab_prev;
        let coef_x0 = ab_prev.sqrt() * beta_eff / (1.0 - ab_t);
        let coef_xt = (ab_t / ab_prev).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = if t_prev == 0 {
            0.0
        } else {
            (beta_eff * (1.0 - ab_prev) / (1.0 - ab_t)).max(0.0)
        };
        let noise_scale = var.sqrt();

        for i in 0..n * d {
            let x0_hat = ((x[i] as f64 - sigma_t * eps_hat[i] as f64) / alpha_t)
                .clamp(-X0_CLAMP, X0_CLAMP);
            let mut next = coef_x0 * x0_hat + coef_xt * x[i] as f64;
            if t_prev != 0 {
                next += noise_scale * rng.normal();
            }
            x[i] = next as f32;
        }
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::Tensor(tensor_core::TensorError::NonFinite(
            "sampled token",
        )));
    }
    Ok(x.chunks_exact(d).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::schedule::ScheduleKind;

    #[test]
    fn same_seed_same_sample() {
        let params = DenoiserParams::init(
            DenoiserConfig {
                token_dim: 4,
                cond_dim: 3,
                width: 16,
                blocks: 2,
                t_max: 100,
            },
            1,
        );
        let s = DiffusionSchedule::make(100, ScheduleKind::Cosine).unwrap();
        let z = vec![0.1, -0.4, 0.9];
        let a = sample_token(&z, &params, &s, 20, &mut Rng::derive(5, "sample", 0)).unwrap();
        let b = sample_token(&z, &params, &s, 20, &mut Rng::derive(5, "sample", 0)).unwrap();
        let c = sample_token(&z, &params, &s, 20, &mut Rng::derive(6, "sample", 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn steps_out_of_range_rejected() {
        let params = DenoiserParams::init(
            DenoiserConfig {
                token_dim: 2,
                cond_dim: 2,
                width: 8,
                blocks: 1,
                t_max: 50,
            },
            2,
        );
        let s = DiffusionSchedule::make(50, ScheduleKind::Cosine).unwrap();
        let z = vec![0.0, 0.0];
        assert!(sample_token(&z, &params, &s, 0, &mut Rng::new(1)).is_err());
        assert!(sample_token(&z, &params, &s, 51, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn oracle_predictor_preserves_standard_normal() {
        // For x0 ~ N(0, I) the optimal ε-predictor is E[ε | x_t] = σ_t·x_t,
        // and the reverse chain must then produce N(0, I) again.
        let t_max = 200;
        let s = DiffusionSchedule::make(t_max, ScheduleKind::Cosine).unwrap();
        let mut rng = Rng::new(9);
        let n = 3000;
        let d = 2;
        let s_ref = &s;
        let rows = ancestral_sample(
            move |x, t| {
                let sigma = s_ref.sigma(t);
                Ok(x.iter().map(|&v| sigma * v).collect())
            },
            n,
            d,
            &s,
            t_max,
            &mut rng,
        )
        .unwrap();
        let flat: Vec<f64> = rows.iter().flatten().map(|&v| v as f64).collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / flat.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "var {var}");
    }
}
