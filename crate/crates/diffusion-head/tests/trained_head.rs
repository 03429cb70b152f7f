//! Behavioral tests that train small heads on known token distributions and
//! check what the sampler reproduces.

use diffusion_head::{
    diffusion_loss_node, sample_tokens_batch, DenoiserConfig, DenoiserParams, DiffusionSchedule,
    ScheduleKind,
};
use tensor_core::{adamw_step, AdamWConfig, OptimizerState, Rng, Tape};

const D: usize = 2;
const COND: usize = 4;
const T_MAX: usize = 300;

fn head_cfg() -> DenoiserConfig {
    DenoiserConfig {
        token_dim: D,
        cond_dim: COND,
        width: 64,
        blocks: 3,
        t_max: T_MAX,
    }
}

/// Trains a head against `target(z_choice, rng) -> x0` over a small set of
/// fixed condition vectors.
fn train_head(
    seed: u64,
    steps: usize,
    zs: &[Vec<f32>],
    target: impl Fn(usize, &mut Rng) -> Vec<f32>,
) -> (DenoiserParams, f64, f64) {
    let schedule = DiffusionSchedule::make(T_MAX, ScheduleKind::Cosine).unwrap();
    let mut params = DenoiserParams::init(head_cfg(), seed);
    let mut opt = OptimizerState::new(AdamWConfig {
        lr: 2e-3,
        ..Default::default()
    });
    let batch = 128;
    let mut first_loss = 0.0;
    let mut last_loss = 0.0;
    for step in 0..steps {
        // Cosine decay to a tenth of the base rate.
        let frac = step as f32 / steps as f32;
        opt.cfg.lr = 2e-4 + 1.8e-3 * (0.5 + 0.5 * (std::f32::consts::PI * frac).cos());
        let mut rng = Rng::derive(seed, "head-train", step as u64);
        let mut x0 = Vec::with_capacity(batch * D);
        let mut z = Vec::with_capacity(batch * COND);
        for _ in 0..batch {
            let which = rng.below(zs.len());
            z.extend_from_slice(&zs[which]);
            x0.extend_from_slice(&target(which, &mut rng));
        }
        let mut tape: Tape<f32> = Tape::new();
        let ids = params.set().leaf_all(&mut tape).unwrap();
        let z_node = tape.leaf_raw(vec![batch, COND], z, false).unwrap();
        let loss = diffusion_loss_node(
            &mut tape,
            &params,
            &ids,
            &x0,
            z_node,
            &schedule,
            &mut Rng::derive(seed, "head-noise", step as u64),
        )
        .unwrap();
        let loss_val = tape.scalar(loss).unwrap();
        if step == 0 {
            first_loss = loss_val;
        }
        last_loss = loss_val;
        let grads = tape.backward(loss).unwrap();
        let map = params.set().gradient_map(&ids, &grads).unwrap();
        adamw_step(params.set_mut(), &map, &mut opt).unwrap();
    }
    (params, first_loss, last_loss)
}

#[test]
fn gaussian_target_is_reproduced() {
    // p(x | z) = N(P·z, 0.01·I) for four fixed condition vectors.
    let mut setup_rng = Rng::new(77);
    let proj: Vec<f32> = (0..D * COND).map(|_| setup_rng.normal_f32() * 0.4).collect();
    let mu = |z: &[f32]| -> Vec<f32> {
        (0..D)
            .map(|i| (0..COND).map(|j| proj[i * COND + j] * z[j]).sum())
            .collect()
    };
    let zs: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..COND).map(|_| setup_rng.normal_f32()).collect())
        .collect();
    let targets: Vec<Vec<f32>> = zs.iter().map(|z| mu(z)).collect();

    let (params, first, last) = train_head(101, 3500, &zs, |which, rng| {
        targets[which]
            .iter()
            .map(|&m| m + 0.1 * rng.normal_f32())
            .collect()
    });
    assert!(last < first, "loss should drop: {first} -> {last}");

    let schedule = DiffusionSchedule::make(T_MAX, ScheduleKind::Cosine).unwrap();
    // Sample 1000 draws at steps = T for the first condition.
    let n = 1000;
    let rows = sample_tokens_batch(
        &vec![zs[0].clone(); n],
        &params,
        &schedule,
        T_MAX,
        &mut Rng::derive(5, "eval-sample", 0),
    )
    .unwrap();
    for coord in 0..D {
        let vals: Vec<f64> = rows.iter().map(|r| r[coord] as f64).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let target_mean = targets[0][coord] as f64;
        assert!(
            (mean - target_mean).abs() < 0.1,
            "coord {coord}: mean {mean} vs {target_mean}"
        );
        assert!(
            (var - 0.01).abs() / 0.01 < 0.10,
            "coord {coord}: var {var} vs 0.01"
        );
    }
}

#[test]
fn mixture_target_hits_both_modes() {
    // Two far-apart modes under a single condition vector.
    let z = vec![0.5f32, -0.25, 0.8, 0.1];
    let modes = [[0.8f32, 0.8], [-0.8f32, -0.8]];
    let (params, _, _) = train_head(202, 1500, std::slice::from_ref(&z), |_, rng| {
        let m = &modes[rng.below(2)];
        m.iter().map(|&v| v + 0.05 * rng.normal_f32()).collect()
    });

    let schedule = DiffusionSchedule::make(T_MAX, ScheduleKind::Cosine).unwrap();
    let n = 1000;
    let rows = sample_tokens_batch(
        &vec![z.clone(); n],
        &params,
        &schedule,
        100,
        &mut Rng::derive(6, "eval-sample", 0),
    )
    .unwrap();
    let plus = rows.iter().filter(|r| r[0] + r[1] > 0.0).count();
    let frac = plus as f64 / n as f64;
    assert!(
        (0.3..=0.7).contains(&frac),
        "mode frequency {frac} outside [0.3, 0.7]"
    );
    // Samples should actually sit near a mode, not between them.
    let near_mode = rows
        .iter()
        .filter(|r| {
            let d0 = ((r[0] - 0.8).powi(2) + (r[1] - 0.8).powi(2)).sqrt();
            let d1 = ((r[0] + 0.8).powi(2) + (r[1] + 0.8).powi(2)).sqrt();
            d0.min(d1) < 0.4
        })
        .count();
    assert!(
        near_mode as f64 / n as f64 > 0.9,
        "only {near_mode}/{n} samples near a mode"
    );
}

#[test]
fn loss_on_fixed_distribution_drops_below_half_d() {
    // Regression pin: 2000 steps on a fixed 2-D token distribution.
    let z = vec![0.2f32, 0.4, -0.6, 0.3];
    let (_, first, last) = train_head(303, 2000, std::slice::from_ref(&z), |_, rng| {
        vec![
            0.5 + 0.3 * rng.normal_f32(),
            -0.2 + 0.15 * rng.normal_f32(),
        ]
    });
    assert!(
        last < 0.5 * D as f64,
        "final loss {last} not below 0.5·d = {}",
        0.5 * D as f64
    );
    assert!(last < first);
}
