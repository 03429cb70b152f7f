//! Shared fixtures for the acceptance suite.

#![allow(dead_code)]

use diffusion_head::{
    diffusion_loss_node, DenoiserConfig, DenoiserParams, DiffusionSchedule, ScheduleKind,
};
use tensor_core::{adamw_step, AdamWConfig, OptimizerState, Rng, Tape};

pub const HEAD_T_MAX: usize = 300;

/// Trains a small head against a target sampler under fixed conditions.
pub fn train_toy_head(
    seed: u64,
    steps: usize,
    zs: &[Vec<f32>],
    target: impl Fn(usize, &mut Rng) -> Vec<f32>,
) -> (DenoiserParams, DiffusionSchedule) {
    let d = target(0, &mut Rng::new(0)).len();
    let cond = zs[0].len();
    let schedule = DiffusionSchedule::make(HEAD_T_MAX, ScheduleKind::Cosine).unwrap();
    let mut params = DenoiserParams::init(
        DenoiserConfig {
            token_dim: d,
            cond_dim: cond,
            width: 64,
            blocks: 3,
            t_max: HEAD_T_MAX,
        },
        seed,
    );
    let mut opt = OptimizerState::new(AdamWConfig {
        lr: 2e-3,
        ..Default::default()
    });
    let batch = 128;
    for step in 0..steps {
        let frac = step as f32 / steps as f32;
        opt.cfg.lr = 2e-4 + 1.8e-3 * (0.5 + 0.5 * (std::f32::consts::PI * frac).cos());
        let mut rng = Rng::derive(seed, "toy-train", step as u64);
        let mut x0 = Vec::with_capacity(batch * d);
        let mut z = Vec::with_capacity(batch * cond);
        for _ in 0..batch {
            let which = rng.below(zs.len());
            z.extend_from_slice(&zs[which]);
            x0.extend_from_slice(&target(which, &mut rng));
        }
        let mut tape: Tape<f32> = Tape::new();
        let ids = params.set().leaf_all(&mut tape).unwrap();
        let z_node = tape.leaf_raw(vec![batch, cond], z, false).unwrap();
        let loss = diffusion_loss_node(
            &mut tape,
            &params,
            &ids,
            &x0,
            z_node,
            &schedule,
            &mut Rng::derive(seed, "toy-noise", step as u64),
        )
        .unwrap();
        let grads = tape.backward(loss).unwrap();
        let map = params.set().gradient_map(&ids, &grads).unwrap();
        adamw_step(params.set_mut(), &map, &mut opt).unwrap();
    }
    (params, schedule)
}

/// Gaussian target p(x | z) = N(μ(z), 0.01·I) for criterion 6: returns the
/// trained head, schedule, the evaluation condition, its mean, and the
/// target variance.
pub fn train_gaussian_head() -> (DenoiserParams, DiffusionSchedule, Vec<f32>, Vec<f64>, f64) {
    let mut setup = Rng::new(6001);
    let proj: Vec<f32> = (0..2 * 4).map(|_| setup.normal_f32() * 0.4).collect();
    let mu = |z: &[f32]| -> Vec<f32> {
        (0..2)
            .map(|i| (0..4).map(|j| proj[i * 4 + j] * z[j]).sum())
            .collect()
    };
    let zs: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..4).map(|_| setup.normal_f32()).collect())
        .collect();
    let means: Vec<Vec<f32>> = zs.iter().map(|z| mu(z)).collect();
    let means_for_target = means.clone();
    let (head, schedule) = train_toy_head(6002, 3500, &zs, move |which, rng| {
        means_for_target[which]
            .iter()
            .map(|&m| m + 0.1 * rng.normal_f32())
            .collect()
    });
    let target_mean: Vec<f64> = means[0].iter().map(|&v| v as f64).collect();
    (head, schedule, zs[0].clone(), target_mean, 0.01)
}

/// Two-mode mixture for criterion 6.
pub fn train_mixture_head() -> (DenoiserParams, DiffusionSchedule, Vec<f32>) {
    let z = vec![0.5f32, -0.25, 0.8, 0.1];
    let modes = [[0.8f32, 0.8], [-0.8f32, -0.8]];
    let (head, schedule) = train_toy_head(6003, 1500, std::slice::from_ref(&z), move |_, rng| {
        let m = &modes[rng.below(2)];
        m.iter().map(|&v| v + 0.05 * rng.normal_f32()).collect()
    });
    (head, schedule, z)
}

/// Miniature full-pipeline config for the CLI determinism check.
pub fn tiny_cli_config() -> &'static str {
    r#"
seed = 3

[world]
profile = "vae"
image_size = 32
patch = 8
dim = 8
classes = 4
train_images = 48
eval_images = 48
calib_images = 500
world_seed = 21

[model]
depth = 2
width = 32
heads = 2
mode = "causal"
denoiser_width = 32
denoiser_blocks = 2
timesteps = 100
schedule = "cosine"
shift = false
shift_base_dim = 8

[training]
steps = 20
batch = 2
lr = 0.002
alpha = 0.1
normalize = true
log_every = 5
lr_decay = true

[decoder]
width = 32
blocks = 1
heads = 2
epochs = 1
lr = 0.002
train_images = 24

[generation]
samples_per_class = 2
sampler_steps = 8
mask_rounds = 4

[eval]
metrics = ["token_fid", "gfid"]
knn_k = 3
pr_subsample = 200
"#
}
