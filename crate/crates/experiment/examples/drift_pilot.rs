//! Exposure-drift comparison: baseline (α = 0) vs noise-trained (α > 0)
//! models on one world, reporting per-position drift and its area.
//!
//! Usage: drift_pilot [steps] [alpha] [dim] [seed] [rollouts]

use ar_backbone::ArMode;
use eval_bench::{exposure_drift, DriftOptions};
use experiment::{
    run_experiment, world_bundle, CellStrategy, DecoderSection, EvalSection, ExperimentConfig,
    GenerationSection, ModelSection, NoProgress, ScheduleName, TrainingSection, WorldSection,
};
use latent_world::ProfileName;

fn cfg(steps: usize, alpha: f32, dim: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        world: WorldSection {
            profile: ProfileName::Siglip2,
            image_size: 32,
            patch: 8,
            dim,
            classes: 8,
            train_images: 512,
            eval_images: 256,
            calib_images: 500,
            world_seed: 11,
        },
        model: ModelSection {
            depth: 3,
            width: 64,
            heads: 4,
            mode: ArMode::Causal,
            denoiser_width: 128,
            denoiser_blocks: 3,
            timesteps: 250,
            schedule: ScheduleName::Cosine,
            shift: false,
            shift_base_dim: 8,
        },
        training: TrainingSection {
            steps,
            batch: 4,
            lr: 2e-3,
            alpha,
            normalize: false,
            log_every: 100,
            lr_decay: true,
        },
        decoder: DecoderSection {
            width: 48,
            blocks: 2,
            heads: 2,
            epochs: 10,
            lr: 2e-3,
            train_images: 160,
        },
        generation: GenerationSection {
            samples_per_class: 4,
            sampler_steps: 25,
            mask_rounds: 8,
        },
        eval: EvalSection {
            metrics: vec!["token_fid".to_string()],
            knn_k: 3,
            pr_subsample: 400,
        },
        output_dir: None,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let alpha: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let dim: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);
    let rollouts: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(250);

    println!("steps={steps} alpha={alpha} dim={dim} seed={seed} rollouts={rollouts}x2seeds");
    let base = cfg(steps, alpha, dim, seed);
    let world = world_bundle(&base.world).expect("world");
    let opts = DriftOptions {
        rollouts_per_seed: rollouts,
        sampler_steps: 25,
        mask_rounds: 8,
    };
    let drift_seeds = [seed.wrapping_mul(31) + 1, seed.wrapping_mul(31) + 2];

    for strategy in [CellStrategy::Baseline, CellStrategy::Noise] {
        let cell_cfg = strategy.apply(&base);
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cell_cfg, None, &NoProgress).expect("run");
        let curve = exposure_drift(
            &out.backbone,
            &out.head,
            &out.schedule,
            &world.eval,
            &drift_seeds,
            &opts,
        )
        .expect("drift");
        let vals: Vec<String> = curve.values.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{:<9} auc={:.3} first_q={:.3} last_q={:.3} curve=[{}] ({:.0?})",
            strategy.name(),
            curve.auc(),
            curve.values[..4].iter().sum::<f64>() / 4.0,
            curve.values[12..].iter().sum::<f64>() / 4.0,
            vals.join(","),
            t0.elapsed()
        );
    }
}
