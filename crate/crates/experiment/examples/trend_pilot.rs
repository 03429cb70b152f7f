//! Quick four-cell norm/noise ablation at reduced scale, printing the
//! trend-relevant numbers. Useful for eyeballing a world before running
//! the full grid.
//!
//! Usage: trend_pilot [steps] [samples_per_class] [alpha] [dim] [seed]

use ar_backbone::ArMode;
use experiment::{
    run_experiment, CellStrategy, DecoderSection, EvalSection, ExperimentConfig,
    GenerationSection, ModelSection, NoProgress, ScheduleName, TrainingSection, WorldSection,
};
use latent_world::ProfileName;

fn pilot_config(steps: usize, spc: usize, alpha: f32, dim: usize, seed: u64) -> ExperimentConfig {
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
            normalize: true,
            log_every: 50,
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
            samples_per_class: spc,
            sampler_steps: 25,
            mask_rounds: 8,
        },
        eval: EvalSection {
            metrics: vec![
                "gfid".to_string(),
                "token_fid".to_string(),
                "precision".to_string(),
                "recall".to_string(),
            ],
            knn_k: 3,
            pr_subsample: 800,
        },
        output_dir: None,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let spc: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let alpha: f32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let dim: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1);
    let base = pilot_config(steps, spc, alpha, dim, seed);

    println!("steps={steps} spc={spc} alpha={alpha} dim={dim} seed={seed}");
    println!("cell        final_loss  tail_loss   token_fid   gfid      precision recall");
    for strategy in CellStrategy::ALL {
        let cfg = strategy.apply(&base);
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg, None, &NoProgress).expect("run");
        let get = |name: &str| {
            out.metrics
                .iter()
                .find(|m| m.metric == name)
                .map(|m| m.value)
                .unwrap_or(f64::NAN)
        };
        // Smoothed tail loss: mean of the last 5 logged points.
        let tail: f64 = {
            let pts = &out.loss_curve;
            let k = pts.len().min(5);
            pts[pts.len() - k..].iter().map(|&(_, l)| l).sum::<f64>() / k as f64
        };
        println!(
            "{:<11} {:>10.4} {:>10.4} {:>10.4} {:>9.4} {:>9.4} {:>7.4}   ({:.0?})",
            strategy.name(),
            out.final_loss,
            tail,
            get("token_fid"),
            get("gfid"),
            get("precision"),
            get("recall"),
            t0.elapsed()
        );
    }
}
