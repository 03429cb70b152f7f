use crate::checkpoint::save_checkpoint;
use crate::config::ExperimentConfig;
use crate::csv::{loss_curve_csv, metrics_csv, multi_series_csv, sweep_csv};
use crate::world::{decoder_for, world_bundle, DecoderSpace, WorldBundle};
use crate::{ExperimentError, Result};
use ar_backbone::{
    generate, train_step, BackboneConfig, BackboneParams, GenerationConfig, TrainContext,
};
use diffusion_head::{shift_timesteps, DenoiserConfig, DenoiserParams, DiffusionSchedule};
use eval_bench::{frechet_distance, precision_recall, psnr, ssim, FeatureRows, MetricsRow};
use latent_world::decode;
use std::path::{Path, PathBuf};
use token_stats::LatentGrid;

/// Progress sink for long-running drivers.
pub trait Progress: Send + Sync {
    fn update(&self, phase: &str, done: usize, total: usize);
}

/// Silent sink.
pub struct NoProgress;

impl Progress for NoProgress {
    fn update(&self, _phase: &str, _done: usize, _total: usize) {}
}

/// Everything a finished run produced, kept in memory so follow-up analyses
/// (drift curves, trend comparisons) can reuse the trained model and the
/// generated corpus without retraining.
pub struct RunOutcome {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub metrics: Vec<MetricsRow>,
    pub loss_curve: Vec<(u64, f64)>,
    pub final_loss: f64,
    pub backbone: BackboneParams,
    pub head: DenoiserParams,
    pub schedule: DiffusionSchedule,
    pub generated: Vec<(LatentGrid, usize)>,
    pub artifacts: Vec<PathBuf>,
}

fn backbone_config(cfg: &ExperimentConfig) -> Result<BackboneConfig> {
    Ok(BackboneConfig {
        depth: cfg.model.depth,
        width: cfg.model.width,
        heads: cfg.model.heads,
        mode: cfg.model.mode,
        token_dim: cfg.world.dim,
        grid_side: cfg.world.grid_side()?,
        class_count: cfg.world.classes,
        noise_alpha: cfg.training.alpha,
        normalize: cfg.training.normalize,
        seed: cfg.seed,
    })
}

fn build_schedule(cfg: &ExperimentConfig) -> Result<DiffusionSchedule> {
    let base = DiffusionSchedule::make(
        cfg.model.timesteps,
        match cfg.model.schedule {
            crate::config::ScheduleName::Cosine => diffusion_head::ScheduleKind::Cosine,
        },
    )?;
    Ok(if cfg.model.shift {
        shift_timesteps(&base, cfg.world.dim, cfg.model.shift_base_dim)
    } else {
        base
    })
}

fn fold_seed(seed: u64, tag: &str, i: u64) -> u64 {
    tensor_core::Rng::derive(seed, tag, i).next_u64()
}

/// Draws `count` grids from the trained model, classes cycling.
pub fn sample_corpus(
    backbone: &BackboneParams,
    head: &DenoiserParams,
    schedule: &DiffusionSchedule,
    sampler_steps: usize,
    mask_rounds: usize,
    seed: u64,
    count: usize,
    progress: &dyn Progress,
) -> Result<Vec<(LatentGrid, usize)>> {
    let classes = backbone.cfg().class_count;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let class_id = i % classes;
        let gen_cfg = GenerationConfig {
            class_id,
            steps: sampler_steps,
            mask_rounds,
            seed: fold_seed(seed, "generate", i as u64),
        };
        out.push((generate(backbone, head, schedule, &gen_cfg)?, class_id));
        if (i + 1) % 16 == 0 || i + 1 == count {
            progress.update("generate", i + 1, count);
        }
    }
    Ok(out)
}

fn stride_subsample(rows: &FeatureRows, cap: usize) -> FeatureRows {
    let n = rows.n_rows();
    if n <= cap {
        return rows.clone();
    }
    let mut out = FeatureRows::new(rows.dim());
    let stride = n.div_ceil(cap);
    for i in (0..n).step_by(stride) {
        out.push_row(rows.row(i));
    }
    out
}

/// Decode each grid with the cell's decoder, re-encode with the world's
/// (raw) frozen encoder, and pool all token rows: the shared feature space
/// in which cells with different token spaces stay comparable.
fn reencoded_features(
    grids: &[LatentGrid],
    decoder: &latent_world::DecoderParams,
    world: &WorldBundle,
) -> Result<FeatureRows> {
    let mut rows = FeatureRows::new(world.section.dim);
    for grid in grids {
        let image = decode(grid, decoder)?;
        let re = world.encoder.encode(&image)?;
        for token in re.tokens() {
            rows.push_row(token);
        }
    }
    Ok(rows)
}

/// Runs one experiment cell end to end: world → decoder → backbone + head
/// training → generation → metrics (→ artifacts when `out_dir` is given).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    progress: &dyn Progress,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let run_id = cfg.run_id();
    let world = world_bundle(&cfg.world)?;
    let space = DecoderSpace::from_normalize_flag(cfg.training.normalize);

    let wants = |m: &str| cfg.eval.metrics.iter().any(|x| x == m);
    let needs_decoder = ["gfid", "precision", "recall", "psnr", "ssim", "rfid"]
        .iter()
        .any(|m| wants(m));
    let decoder = if needs_decoder {
        progress.update("decoder", 0, 1);
        Some(decoder_for(&world, &cfg.decoder, space)?)
    } else {
        None
    };

    // Model setup.
    let bb_cfg = backbone_config(cfg)?;
    let schedule = build_schedule(cfg)?;
    let mut backbone = BackboneParams::init(bb_cfg.clone(), fold_seed(cfg.seed, "bb-init", 0))?;
    let mut head = DenoiserParams::init(
        DenoiserConfig {
            token_dim: cfg.world.dim,
            cond_dim: bb_cfg.cond_dim(),
            width: cfg.model.denoiser_width,
            blocks: cfg.model.denoiser_blocks,
            t_max: cfg.model.timesteps,
        },
        fold_seed(cfg.seed, "head-init", 0),
    );
    let mut ctx = TrainContext::new(cfg.training.lr);

    // Training.
    let steps = cfg.training.steps;
    let mut loss_curve: Vec<(u64, f64)> = Vec::new();
    let mut final_loss = f64::NAN;
    for step in 0..steps {
        if cfg.training.lr_decay {
            let frac = step as f32 / steps as f32;
            let lr = cfg.training.lr
                * (0.1 + 0.9 * (0.5 + 0.5 * (std::f32::consts::PI * frac).cos()));
            ctx.set_lr(lr);
        }
        let mut batch_rng = tensor_core::Rng::derive(cfg.seed, "batch", step as u64);
        let mut batch = Vec::with_capacity(cfg.training.batch);
        let mut labels = Vec::with_capacity(cfg.training.batch);
        for _ in 0..cfg.training.batch {
            let idx = batch_rng.below(world.train.len());
            batch.push(world.train[idx].clone());
            labels.push(world.train_labels[idx]);
        }
        let loss = match train_step(
            &batch, &labels, &bb_cfg, &mut backbone, &mut head, &schedule, &mut ctx, cfg.seed,
        ) {
            Ok(loss) => loss,
            Err(err) => {
                // Keep the last finite state around for inspection.
                if let Some(dir) = out_dir {
                    let _ = write_checkpoint(cfg, &backbone, &head, step as u64, dir, "checkpoint.partial.bin");
                }
                return Err(err.into());
            }
        };
        if step % cfg.training.log_every == 0 || step + 1 == steps {
            loss_curve.push((step as u64, loss));
        }
        final_loss = loss;
        if (step + 1) % 25 == 0 || step + 1 == steps {
            progress.update("train", step + 1, steps);
        }
    }

    // Generation + metrics.
    let (generated, mut metrics) = generate_and_evaluate(
        cfg,
        &world,
        decoder.as_deref(),
        &backbone,
        &head,
        &schedule,
        &run_id,
        progress,
    )?;
    metrics.insert(
        0,
        metric_row(cfg, &run_id, "final_loss", final_loss),
    );

    // Artifacts.
    let mut artifacts = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| ExperimentError::io(dir.display().to_string(), e))?;
        let metrics_path = dir.join("metrics.csv");
        write_text(&metrics_path, &metrics_csv(&metrics))?;
        artifacts.push(metrics_path);
        let curve_path = dir.join("loss_curve.csv");
        write_text(&curve_path, &loss_curve_csv(&loss_curve))?;
        artifacts.push(curve_path);
        let config_path = dir.join("config.toml");
        write_text(&config_path, &cfg.to_toml())?;
        artifacts.push(config_path);
        artifacts.push(write_checkpoint(
            cfg,
            &backbone,
            &head,
            steps as u64,
            dir,
            "checkpoint.bin",
        )?);
    }

    Ok(RunOutcome {
        run_id,
        config: cfg.clone(),
        metrics,
        loss_curve,
        final_loss,
        backbone,
        head,
        schedule,
        generated,
        artifacts,
    })
}

fn metric_row(cfg: &ExperimentConfig, run_id: &str, metric: &str, value: f64) -> MetricsRow {
    MetricsRow {
        run_id: run_id.to_string(),
        profile: cfg.world.profile.to_string(),
        mode: cfg.model.mode.to_string(),
        alpha: cfg.training.alpha,
        norm: cfg.training.normalize,
        seed: cfg.seed,
        metric: metric.to_string(),
        value,
    }
}

/// Shared generation-and-scoring tail of a run: samples the corpus and
/// computes whichever metrics the config lists.
#[allow(clippy::too_many_arguments)]
fn generate_and_evaluate(
    cfg: &ExperimentConfig,
    world: &WorldBundle,
    decoder: Option<&latent_world::DecoderTraining>,
    backbone: &BackboneParams,
    head: &DenoiserParams,
    schedule: &DiffusionSchedule,
    run_id: &str,
    progress: &dyn Progress,
) -> Result<(Vec<(LatentGrid, usize)>, Vec<MetricsRow>)> {
    let space = DecoderSpace::from_normalize_flag(cfg.training.normalize);
    let wants = |m: &str| cfg.eval.metrics.iter().any(|x| x == m);
    let total = cfg.generation.samples_per_class * cfg.world.classes;
    let generated = sample_corpus(
        backbone,
        head,
        schedule,
        cfg.generation.sampler_steps,
        cfg.generation.mask_rounds,
        fold_seed(cfg.seed, "gen-root", 0),
        total,
        progress,
    )?;

    progress.update("eval", 0, 1);
    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut push = |metric: &str, value: f64| {
        metrics.push(metric_row(cfg, run_id, metric, value));
    };

    let gen_grids: Vec<LatentGrid> = generated.iter().map(|(g, _)| g.clone()).collect();
    if wants("token_fid") {
        let eval_model_space = world.eval_grids(space)?;
        let a = FeatureRows::from_grids(&gen_grids)?;
        let b = FeatureRows::from_grids(&eval_model_space)?;
        push("token_fid", frechet_distance(&a, &b)?);
    }
    if let Some(decoder) = decoder {
        push("decoder_l1", decoder.final_l1);
        let real_rows = FeatureRows::from_grids(&world.eval)?;
        let gen_rows = reencoded_features(&gen_grids, &decoder.params, world)?;
        if wants("gfid") {
            push("gfid", frechet_distance(&gen_rows, &real_rows)?);
        }
        if wants("precision") || wants("recall") {
            let a = stride_subsample(&real_rows, cfg.eval.pr_subsample);
            let b = stride_subsample(&gen_rows, cfg.eval.pr_subsample);
            let (p, r) = precision_recall(&a, &b, cfg.eval.knn_k)?;
            if wants("precision") {
                push("precision", p);
            }
            if wants("recall") {
                push("recall", r);
            }
        }
        if wants("psnr") || wants("ssim") || wants("rfid") {
            let count = world.eval.len().min(64);
            let mut psnr_acc = 0.0;
            let mut ssim_acc = 0.0;
            let mut recon_rows = FeatureRows::new(world.section.dim);
            for i in 0..count {
                let grid = space.apply(&world.eval[i])?;
                let recon = decode(&grid, &decoder.params)?;
                let img = world.eval_images[i].image();
                psnr_acc += psnr(recon.pixels(), img.pixels())?;
                ssim_acc += ssim(recon.pixels(), img.pixels(), img.size(), img.size(), 3)?;
                let re = world.encoder.encode(&recon)?;
                for token in re.tokens() {
                    recon_rows.push_row(token);
                }
            }
            if wants("psnr") {
                push("psnr", psnr_acc / count as f64);
            }
            if wants("ssim") {
                push("ssim", ssim_acc / count as f64);
            }
            if wants("rfid") {
                let real_sub = FeatureRows::from_grids(&world.eval[..count])?;
                push("rfid", frechet_distance(&recon_rows, &real_sub)?);
            }
        }
    }
    Ok((generated, metrics))
}

/// Evaluation-only outcome (no training state to return).
pub struct EvalOutcome {
    pub run_id: String,
    pub metrics: Vec<MetricsRow>,
    pub artifacts: Vec<PathBuf>,
}

/// Re-evaluates stored weights: generates a fresh corpus under the config's
/// seed and scores it, writing a metrics CSV when `out_dir` is given.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    tensors: &[(String, tensor_core::Tensor)],
    out_dir: Option<&Path>,
    progress: &dyn Progress,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let run_id = cfg.run_id();
    let world = world_bundle(&cfg.world)?;
    let space = DecoderSpace::from_normalize_flag(cfg.training.normalize);
    let wants = |m: &str| cfg.eval.metrics.iter().any(|x| x == m);
    let needs_decoder = ["gfid", "precision", "recall", "psnr", "ssim", "rfid"]
        .iter()
        .any(|m| wants(m));
    let decoder = if needs_decoder {
        Some(decoder_for(&world, &cfg.decoder, space)?)
    } else {
        None
    };
    let (backbone, head, schedule) = restore_models(cfg, tensors)?;
    let (_, metrics) = generate_and_evaluate(
        cfg,
        &world,
        decoder.as_deref(),
        &backbone,
        &head,
        &schedule,
        &run_id,
        progress,
    )?;
    let mut artifacts = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| ExperimentError::io(dir.display().to_string(), e))?;
        let path = dir.join("metrics.csv");
        write_text(&path, &metrics_csv(&metrics))?;
        artifacts.push(path);
    }
    Ok(EvalOutcome {
        run_id,
        metrics,
        artifacts,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path.display().to_string(), e))
}

fn write_checkpoint(
    cfg: &ExperimentConfig,
    backbone: &BackboneParams,
    head: &DenoiserParams,
    step: u64,
    dir: &Path,
    name: &str,
) -> Result<PathBuf> {
    let mut tensors: Vec<(String, tensor_core::Tensor)> = Vec::new();
    for (n, t) in backbone.set().iter() {
        tensors.push((n.to_string(), t.clone()));
    }
    for (n, t) in head.set().iter() {
        tensors.push((n.to_string(), t.clone()));
    }
    let path = dir.join(name);
    save_checkpoint(&tensors, &cfg.to_toml(), step, &path)?;
    Ok(path)
}

/// Rebuilds backbone/head parameter sets from a checkpoint's tensor table.
pub fn restore_models(
    cfg: &ExperimentConfig,
    tensors: &[(String, tensor_core::Tensor)],
) -> Result<(BackboneParams, DenoiserParams, DiffusionSchedule)> {
    let bb_cfg = backbone_config(cfg)?;
    let mut backbone = BackboneParams::init(bb_cfg.clone(), fold_seed(cfg.seed, "bb-init", 0))?;
    let mut head = DenoiserParams::init(
        DenoiserConfig {
            token_dim: cfg.world.dim,
            cond_dim: bb_cfg.cond_dim(),
            width: cfg.model.denoiser_width,
            blocks: cfg.model.denoiser_blocks,
            t_max: cfg.model.timesteps,
        },
        fold_seed(cfg.seed, "head-init", 0),
    );
    let bb_entries: Vec<(String, tensor_core::Tensor)> = tensors
        .iter()
        .filter(|(n, _)| n.starts_with("bb."))
        .cloned()
        .collect();
    let head_entries: Vec<(String, tensor_core::Tensor)> = tensors
        .iter()
        .filter(|(n, _)| n.starts_with("head."))
        .cloned()
        .collect();
    backbone.set_mut().load(&bb_entries)?;
    head.set_mut().load(&head_entries)?;
    let schedule = build_schedule(cfg)?;
    Ok((backbone, head, schedule))
}

/// One full run per α with shared data and seeds.
pub struct SweepOutcome {
    pub rows: Vec<(f32, String, f64)>,
    pub outcomes: Vec<RunOutcome>,
    pub artifacts: Vec<PathBuf>,
}

pub fn run_sweep(
    base: &ExperimentConfig,
    alphas: &[f32],
    out_dir: Option<&Path>,
    progress: &dyn Progress,
) -> Result<SweepOutcome> {
    if alphas.is_empty() {
        return Err(ExperimentError::Config("empty alpha list".to_string()));
    }
    if alphas.iter().any(|&a| a < 0.0) {
        return Err(ExperimentError::Config(
            "alpha values must be non-negative".to_string(),
        ));
    }
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut artifacts = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.training.alpha = alpha;
        let sub = out_dir.map(|d| d.join(format!("alpha-{alpha:.3}")));
        progress.update("sweep", i, alphas.len());
        let outcome = run_experiment(&cfg, sub.as_deref(), progress)?;
        for m in &outcome.metrics {
            rows.push((alpha, m.metric.clone(), m.value));
        }
        artifacts.extend(outcome.artifacts.iter().cloned());
        outcomes.push(outcome);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| ExperimentError::io(dir.display().to_string(), e))?;
        let path = dir.join("sweep.csv");
        write_text(&path, &sweep_csv(&rows))?;
        artifacts.push(path);
    }
    Ok(SweepOutcome {
        rows,
        outcomes,
        artifacts,
    })
}

/// The four ablation strategies of the norm/noise grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStrategy {
    Baseline,
    Norm,
    Noise,
    NormNoise,
}

impl CellStrategy {
    pub const ALL: [CellStrategy; 4] = [
        CellStrategy::Baseline,
        CellStrategy::Norm,
        CellStrategy::Noise,
        CellStrategy::NormNoise,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CellStrategy::Baseline => "baseline",
            CellStrategy::Norm => "norm",
            CellStrategy::Noise => "noise",
            CellStrategy::NormNoise => "norm_noise",
        }
    }

    /// Applies the strategy to a base config; the base config's alpha is
    /// the noise level used by the noise-bearing cells.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            CellStrategy::Baseline => {
                cfg.training.normalize = false;
                cfg.training.alpha = 0.0;
            }
            CellStrategy::Norm => {
                cfg.training.normalize = true;
                cfg.training.alpha = 0.0;
            }
            CellStrategy::Noise => {
                cfg.training.normalize = false;
            }
            CellStrategy::NormNoise => {
                cfg.training.normalize = true;
            }
        }
        cfg
    }
}

impl std::str::FromStr for CellStrategy {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(CellStrategy::Baseline),
            "norm" => Ok(CellStrategy::Norm),
            "noise" => Ok(CellStrategy::Noise),
            "norm_noise" | "norm+noise" => Ok(CellStrategy::NormNoise),
            other => Err(ExperimentError::Config(format!(
                "unknown cell strategy {other:?}"
            ))),
        }
    }
}

pub struct GridOutcome {
    pub cells: Vec<(CellStrategy, u64, RunOutcome)>,
    pub artifacts: Vec<PathBuf>,
}

/// Ablation grid: strategies × seeds, each cell in its own subdirectory,
/// plus combined metrics and loss-curve tables.
pub fn run_grid(
    base: &ExperimentConfig,
    strategies: &[CellStrategy],
    seeds: &[u64],
    out_dir: Option<&Path>,
    progress: &dyn Progress,
) -> Result<GridOutcome> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(ExperimentError::Config(
            "grid needs at least one strategy and one seed".to_string(),
        ));
    }
    let mut cells = Vec::new();
    let mut artifacts = Vec::new();
    let total = strategies.len() * seeds.len();
    for (i, &strategy) in strategies.iter().enumerate() {
        for (j, &seed) in seeds.iter().enumerate() {
            let mut cfg = strategy.apply(base);
            cfg.seed = seed;
            let sub = out_dir.map(|d| d.join(format!("cell-{}-s{seed}", strategy.name())));
            progress.update("grid", i * seeds.len() + j, total);
            let outcome = run_experiment(&cfg, sub.as_deref(), progress)?;
            artifacts.extend(outcome.artifacts.iter().cloned());
            cells.push((strategy, seed, outcome));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| ExperimentError::io(dir.display().to_string(), e))?;
        let mut all_rows = Vec::new();
        for (_, _, outcome) in &cells {
            all_rows.extend(outcome.metrics.iter().cloned());
        }
        let grid_path = dir.join("grid.csv");
        write_text(&grid_path, &metrics_csv(&all_rows))?;
        artifacts.push(grid_path);
        let series: Vec<(String, Vec<(f64, f64)>)> = cells
            .iter()
            .map(|(strategy, seed, outcome)| {
                (
                    format!("{}-s{seed}", strategy.name()),
                    outcome
                        .loss_curve
                        .iter()
                        .map(|&(s, l)| (s as f64, l))
                        .collect(),
                )
            })
            .collect();
        let curves_path = dir.join("loss_curves.csv");
        write_text(&curves_path, &multi_series_csv(("step", "value"), &series))?;
        artifacts.push(curves_path);
    }
    Ok(GridOutcome { cells, artifacts })
}
