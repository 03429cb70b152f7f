use crate::SharedState;
use experiment::{
    decoder_for, load_checkpoint, restore_models, run_experiment, run_grid, run_sweep,
    sample_corpus, save_latent_dump, CellStrategy, DecoderSpace, ExperimentConfig, Progress,
};
use lab_client::api::{JobRequest, JobState, JobStatus, MetricRow};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use tokio::sync::mpsc;

#[derive(Clone, Debug)]
pub struct JobRecord {
    pub id: u64,
    pub request: JobRequest,
    pub state: JobState,
    pub phase: String,
    pub done: usize,
    pub total: usize,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    pub metrics: Vec<MetricRow>,
}

impl JobRecord {
    pub fn status(&self) -> JobStatus {
        JobStatus {
            id: self.id,
            state: self.state,
            kind: kind_name(&self.request).to_string(),
            phase: self.phase.clone(),
            done: self.done,
            total: self.total,
            error: self.error.clone(),
            artifacts: self.artifacts.clone(),
            metrics: self.metrics.clone(),
        }
    }
}

fn kind_name(req: &JobRequest) -> &'static str {
    match req {
        JobRequest::Train { .. } => "train",
        JobRequest::TrainDecoder { .. } => "train-decoder",
        JobRequest::Sweep { .. } => "sweep",
        JobRequest::Grid { .. } => "grid",
        JobRequest::Sample { .. } => "sample",
        JobRequest::Eval { .. } => "eval",
    }
}

#[derive(Default)]
pub struct JobTable {
    pub records: HashMap<u64, JobRecord>,
}

pub fn spawn_workers(
    state: SharedState,
    rx: mpsc::UnboundedReceiver<u64>,
    workers: usize,
) {
    let rx = std::sync::Arc::new(tokio::sync::Mutex::new(rx));
    for _ in 0..workers.max(1) {
        let state = state.clone();
        let rx = rx.clone();
        tokio::spawn(async move {
            loop {
                let id = {
                    let mut guard = rx.lock().await;
                    match guard.recv().await {
                        Some(id) => id,
                        None => break,
                    }
                };
                let state_for_job = state.clone();
                let result =
                    tokio::task::spawn_blocking(move || execute(state_for_job, id)).await;
                let mut jobs = state.jobs.lock().unwrap();
                if let Some(record) = jobs.records.get_mut(&id) {
                    match result {
                        Ok(Ok(())) => record.state = JobState::Done,
                        Ok(Err(err)) => {
                            record.state = JobState::Failed;
                            record.error = Some(err.to_string());
                        }
                        Err(join_err) => {
                            record.state = JobState::Failed;
                            record.error = Some(format!("worker panicked: {join_err}"));
                        }
                    }
                }
            }
        });
    }
}

pub fn enqueue(state: &SharedState, request: JobRequest) -> u64 {
    let id = state.next_id.fetch_add(1, Ordering::SeqCst);
    let record = JobRecord {
        id,
        request,
        state: JobState::Queued,
        phase: "queued".to_string(),
        done: 0,
        total: 0,
        error: None,
        artifacts: Vec::new(),
        metrics: Vec::new(),
    };
    state.jobs.lock().unwrap().records.insert(id, record);
    let _ = state.queue.send(id);
    id
}

struct JobProgress {
    state: SharedState,
    id: u64,
}

impl Progress for JobProgress {
    fn update(&self, phase: &str, done: usize, total: usize) {
        let mut jobs = self.state.jobs.lock().unwrap();
        if let Some(record) = jobs.records.get_mut(&self.id) {
            record.phase = phase.to_string();
            record.done = done;
            record.total = total;
        }
    }
}

fn relative_artifacts(root: &Path, paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.strip_prefix(root)
                .unwrap_or(p)
                .to_string_lossy()
                .to_string()
        })
        .collect()
}

fn to_metric_rows(metrics: &[eval_bench::MetricsRow]) -> Vec<MetricRow> {
    metrics
        .iter()
        .map(|m| MetricRow {
            run_id: m.run_id.clone(),
            profile: m.profile.clone(),
            mode: m.mode.clone(),
            alpha: m.alpha,
            norm: m.norm,
            seed: m.seed,
            metric: m.metric.clone(),
            value: m.value,
        })
        .collect()
}

/// Resolves an output path under the server root, rejecting escapes.
fn resolve_out(root: &Path, rel: &str) -> anyhow::Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        anyhow::bail!("output path must be relative to the server root, got {rel:?}");
    }
    Ok(root.join(p))
}

fn execute(state: SharedState, id: u64) -> anyhow::Result<()> {
    let request = {
        let mut jobs = state.jobs.lock().unwrap();
        let record = jobs
            .records
            .get_mut(&id)
            .ok_or_else(|| anyhow::anyhow!("job {id} vanished"))?;
        record.state = JobState::Running;
        record.phase = "starting".to_string();
        record.request.clone()
    };
    let progress = JobProgress {
        state: state.clone(),
        id,
    };
    let root = state.root.clone();

    let (artifacts, metrics) = match request {
        JobRequest::Train {
            config,
            out,
            seed_override,
        } => {
            let mut cfg = ExperimentConfig::from_toml(&config)?;
            if let Some(seed) = seed_override {
                cfg.seed = seed;
            }
            let out_dir = resolve_out(&root, &out)?;
            let outcome = run_experiment(&cfg, Some(&out_dir), &progress)?;
            (outcome.artifacts, outcome.metrics)
        }
        JobRequest::TrainDecoder { config, out } => {
            let cfg = ExperimentConfig::from_toml(&config)?;
            let out_dir = resolve_out(&root, &out)?;
            std::fs::create_dir_all(&out_dir)?;
            let world = experiment::world_bundle(&cfg.world)?;
            let space = DecoderSpace::from_normalize_flag(cfg.training.normalize);
            let trained = decoder_for(&world, &cfg.decoder, space)?;
            let tensors: Vec<(String, tensor_core::Tensor)> = trained
                .params
                .set()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect();
            let path = out_dir.join("decoder.bin");
            experiment::save_checkpoint(
                &tensors,
                &cfg.to_toml(),
                cfg.decoder.epochs as u64,
                &path,
            )?;
            let summary = format!(
                "metric,value\nbaseline_l1,{:.6}\nfinal_l1,{:.6}\n",
                trained.baseline_l1, trained.final_l1
            );
            let csv_path = out_dir.join("decoder.csv");
            std::fs::write(&csv_path, summary)?;
            (vec![path, csv_path], Vec::new())
        }
        JobRequest::Sweep {
            config,
            out,
            alphas,
        } => {
            let cfg = ExperimentConfig::from_toml(&config)?;
            let out_dir = resolve_out(&root, &out)?;
            let outcome = run_sweep(&cfg, &alphas, Some(&out_dir), &progress)?;
            let metrics = outcome
                .outcomes
                .iter()
                .flat_map(|o| o.metrics.iter().cloned())
                .collect();
            (outcome.artifacts, metrics)
        }
        JobRequest::Grid {
            config,
            out,
            strategies,
            seeds,
        } => {
            let cfg = ExperimentConfig::from_toml(&config)?;
            let strategies: Vec<CellStrategy> = strategies
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()?;
            let out_dir = resolve_out(&root, &out)?;
            let outcome = run_grid(&cfg, &strategies, &seeds, Some(&out_dir), &progress)?;
            let metrics = outcome
                .cells
                .iter()
                .flat_map(|(_, _, o)| o.metrics.iter().cloned())
                .collect();
            (outcome.artifacts, metrics)
        }
        JobRequest::Sample {
            checkpoint,
            out,
            count,
            seed,
        } => {
            let ckpt_path = resolve_out(&root, &checkpoint)?;
            let ckpt = load_checkpoint(&ckpt_path)?;
            let cfg = ExperimentConfig::from_toml(&ckpt.config_text)?;
            let (backbone, head, schedule) = restore_models(&cfg, &ckpt.tensors)?;
            let grids = sample_corpus(
                &backbone,
                &head,
                &schedule,
                cfg.generation.sampler_steps,
                cfg.generation.mask_rounds,
                seed,
                count,
                &progress,
            )?;
            let out_dir = resolve_out(&root, &out)?;
            std::fs::create_dir_all(&out_dir)?;
            let manifest = format!(
                "kind = \"latent-dump\"\ncount = {count}\nseed = {seed}\nclasses = {}\nsource_checkpoint = {checkpoint:?}\n\n[encoder]\nprofile = \"{}\"\ndim = {}\npatch = {}\nworld_seed = {}\n",
                cfg.world.classes,
                cfg.world.profile,
                cfg.world.dim,
                cfg.world.patch,
                cfg.world.world_seed,
            );
            let dump_path = out_dir.join("latents.bin");
            save_latent_dump(&grids, &manifest, &dump_path)?;
            let manifest_path = out_dir.join("manifest.toml");
            std::fs::write(&manifest_path, &manifest)?;
            (vec![dump_path, manifest_path], Vec::new())
        }
        JobRequest::Eval {
            checkpoint,
            out,
            seed_override,
        } => {
            let ckpt_path = resolve_out(&root, &checkpoint)?;
            let ckpt = load_checkpoint(&ckpt_path)?;
            let mut cfg = ExperimentConfig::from_toml(&ckpt.config_text)?;
            if let Some(seed) = seed_override {
                cfg.seed = seed;
            }
            // Evaluation-only: no training steps, reuse the stored weights.
            let out_dir = resolve_out(&root, &out)?;
            std::fs::create_dir_all(&out_dir)?;
            let outcome =
                experiment::evaluate_checkpoint(&cfg, &ckpt.tensors, Some(&out_dir), &progress)?;
            (outcome.artifacts, outcome.metrics)
        }
    };

    let mut jobs = state.jobs.lock().unwrap();
    if let Some(record) = jobs.records.get_mut(&id) {
        record.artifacts = relative_artifacts(&root, &artifacts);
        record.metrics = to_metric_rows(&metrics);
        record.phase = "finished".to_string();
    }
    Ok(())
}
