//! Wire types of the lab server's JSON API. The server depends on these
//! definitions, so client and server cannot drift apart.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub workers: usize,
}

/// What a job should do. `config` is always the full experiment TOML text;
/// the server parses and validates it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JobRequest {
    /// Full experiment: train, generate, evaluate.
    Train {
        config: String,
        out: String,
        #[serde(default)]
        seed_override: Option<u64>,
    },
    /// Train only the world's decoder.
    TrainDecoder { config: String, out: String },
    /// One full run per alpha with shared data and seeds.
    Sweep {
        config: String,
        out: String,
        alphas: Vec<f32>,
    },
    /// Strategies × seeds ablation grid.
    Grid {
        config: String,
        out: String,
        strategies: Vec<String>,
        seeds: Vec<u64>,
    },
    /// Sample a latent corpus from a checkpoint.
    Sample {
        checkpoint: String,
        out: String,
        count: usize,
        seed: u64,
    },
    /// Re-evaluate a checkpoint: generate a corpus and score it.
    Eval {
        checkpoint: String,
        out: String,
        #[serde(default)]
        seed_override: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub kind: String,
    pub phase: String,
    pub done: usize,
    pub total: usize,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub metrics: Vec<MetricRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub profile: String,
    pub mode: String,
    pub alpha: f32,
    pub norm: bool,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrateRequest {
    pub profile: String,
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub classes: usize,
    pub corpus: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrateResponse {
    pub profile: String,
    pub achieved_a: f64,
    pub achieved_b: f64,
    pub achieved_c: f64,
    pub target_a: f64,
    pub target_b: f64,
    pub target_c: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotRequest {
    /// CSV path relative to the server root.
    pub csv: String,
    /// loss-curve | sweep-curve | drift-curve | heatmap
    pub kind: String,
    /// SVG output path relative to the server root.
    pub out: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotResponse {
    pub svg: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
