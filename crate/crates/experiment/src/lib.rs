//! Experiment orchestration for the token-generation lab.
//!
//! Everything an experiment needs above the model crates: TOML configs with
//! strict parsing, a deterministic run/sweep/grid driver, the binary
//! checkpoint and latent-dump container, long-form CSV metrics, and an SVG
//! plot emitter. All artifacts are byte-reproducible for a given config and
//! seed on one platform.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod plot;
pub mod runner;
pub mod world;

pub use checkpoint::{
    load_checkpoint, load_latent_dump, save_checkpoint, save_latent_dump, Checkpoint,
};
pub use config::{
    DecoderSection, EvalSection, ExperimentConfig, GenerationSection, ModelSection,
    ScheduleName, TrainingSection, WorldSection,
};
pub use csv::{
    loss_curve_csv, metrics_csv, multi_series_csv, parse_csv, sweep_csv, CsvTable,
    METRICS_HEADER,
};
pub use plot::{emit_plot, plot_string, PlotKind};
pub use runner::{
    evaluate_checkpoint, restore_models, run_experiment, run_grid, run_sweep, sample_corpus,
    CellStrategy, EvalOutcome, GridOutcome, NoProgress, Progress, RunOutcome, SweepOutcome,
};
pub use world::{decoder_for, world_bundle, DecoderSpace, WorldBundle};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    World(#[from] latent_world::WorldError),

    #[error(transparent)]
    Ar(#[from] ar_backbone::ArError),

    #[error(transparent)]
    Diffusion(#[from] diffusion_head::DiffusionError),

    #[error(transparent)]
    Eval(#[from] eval_bench::EvalError),

    #[error(transparent)]
    Stats(#[from] token_stats::StatsError),

    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
}

impl ExperimentError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.into(),
            source,
        }
    }
}
