//! The lab service: a tokio + axum HTTP server exposing the experiment
//! drivers as a small job queue plus a few synchronous endpoints.
//!
//! Jobs (train / train-decoder / sweep / grid / sample / eval) are queued
//! and executed by a fixed pool of blocking workers — grid cells and runs
//! are independent, so the worker count (`ARLAB_WORKERS`) is the only
//! shared-state knob. Compute stays deterministic per job regardless of
//! worker interleaving: nothing is shared across jobs but the process-wide
//! world cache, whose entries are themselves deterministic.

mod jobs;
mod routes;

pub use jobs::{JobRecord, JobTable};
pub use routes::router;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

pub const WORKERS_ENV: &str = "ARLAB_WORKERS";

pub struct AppState {
    pub root: PathBuf,
    pub jobs: Mutex<JobTable>,
    pub next_id: AtomicU64,
    pub queue: mpsc::UnboundedSender<u64>,
    pub workers: usize,
}

pub type SharedState = Arc<AppState>;

/// Builds the application state and spawns the worker pool onto the current
/// tokio runtime.
pub fn spawn_app(root: PathBuf, workers: usize) -> SharedState {
    let (tx, rx) = mpsc::unbounded_channel::<u64>();
    let state = Arc::new(AppState {
        root,
        jobs: Mutex::new(JobTable::default()),
        next_id: AtomicU64::new(1),
        queue: tx,
        workers,
    });
    jobs::spawn_workers(state.clone(), rx, workers);
    state
}

pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Binds and serves until the socket is closed. Returns the actual bound
/// address before serving via the `on_bound` callback.
pub async fn serve(
    addr: SocketAddr,
    root: PathBuf,
    workers: usize,
    on_bound: impl FnOnce(SocketAddr),
) -> anyhow::Result<()> {
    let state = spawn_app(root, workers);
    let app = router(state);
    let listener = TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
