//! `arlab` — command-line client for the lab service.
//!
//! Every verb except `serve` talks HTTP to a lab server. With `--server`
//! the verb targets a running instance; without it an ephemeral in-process
//! server is spawned on a loopback port, rooted at the current directory,
//! so single-machine usage needs no separate daemon.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use lab_client::api::{CalibrateRequest, JobRequest, JobStatus, PlotRequest};
use lab_client::LabClient;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "arlab", version, about = "desk-scale continuous autoregressive token lab")]
struct Cli {
    /// Lab server URL; omit to run against an ephemeral in-process server
    /// rooted at the current directory.
    #[arg(long, global = true)]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the lab server in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8023")]
        addr: SocketAddr,
        /// Directory all job outputs and artifact paths are rooted at.
        #[arg(long, default_value = ".")]
        root: PathBuf,
    },
    /// Calibrate an encoder statistics profile and print the achieved values.
    Calibrate {
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 8)]
        patch: usize,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        corpus: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Train the world decoder for a config.
    TrainDecoder {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: String,
    },
    /// Full experiment: train, generate, evaluate.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: String,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Sample a latent corpus from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        out: String,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Re-evaluate a checkpoint (fresh generation + metrics).
    Eval {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        out: String,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// One full run per noise level α.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: String,
        /// Comma-separated α list.
        #[arg(long, default_value = "0.0,0.05,0.1,0.2,0.3,0.5")]
        alphas: String,
    },
    /// Strategies × seeds ablation grid.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: String,
        /// Comma-separated strategies (baseline,norm,noise,norm_noise).
        #[arg(long, default_value = "baseline,norm,noise,norm_noise")]
        cells: String,
        /// Run only this cell strategy (overrides --cells).
        #[arg(long)]
        cell: Option<String>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
    },
    /// Render a CSV into an SVG plot.
    Plot {
        #[arg(long)]
        csv: String,
        /// loss-curve | sweep-curve | drift-curve | heatmap
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: String,
    },
}

/// Ephemeral in-process server, kept alive for the CLI invocation.
struct Ephemeral {
    url: String,
    _runtime: tokio::runtime::Runtime,
}

fn spawn_ephemeral() -> anyhow::Result<Ephemeral> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    let root = std::env::current_dir()?;
    let workers = lab_server::workers_from_env();
    runtime.spawn(async move {
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        if let Err(e) = lab_server::serve(addr, root, workers, move |bound| {
            let _ = tx.send(bound);
        })
        .await
        {
            eprintln!("ephemeral server stopped: {e}");
        }
    });
    let bound = rx
        .recv_timeout(Duration::from_secs(10))
        .context("ephemeral server did not come up")?;
    Ok(Ephemeral {
        url: format!("http://{bound}"),
        _runtime: runtime,
    })
}

fn connect(server: &Option<String>) -> anyhow::Result<(LabClient, Option<Ephemeral>)> {
    match server {
        Some(url) => Ok((LabClient::new(url.clone()), None)),
        None => {
            let eph = spawn_ephemeral()?;
            Ok((LabClient::new(eph.url.clone()), Some(eph)))
        }
    }
}

fn print_progress(status: &JobStatus) {
    if status.total > 0 {
        eprintln!(
            "[job {}] {} {}/{}",
            status.id, status.phase, status.done, status.total
        );
    }
}

fn run_job(client: &LabClient, request: JobRequest) -> anyhow::Result<JobStatus> {
    let id = client.submit(&request)?;
    let mut last = String::new();
    let status = client.wait(id, Duration::from_millis(300), |s| {
        let line = format!("{}:{}/{}", s.phase, s.done, s.total);
        if line != last && s.total > 0 {
            print_progress(s);
            last = line;
        }
    })?;
    for path in &status.artifacts {
        println!("{path}");
    }
    Ok(status)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| anyhow::anyhow!("bad {what} entry {s:?}"))
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();

    if let Command::Serve { addr, root } = &cli.command {
        let workers = lab_server::workers_from_env();
        let runtime = tokio::runtime::Runtime::new()?;
        return runtime.block_on(lab_server::serve(
            *addr,
            root.clone(),
            workers,
            |bound| println!("lab server listening on http://{bound} ({workers} workers)"),
        ));
    }

    let (client, _ephemeral) = connect(&cli.server)?;

    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Calibrate {
            profile,
            dim,
            image_size,
            patch,
            classes,
            corpus,
            seed,
        } => {
            let resp = client.calibrate(&CalibrateRequest {
                profile,
                image_size,
                patch,
                dim,
                classes,
                corpus,
                seed,
            })?;
            println!(
                "profile {}: a = {:.4} (target {:.4}), b = {:.4} (target {:.4}), c = {:.4} (target {:.4}), {} iterations",
                resp.profile,
                resp.achieved_a,
                resp.target_a,
                resp.achieved_b,
                resp.target_b,
                resp.achieved_c,
                resp.target_c,
                resp.iterations
            );
        }
        Command::TrainDecoder { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            run_job(&client, JobRequest::TrainDecoder { config: text, out })?;
        }
        Command::Train {
            config,
            out,
            seed_override,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let status = run_job(
                &client,
                JobRequest::Train {
                    config: text,
                    out,
                    seed_override,
                },
            )?;
            for m in &status.metrics {
                println!("{} = {:.6}", m.metric, m.value);
            }
        }
        Command::Sample {
            checkpoint,
            out,
            count,
            seed,
        } => {
            run_job(
                &client,
                JobRequest::Sample {
                    checkpoint,
                    out,
                    count,
                    seed,
                },
            )?;
        }
        Command::Eval {
            checkpoint,
            out,
            seed_override,
        } => {
            let status = run_job(
                &client,
                JobRequest::Eval {
                    checkpoint,
                    out,
                    seed_override,
                },
            )?;
            for m in &status.metrics {
                println!("{} = {:.6}", m.metric, m.value);
            }
        }
        Command::Sweep { config, out, alphas } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let alphas: Vec<f32> = parse_list(&alphas, "alpha")?;
            run_job(
                &client,
                JobRequest::Sweep {
                    config: text,
                    out,
                    alphas,
                },
            )?;
        }
        Command::Grid {
            config,
            out,
            cells,
            cell,
            seeds,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let strategies: Vec<String> = match cell {
                Some(one) => vec![one],
                None => parse_list(&cells, "cell")?,
            };
            if strategies.is_empty() {
                bail!("no cells selected");
            }
            let seeds: Vec<u64> = parse_list(&seeds, "seed")?;
            run_job(
                &client,
                JobRequest::Grid {
                    config: text,
                    out,
                    strategies,
                    seeds,
                },
            )?;
        }
        Command::Plot { csv, kind, out } => {
            let resp = client.plot(&PlotRequest { csv, kind, out })?;
            println!("{}", resp.svg);
        }
    }
    Ok(())
}
