use crate::frechet::{frechet_distance, frechet_distance_diagonal, FeatureRows};
use crate::{EvalError, Result};
use ar_backbone::{generate, BackboneParams, GenerationConfig};
use diffusion_head::{DenoiserParams, DiffusionSchedule};
use token_stats::LatentGrid;

/// Per-position distance between free-running generations and the data
/// distribution.
#[derive(Clone, Debug)]
pub struct DriftCurve {
    pub values: Vec<f64>,
}

impl DriftCurve {
    /// Area under the curve (plain sum over positions).
    pub fn auc(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DriftOptions {
    /// Free-running rollouts per seed; seeds.len() · rollouts must be ≥ 500.
    pub rollouts_per_seed: usize,
    /// Sampler steps per token during rollouts.
    pub sampler_steps: usize,
    /// Unmasking rounds when the backbone is mask-based.
    pub mask_rounds: usize,
}

const MIN_ROLLOUTS: usize = 500;

/// Exposure-drift curve: for each position i, the Fréchet distance between
/// the tokens generated at position i across free-running rollouts and the
/// ground-truth tokens at position i across the corpus, averaged over
/// seeds. Falls back to the diagonal-covariance distance unless at least
/// 10·d rollouts support a full covariance fit.
pub fn exposure_drift(
    params: &BackboneParams,
    head: &DenoiserParams,
    schedule: &DiffusionSchedule,
    corpus: &[LatentGrid],
    seeds: &[u64],
    opts: &DriftOptions,
) -> Result<DriftCurve> {
    let cfg = params.cfg();
    let n = cfg.n_tokens();
    let d = cfg.token_dim;
    if seeds.is_empty() {
        return Err(EvalError::contract("no seeds".to_string()));
    }
    if seeds.len() * opts.rollouts_per_seed < MIN_ROLLOUTS {
        return Err(EvalError::contract(format!(
            "{} seeds x {} rollouts < required {MIN_ROLLOUTS}",
            seeds.len(),
            opts.rollouts_per_seed
        )));
    }
    if corpus.len() < d + 1 || corpus.len() < 2 {
        return Err(EvalError::contract(format!(
            "corpus of {} grids too small for dim {d}",
            corpus.len()
        )));
    }
    if corpus
        .iter()
        .any(|g| g.n_tokens() != n || g.dim() != d)
    {
        return Err(EvalError::contract("corpus geometry mismatch".to_string()));
    }

    let full_cov = opts.rollouts_per_seed >= 10 * d && corpus.len() >= 10 * d;

    // Ground-truth rows per position, shared across seeds.
    let mut truth: Vec<FeatureRows> = (0..n).map(|_| FeatureRows::new(d)).collect();
    for grid in corpus {
        for (pos, row) in grid.tokens().enumerate() {
            truth[pos].push_row(row);
        }
    }

    let mut curve = vec![0.0f64; n];
    for &seed in seeds {
        let mut generated: Vec<FeatureRows> = (0..n).map(|_| FeatureRows::new(d)).collect();
        for r in 0..opts.rollouts_per_seed {
            let gen_cfg = GenerationConfig {
                class_id: r % cfg.class_count,
                steps: opts.sampler_steps,
                mask_rounds: opts.mask_rounds,
                seed: seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(r as u64),
            };
            let grid = generate(params, head, schedule, &gen_cfg)?;
            for (pos, row) in grid.tokens().enumerate() {
                generated[pos].push_row(row);
            }
        }
        for pos in 0..n {
            let dist = if full_cov {
                frechet_distance(&generated[pos], &truth[pos])?
            } else {
                frechet_distance_diagonal(&generated[pos], &truth[pos])?
            };
            curve[pos] += dist;
        }
    }
    for v in curve.iter_mut() {
        *v /= seeds.len() as f64;
    }
    Ok(DriftCurve { values: curve })
}
