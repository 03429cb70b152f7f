use crate::grid::LatentGrid;
use crate::{Result, StatsError};

/// Floor applied to per-token standard deviations so degenerate (constant)
/// tokens normalize to zeros instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-6;

/// Corpus-level token statistics: (a) spatial mean of the mean-map,
/// (b) spatial mean of the var-map, (c) spatial variance of the var-map
/// (the token-variance diagnostic).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenStatsSummary {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Per-token statistics removed by [`normalize_tokens`], kept so the
/// transform can be inverted for analysis.
#[derive(Clone, Debug)]
pub struct NormalizationRecord {
    means: Vec<f32>,
    stds: Vec<f32>,
    floored: Vec<bool>,
}

impl NormalizationRecord {
    pub fn n_tokens(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, i: usize) -> f32 {
        self.means[i]
    }

    pub fn std(&self, i: usize) -> f32 {
        self.stds[i]
    }

    /// Tokens whose standard deviation hit the epsilon floor.
    pub fn floored_tokens(&self) -> Vec<usize> {
        self.floored
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn any_floored(&self) -> bool {
        self.floored.iter().any(|&f| f)
    }
}

/// Mean of each token along the channel dimension.
pub fn mean_map(grid: &LatentGrid) -> Vec<f64> {
    let d = grid.dim() as f64;
    grid.tokens()
        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() / d)
        .collect()
}

/// Population variance of each token along the channel dimension.
/// Requires d >= 2.
pub fn var_map(grid: &LatentGrid) -> Result<Vec<f64>> {
    if grid.dim() < 2 {
        return Err(StatsError::contract(format!(
            "var_map needs dim >= 2, got {}",
            grid.dim()
        )));
    }
    let d = grid.dim() as f64;
    Ok(grid
        .tokens()
        .map(|row| {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d;
            row.iter()
                .map(|&v| {
                    let c = v as f64 - mean;
                    c * c
                })
                .sum::<f64>()
                / d
        })
        .collect())
}

/// Statistics (a), (b), (c) over a corpus of grids: means of mean-map and
/// var-map entries, and the population variance of var-map entries, pooled
/// over positions and samples.
pub fn summary_stats(corpus: &[LatentGrid]) -> Result<TokenStatsSummary> {
    if corpus.is_empty() {
        return Err(StatsError::contract("summary_stats over an empty corpus"));
    }
    let dim = corpus[0].dim();
    let side = corpus[0].grid_side();
    if corpus
        .iter()
        .any(|g| g.dim() != dim || g.grid_side() != side)
    {
        return Err(StatsError::Geometry(
            "corpus mixes grid geometries".to_string(),
        ));
    }

    let mut mean_sum = 0.0;
    let mut var_sum = 0.0;
    let mut var_sq_sum = 0.0;
    let mut count = 0usize;
    for grid in corpus {
        for m in mean_map(grid) {
            mean_sum += m;
        }
        for v in var_map(grid)? {
            var_sum += v;
            var_sq_sum += v * v;
        }
        count += grid.n_tokens();
    }
    let n = count as f64;
    let a = mean_sum / n;
    let b = var_sum / n;
    let c = (var_sq_sum / n - b * b).max(0.0);
    Ok(TokenStatsSummary { a, b, c })
}

/// Per-token instance normalization across channels: every output token has
/// channel mean 0 and population variance 1 (up to the std floor). The
/// removed statistics are returned for the inverse transform.
pub fn normalize_tokens(grid: &LatentGrid) -> Result<(LatentGrid, NormalizationRecord)> {
    if grid.dim() < 2 {
        return Err(StatsError::contract(format!(
            "normalize_tokens needs dim >= 2, got {}",
            grid.dim()
        )));
    }
    let d = grid.dim() as f64;
    let mut out = Vec::with_capacity(grid.data().len());
    let mut means = Vec::with_capacity(grid.n_tokens());
    let mut stds = Vec::with_capacity(grid.n_tokens());
    let mut floored = Vec::with_capacity(grid.n_tokens());
    for row in grid.tokens() {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d;
        let var = row
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / d;
        let raw_std = var.sqrt();
        let hit_floor = raw_std < STD_FLOOR;
        let std = if hit_floor { STD_FLOOR } else { raw_std };
        for &v in row {
            out.push(((v as f64 - mean) / std) as f32);
        }
        means.push(mean as f32);
        stds.push(std as f32);
        floored.push(hit_floor);
    }
    let normalized = LatentGrid::new(grid.grid_side(), grid.dim(), out)?;
    Ok((
        normalized,
        NormalizationRecord {
            means,
            stds,
            floored,
        },
    ))
}

/// Inverse of [`normalize_tokens`]: `x·σ + μ` per token. Analysis helper;
/// generation pipelines stay in the normalized space.
pub fn denormalize_tokens(
    normalized: &LatentGrid,
    record: &NormalizationRecord,
) -> Result<LatentGrid> {
    if record.n_tokens() != normalized.n_tokens() {
        return Err(StatsError::Geometry(format!(
            "record covers {} tokens, grid has {}",
            record.n_tokens(),
            normalized.n_tokens()
        )));
    }
    let mut out = Vec::with_capacity(normalized.data().len());
    for (i, row) in normalized.tokens().enumerate() {
        let mean = record.means[i] as f64;
        let std = record.stds[i] as f64;
        for &v in row {
            out.push((v as f64 * std + mean) as f32);
        }
    }
    LatentGrid::new(normalized.grid_side(), normalized.dim(), out)
}
