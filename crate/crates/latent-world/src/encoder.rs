use crate::image::Image;
use crate::{Result, WorldError};
use serde::{Deserialize, Serialize};
use tensor_core::Rng;
use token_stats::LatentGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// tanh(gain·x); larger gains saturate harder and flatten the
    /// content-driven part of the var-map.
    Tanh { gain: f32 },
    Identity,
}

/// Frozen encoder definition. The random patch projection is derived from
/// `seed`; the shaping fields (per-channel offset/scale, per-position gain)
/// are what calibration adjusts to hit a statistics profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch: usize,
    pub dim: usize,
    pub seed: u64,
    pub nonlinearity: Nonlinearity,
    pub channel_offset: Vec<f32>,
    pub channel_scale: Vec<f32>,
    pub position_gain: Vec<f32>,
    /// Per-position constant added to every channel: shapes the spatial
    /// structure of the mean-map without touching the var-map. Zero-mean
    /// across positions so statistic (a) stays with the channel offsets.
    pub position_mean: Vec<f32>,
}

impl EncoderConfig {
    /// Neutral config: zero offset, unit scale, unit gains.
    pub fn neutral(
        patch: usize,
        dim: usize,
        grid_side: usize,
        seed: u64,
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(WorldError::contract(format!(
                "token dim must be >= 2, got {dim}"
            )));
        }
        if patch == 0 || grid_side == 0 {
            return Err(WorldError::contract(
                "patch and grid side must be positive".to_string(),
            ));
        }
        Ok(EncoderConfig {
            patch,
            dim,
            seed,
            nonlinearity,
            channel_offset: vec![0.0; dim],
            channel_scale: vec![1.0; dim],
            position_gain: vec![1.0; grid_side * grid_side],
            position_mean: vec![0.0; grid_side * grid_side],
        })
    }

    pub fn grid_side(&self) -> usize {
        (self.position_gain.len() as f64).sqrt() as usize
    }
}

/// Materialized frozen encoder: the random projection is drawn once.
pub struct FrozenEncoder {
    cfg: EncoderConfig,
    projection: Vec<f32>, // [dim, 3·p²]
}

impl FrozenEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        if cfg.channel_offset.len() != cfg.dim || cfg.channel_scale.len() != cfg.dim {
            return Err(WorldError::contract(
                "offset/scale fields must have token dim entries".to_string(),
            ));
        }
        let side = cfg.grid_side();
        if side * side != cfg.position_gain.len()
            || cfg.position_mean.len() != cfg.position_gain.len()
        {
            return Err(WorldError::contract(
                "position gain/mean fields must cover a square grid".to_string(),
            ));
        }
        let patch_len = 3 * cfg.patch * cfg.patch;
        let mut rng = Rng::derive(cfg.seed, "frozen-encoder", 0);
        let std = (1.0 / patch_len as f32).sqrt();
        let projection = (0..cfg.dim * patch_len)
            .map(|_| rng.normal_f32() * std)
            .collect();
        Ok(FrozenEncoder { cfg, projection })
    }

    pub fn cfg(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Encodes an image into its token grid. Pure in (image, config):
    /// identical inputs give bit-identical grids.
    pub fn encode(&self, image: &Image) -> Result<LatentGrid> {
        let p = self.cfg.patch;
        let d = self.cfg.dim;
        if image.size() % p != 0 {
            return Err(WorldError::contract(format!(
                "image side {} not divisible by patch {p}",
                image.size()
            )));
        }
        let side = image.size() / p;
        if side != self.cfg.grid_side() {
            return Err(WorldError::contract(format!(
                "config calibrated for grid side {}, image gives {side}",
                self.cfg.grid_side()
            )));
        }
        let patch_len = 3 * p * p;
        let mut data = Vec::with_capacity(side * side * d);
        let mut patch = vec![0.0f32; patch_len];
        let mut features = vec![0.0f32; d];
        for gy in 0..side {
            for gx in 0..side {
                // Centered patch values.
                let mut idx = 0;
                for py in 0..p {
                    let y = gy * p + py;
                    let row = &image.pixels()[(y * image.size() + gx * p) * 3..];
                    for px in 0..p {
                        for c in 0..3 {
                            patch[idx] = row[px * 3 + c] - 0.5;
                            idx += 1;
                        }
                    }
                }
                // Random projection then nonlinearity.
                for (k, f) in features.iter_mut().enumerate() {
                    let row = &self.projection[k * patch_len..(k + 1) * patch_len];
                    let mut acc = 0.0f32;
                    for (w, v) in row.iter().zip(&patch) {
                        acc += w * v;
                    }
                    *f = match self.cfg.nonlinearity {
                        Nonlinearity::Tanh { gain } => (gain * acc).tanh(),
                        Nonlinearity::Identity => acc,
                    };
                }
                // Exact per-token standardization of the features, so the
                // shaping fields fully control the token statistics.
                let mean = features.iter().sum::<f32>() / d as f32;
                let var = features
                    .iter()
                    .map(|&f| (f - mean) * (f - mean))
                    .sum::<f32>()
                    / d as f32;
                let inv_std = 1.0 / var.sqrt().max(1e-6);
                let gain = self.cfg.position_gain[gy * side + gx];
                let pos_mean = self.cfg.position_mean[gy * side + gx];
                for (k, &f) in features.iter().enumerate() {
                    let standardized = (f - mean) * inv_std;
                    data.push(
                        self.cfg.channel_offset[k]
                            + pos_mean
                            + gain * self.cfg.channel_scale[k] * standardized,
                    );
                }
            }
        }
        LatentGrid::new(side, d, data).map_err(Into::into)
    }
}

/// One-shot convenience wrapper around [`FrozenEncoder`].
pub fn frozen_encode(image: &Image, cfg: &EncoderConfig) -> Result<LatentGrid> {
    FrozenEncoder::new(cfg.clone())?.encode(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::synth_image;

    fn cfg(dim: usize, grid_side: usize) -> EncoderConfig {
        EncoderConfig::neutral(8, dim, grid_side, 42, Nonlinearity::Tanh { gain: 1.5 }).unwrap()
    }

    #[test]
    fn token_count_follows_patch_arithmetic() {
        let img = synth_image(1, 0, 32, 8).unwrap();
        let grid = frozen_encode(img.image(), &cfg(8, 4)).unwrap();
        assert_eq!(grid.n_tokens(), 16);
        assert_eq!(grid.dim(), 8);
    }

    #[test]
    fn rejects_indivisible_size() {
        let img = synth_image(1, 0, 36, 8).unwrap();
        // 36 not divisible by 8
        assert!(frozen_encode(img.image(), &cfg(8, 4)).is_err());
    }

    #[test]
    fn deterministic_encoding() {
        let img = synth_image(5, 2, 32, 8).unwrap();
        let c = cfg(16, 4);
        let a = frozen_encode(img.image(), &c).unwrap();
        let b = frozen_encode(img.image(), &c).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn uniform_gain_means_constant_var_map() {
        // With uniform offset/scale/gain the var-map is exactly constant, so
        // statistic (c) is zero.
        let img = synth_image(9, 1, 32, 8).unwrap();
        let grid = frozen_encode(img.image(), &cfg(12, 4)).unwrap();
        let summary = token_stats::summary_stats(std::slice::from_ref(&grid)).unwrap();
        assert!(summary.c < 1e-10, "c = {}", summary.c);
        assert!((summary.b - 1.0).abs() < 1e-4, "b = {}", summary.b);
    }

    #[test]
    fn position_gain_shapes_var_map() {
        let img = synth_image(11, 3, 32, 8).unwrap();
        let mut c = cfg(12, 4);
        c.position_gain[5] = 2.0;
        let grid = frozen_encode(img.image(), &c).unwrap();
        let vars = token_stats::var_map(&grid).unwrap();
        // Token 5 has 4x the variance of the others.
        assert!((vars[5] / vars[0] - 4.0).abs() < 0.01);
    }
}
