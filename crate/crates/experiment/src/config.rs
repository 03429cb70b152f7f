use crate::{ExperimentError, Result};
use ar_backbone::ArMode;
use latent_world::ProfileName;
use serde::{Deserialize, Serialize};

/// Full description of one experiment cell. Parsed from TOML with unknown
/// keys rejected, so a typo cannot silently change an ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run seed: training batches, noise draws, generation.
    pub seed: u64,
    pub world: WorldSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub decoder: DecoderSection,
    pub generation: GenerationSection,
    pub eval: EvalSection,
    /// Optional default output directory; the CLI `--out` overrides it.
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub profile: ProfileName,
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub classes: usize,
    pub train_images: usize,
    pub eval_images: usize,
    pub calib_images: usize,
    /// Seeds the corpus, the frozen encoder and its calibration; cells that
    /// share a world share this seed.
    pub world_seed: u64,
}

impl WorldSection {
    pub fn grid_side(&self) -> Result<usize> {
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return Err(ExperimentError::Config(format!(
                "image_size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        Ok(self.image_size / self.patch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mode: ArMode,
    pub denoiser_width: usize,
    pub denoiser_blocks: usize,
    pub timesteps: usize,
    pub schedule: ScheduleName,
    /// Dimension-dependent timestep shift on/off.
    pub shift: bool,
    pub shift_base_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    /// Noise level α injected into conditioning inputs.
    pub alpha: f32,
    /// Per-token normalization on/off.
    pub normalize: bool,
    pub log_every: usize,
    /// Cosine-decay the learning rate to a tenth over the run.
    #[serde(default = "default_true")]
    pub lr_decay: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub epochs: usize,
    pub lr: f32,
    /// Number of training pairs taken from the world's train corpus.
    pub train_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub samples_per_class: usize,
    pub sampler_steps: usize,
    /// Unmasking rounds K for masked mode.
    pub mask_rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Metrics to compute: gfid, token_fid, precision, recall, psnr, ssim, rfid.
    pub metrics: Vec<String>,
    pub knn_k: usize,
    /// Cap on rows entering the k-NN metrics (deterministic subsample).
    pub pr_subsample: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.world.grid_side()?;
        if side == 0 {
            return Err(ExperimentError::Config("empty token grid".to_string()));
        }
        if self.world.dim < 2 {
            return Err(ExperimentError::Config("world.dim must be >= 2".to_string()));
        }
        if self.world.classes == 0 {
            return Err(ExperimentError::Config("world.classes must be positive".to_string()));
        }
        if self.model.width % self.model.heads != 0 || self.model.heads == 0 {
            return Err(ExperimentError::Config(format!(
                "model.width {} not divisible by model.heads {}",
                self.model.width, self.model.heads
            )));
        }
        if self.training.alpha < 0.0 {
            return Err(ExperimentError::Config("training.alpha must be >= 0".to_string()));
        }
        if self.training.batch == 0 || self.training.steps == 0 {
            return Err(ExperimentError::Config(
                "training.steps and training.batch must be positive".to_string(),
            ));
        }
        if self.generation.sampler_steps == 0
            || self.generation.sampler_steps > self.model.timesteps
        {
            return Err(ExperimentError::Config(format!(
                "generation.sampler_steps must be in [1, {}]",
                self.model.timesteps
            )));
        }
        if self.generation.mask_rounds == 0
            || self.generation.mask_rounds > side * side
        {
            return Err(ExperimentError::Config(format!(
                "generation.mask_rounds must be in [1, {}]",
                side * side
            )));
        }
        if self.decoder.train_images > self.world.train_images {
            return Err(ExperimentError::Config(
                "decoder.train_images exceeds world.train_images".to_string(),
            ));
        }
        if self.eval.knn_k == 0 {
            return Err(ExperimentError::Config("eval.knn_k must be positive".to_string()));
        }
        Ok(())
    }

    /// Stable run identifier: hash of the canonical config text and seed.
    pub fn run_id(&self) -> String {
        let text = self.to_toml();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// A reasonable complete default, matching the desk-scale decisions:
/// 32x32 images, 8x8 patches (N = 16), causal mode, width-128 depth-4
/// backbone, width-256 denoiser, cosine schedule with T = 1000.
impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            world: WorldSection {
                profile: ProfileName::Siglip2,
                image_size: 32,
                patch: 8,
                dim: 64,
                classes: 8,
                train_images: 384,
                eval_images: 256,
                calib_images: 500,
                world_seed: 11,
            },
            model: ModelSection {
                depth: 4,
                width: 128,
                heads: 4,
                mode: ArMode::Causal,
                denoiser_width: 256,
                denoiser_blocks: 3,
                timesteps: 1000,
                schedule: ScheduleName::Cosine,
                shift: false,
                shift_base_dim: 8,
            },
            training: TrainingSection {
                steps: 2000,
                batch: 16,
                lr: 2e-3,
                alpha: 0.1,
                normalize: true,
                log_every: 50,
                lr_decay: true,
            },
            decoder: DecoderSection {
                width: 64,
                blocks: 2,
                heads: 2,
                epochs: 15,
                lr: 2e-3,
                train_images: 192,
            },
            generation: GenerationSection {
                samples_per_class: 32,
                sampler_steps: 100,
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
                pr_subsample: 1000,
            },
            output_dir: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.run_id(), back.run_id());
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let mut text = ExperimentConfig::default().to_toml();
        text.push_str("\n[world2]\nfoo = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = ExperimentConfig::default()
            .to_toml()
            .replace("alpha =", "alhpa =");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn validation_catches_field_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.world.image_size = 30; // not divisible by 8
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.training.alpha = -0.5;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.model.heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_id_distinguishes_seeds() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.run_id(), b.run_id());
    }
}
