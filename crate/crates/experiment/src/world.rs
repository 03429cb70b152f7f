use crate::config::{DecoderSection, WorldSection};
use crate::Result;
use latent_world::{
    calibrate_profile, synth_image, train_decoder, DecoderConfig, DecoderTraining,
    FrozenEncoder, StatProfile, SyntheticImage,
};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use token_stats::{normalize_tokens, LatentGrid, TokenStatsSummary};

/// A fully built world: calibrated frozen encoder plus encoded train/eval
/// corpora. Shared (via an in-process cache) by every cell that uses the
/// same world section, since building one is deterministic in its fields.
pub struct WorldBundle {
    pub section: WorldSection,
    pub encoder: FrozenEncoder,
    pub achieved: TokenStatsSummary,
    pub calibration_iterations: usize,
    pub train_images: Vec<SyntheticImage>,
    pub eval_images: Vec<SyntheticImage>,
    /// Raw-space token grids, parallel to the image vectors.
    pub train: Vec<LatentGrid>,
    pub train_labels: Vec<usize>,
    pub eval: Vec<LatentGrid>,
    pub eval_labels: Vec<usize>,
}

impl WorldBundle {
    /// Training grids in the requested space.
    pub fn train_grids(&self, space: DecoderSpace) -> Result<Vec<LatentGrid>> {
        space.apply_all(&self.train)
    }

    pub fn eval_grids(&self, space: DecoderSpace) -> Result<Vec<LatentGrid>> {
        space.apply_all(&self.eval)
    }
}

/// Which token space a decoder (and its pipeline) lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderSpace {
    Raw,
    Normalized,
}

impl DecoderSpace {
    pub fn from_normalize_flag(normalize: bool) -> Self {
        if normalize {
            DecoderSpace::Normalized
        } else {
            DecoderSpace::Raw
        }
    }

    pub fn apply(&self, grid: &LatentGrid) -> Result<LatentGrid> {
        match self {
            DecoderSpace::Raw => Ok(grid.clone()),
            DecoderSpace::Normalized => Ok(normalize_tokens(grid)?.0),
        }
    }

    fn apply_all(&self, grids: &[LatentGrid]) -> Result<Vec<LatentGrid>> {
        grids.iter().map(|g| self.apply(g)).collect()
    }
}

fn world_cache() -> &'static Mutex<HashMap<String, Arc<WorldBundle>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<WorldBundle>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn decoder_cache() -> &'static Mutex<HashMap<String, Arc<DecoderTraining>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<DecoderTraining>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn world_key(section: &WorldSection) -> String {
    format!("{section:?}")
}

/// Builds (or fetches from the in-process cache) the world for a config's
/// world section. The cache only avoids recomputation — building is
/// deterministic, so cached and fresh bundles are identical.
pub fn world_bundle(section: &WorldSection) -> Result<Arc<WorldBundle>> {
    let key = world_key(section);
    if let Some(found) = world_cache().lock().unwrap().get(&key) {
        return Ok(found.clone());
    }
    let bundle = Arc::new(build_world(section)?);
    world_cache()
        .lock()
        .unwrap()
        .entry(key)
        .or_insert_with(|| bundle.clone());
    Ok(bundle)
}

fn build_world(section: &WorldSection) -> Result<WorldBundle> {
    let side = section.grid_side()?;
    let make_images = |tag: &str, count: usize| -> Result<Vec<SyntheticImage>> {
        (0..count)
            .map(|i| {
                let seed = tensor_core::Rng::derive(section.world_seed, tag, i as u64)
                    .next_u64();
                synth_image(seed, i % section.classes, section.image_size, section.classes)
                    .map_err(Into::into)
            })
            .collect()
    };
    let calib = make_images("calib-img", section.calib_images)?;
    let profile = StatProfile::named(section.profile);
    let outcome = calibrate_profile(
        &profile,
        section.patch,
        section.dim,
        side,
        section.world_seed,
        &calib,
    )?;
    let encoder = FrozenEncoder::new(outcome.config)?;

    let train_images = make_images("train-img", section.train_images)?;
    let eval_images = make_images("eval-img", section.eval_images)?;
    let encode_all = |imgs: &[SyntheticImage]| -> Result<Vec<LatentGrid>> {
        imgs.iter()
            .map(|img| encoder.encode(img.image()).map_err(Into::into))
            .collect()
    };
    let train = encode_all(&train_images)?;
    let eval = encode_all(&eval_images)?;
    let train_labels = train_images.iter().map(|i| i.class_id()).collect();
    let eval_labels = eval_images.iter().map(|i| i.class_id()).collect();

    Ok(WorldBundle {
        section: section.clone(),
        encoder,
        achieved: outcome.achieved,
        calibration_iterations: outcome.iterations,
        train_images,
        eval_images,
        train,
        train_labels,
        eval,
        eval_labels,
    })
}

/// Trains (or fetches) the decoder for a world in the given token space.
pub fn decoder_for(
    bundle: &WorldBundle,
    section: &DecoderSection,
    space: DecoderSpace,
) -> Result<Arc<DecoderTraining>> {
    let key = format!(
        "{}|{section:?}|{space:?}",
        world_key(&bundle.section)
    );
    if let Some(found) = decoder_cache().lock().unwrap().get(&key) {
        return Ok(found.clone());
    }
    let side = bundle.section.grid_side()?;
    let n = section.train_images.min(bundle.train.len());
    let pairs: Vec<(LatentGrid, latent_world::Image)> = bundle.train[..n]
        .iter()
        .zip(&bundle.train_images[..n])
        .map(|(grid, img)| Ok((space.apply(grid)?, img.image().clone())))
        .collect::<Result<_>>()?;
    let cfg = DecoderConfig {
        token_dim: bundle.section.dim,
        width: section.width,
        blocks: section.blocks,
        heads: section.heads,
        patch: bundle.section.patch,
        grid_side: side,
    };
    let trained = Arc::new(train_decoder(
        &pairs,
        cfg,
        section.epochs,
        section.lr,
        bundle.section.world_seed ^ 0x5eed_dec0,
    )?);
    decoder_cache()
        .lock()
        .unwrap()
        .entry(key)
        .or_insert_with(|| trained.clone());
    Ok(trained)
}
