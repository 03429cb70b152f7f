use crate::{Result, WorldError};
use tensor_core::Rng;

/// RGB pixel raster in [0, 1], row-major `[y][x][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    size: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != size * size * 3 {
            return Err(WorldError::contract(format!(
                "expected {} pixel values, got {}",
                size * size * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(WorldError::contract(
                "pixel values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Image { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn mean_pixel(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// A procedurally generated class-conditional image.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    class_id: usize,
    image: Image,
}

impl SyntheticImage {
    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn size(&self) -> usize {
        self.image.size
    }

    pub fn pixels(&self) -> &[f32] {
        self.image.pixels()
    }
}

/// Deterministic procedural image: a class-keyed mixture of oriented
/// gratings plus seeded low-frequency texture, squashed into [0, 1].
/// Identical `(seed, class_id, size)` always produce identical pixels.
pub fn synth_image(
    seed: u64,
    class_id: usize,
    size: usize,
    class_count: usize,
) -> Result<SyntheticImage> {
    if class_count == 0 || class_id >= class_count {
        return Err(WorldError::contract(format!(
            "class {class_id} outside [0, {class_count})"
        )));
    }
    if size < 8 {
        return Err(WorldError::contract(format!(
            "image size {size} too small"
        )));
    }
    let mut rng = Rng::derive(seed, "synth-image", (class_id as u64) << 32 | size as u64);

    // Class-keyed structure: base frequency and orientation come from the
    // class alone so classes are visually separable.
    let tau = std::f32::consts::TAU;
    let base_freq = 1.5 + 0.9 * class_id as f32;
    let base_orient = tau * class_id as f32 / class_count.max(1) as f32 / 2.0;
    let channel_phase = [0.0f32, tau / 3.0 * ((class_id % 3) as f32), tau / 4.0];

    // Per-image latent factors.
    let orient = base_orient + 0.25 * rng.normal_f32();
    let freq = base_freq * (1.0 + 0.15 * rng.normal_f32());
    let phase1 = tau * rng.next_f32();
    let phase2 = tau * rng.next_f32();
    let amp1 = 0.8 + 0.3 * rng.next_f32();
    let amp2 = 0.25 + 0.35 * rng.next_f32();
    let cross_freq = freq * (0.5 + 0.4 * rng.next_f32());

    // Smooth seeded texture: a handful of random low-frequency waves.
    let texture: Vec<(f32, f32, f32, f32)> = (0..6)
        .map(|_| {
            (
                rng.normal_f32() * 2.0,
                rng.normal_f32() * 2.0,
                tau * rng.next_f32(),
                0.12 + 0.1 * rng.next_f32(),
            )
        })
        .collect();

    let (sin_o, cos_o) = orient.sin_cos();
    let inv = 1.0 / size as f32;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let u = x as f32 * inv - 0.5;
            let v = y as f32 * inv - 0.5;
            let along = u * cos_o + v * sin_o;
            let across = -u * sin_o + v * cos_o;
            let g1 = amp1 * (tau * freq * along + phase1).cos();
            let g2 = amp2 * (tau * cross_freq * across + phase2).cos();
            let tex: f32 = texture
                .iter()
                .map(|&(kx, ky, ph, amp)| amp * (tau * (kx * u + ky * v) + ph).cos())
                .sum();
            for (c, &ph_c) in channel_phase.iter().enumerate() {
                let shade = g1 * (1.0 + 0.2 * (ph_c + c as f32).cos()) + g2 + tex
                    + 0.15 * (tau * freq * along + phase1 + ph_c).sin();
                pixels.push(0.5 + 0.5 * shade.tanh());
            }
        }
    }
    Ok(SyntheticImage {
        class_id,
        image: Image::new(size, pixels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_inputs() {
        let a = synth_image(1, 0, 32, 8).unwrap();
        let b = synth_image(1, 0, 32, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_sensitivity() {
        let a = synth_image(1, 0, 32, 8).unwrap();
        let b = synth_image(2, 0, 32, 8).unwrap();
        assert_ne!(a.pixels(), b.pixels());
    }

    #[test]
    fn class_sensitivity() {
        let a = synth_image(1, 0, 32, 8).unwrap();
        let b = synth_image(1, 3, 32, 8).unwrap();
        assert_ne!(a.pixels(), b.pixels());
    }

    #[test]
    fn invalid_class_rejected() {
        assert!(synth_image(1, 8, 32, 8).is_err());
        assert!(synth_image(1, 0, 32, 0).is_err());
    }

    #[test]
    fn pixels_in_unit_interval() {
        for class in 0..8 {
            let img = synth_image(17, class, 32, 8).unwrap();
            assert!(img.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn corpus_mean_pixel_is_mid_range() {
        let mut acc = 0.0;
        let n = 1000;
        for i in 0..n {
            let img = synth_image(i as u64, (i % 8) as usize, 32, 8).unwrap();
            acc += img.image().mean_pixel();
        }
        let mean = acc / n as f64;
        assert!(
            (0.3..=0.7).contains(&mean),
            "corpus mean pixel {mean} outside [0.3, 0.7]"
        );
    }
}
