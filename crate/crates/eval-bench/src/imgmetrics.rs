use crate::{EvalError, Result};

/// Peak signal-to-noise ratio in decibels for unit-range images, capped at
/// 99 dB when the MSE vanishes.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::contract(format!(
            "image sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse < 1e-10 {
        Ok(99.0)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_C1: f64 = 0.0001; // (0.01)² for unit dynamic range
const SSIM_C2: f64 = 0.0009; // (0.03)²
const WINDOW: usize = 8;

/// Mean SSIM over non-overlapping 8x8 windows per channel, for interleaved
/// `channels`-deep row-major images of `height` x `width` pixels.
pub fn ssim(
    a: &[f32],
    b: &[f32],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<f64> {
    let expect = height * width * channels;
    if a.len() != expect || b.len() != expect {
        return Err(EvalError::contract(format!(
            "expected {expect} values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if height < WINDOW || width < WINDOW {
        return Err(EvalError::contract(format!(
            "image {height}x{width} smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    let mut acc = 0.0f64;
    let mut windows = 0usize;
    let n = (WINDOW * WINDOW) as f64;
    for c in 0..channels {
        for wy in 0..height / WINDOW {
            for wx in 0..width / WINDOW {
                let mut sum_a = 0.0f64;
                let mut sum_b = 0.0f64;
                let mut sum_aa = 0.0f64;
                let mut sum_bb = 0.0f64;
                let mut sum_ab = 0.0f64;
                for py in 0..WINDOW {
                    let y = wy * WINDOW + py;
                    for px in 0..WINDOW {
                        let x = wx * WINDOW + px;
                        let idx = (y * width + x) * channels + c;
                        let va = a[idx] as f64;
                        let vb = b[idx] as f64;
                        sum_a += va;
                        sum_b += vb;
                        sum_aa += va * va;
                        sum_bb += vb * vb;
                        sum_ab += va * vb;
                    }
                }
                let mu_a = sum_a / n;
                let mu_b = sum_b / n;
                let var_a = sum_aa / n - mu_a * mu_a;
                let var_b = sum_bb / n - mu_b * mu_b;
                let cov = sum_ab / n - mu_a * mu_b;
                let score = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
                acc += score;
                windows += 1;
            }
        }
    }
    Ok(acc / windows as f64)
}
