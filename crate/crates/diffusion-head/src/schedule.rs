use crate::{DiffusionError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
}

/// Variance-preserving noise schedule: per-timestep signal coefficient α_t
/// and noise coefficient σ_t with α_t² + σ_t² = 1. Index 0 is the clean
/// boundary (α = 1, σ = 0); training timesteps run 1..=t_max.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    t_max: usize,
    alpha: Vec<f32>,
    sigma: Vec<f32>,
    shift: f64,
}

const COSINE_S: f64 = 0.008;
/// Keeps ᾱ_T strictly positive so x̂₀ = (x_t − σ_t ε̂)/α_t stays finite at
/// the noisiest step.
const ALPHA_BAR_FLOOR: f64 = 1e-5;

fn cosine_alpha_bar(u: f64) -> f64 {
    let f = |x: f64| ((x + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2)
        .cos()
        .powi(2);
    (f(u) / f(0.0)).clamp(ALPHA_BAR_FLOOR, 1.0)
}

/// Rational timestep remap u' = m·u / (1 + (m−1)·u). Identity at m = 1,
/// monotone, endpoint-preserving, and u' ≥ u for m ≥ 1.
fn remap(u: f64, m: f64) -> f64 {
    m * u / (1.0 + (m - 1.0) * u)
}

impl DiffusionSchedule {
    pub fn make(t_max: usize, kind: ScheduleKind) -> Result<Self> {
        if t_max < 2 {
            return Err(DiffusionError::contract(format!(
                "schedule needs at least 2 timesteps, got {t_max}"
            )));
        }
        match kind {
            ScheduleKind::Cosine => Ok(Self::build(t_max, 1.0)),
        }
    }

    fn build(t_max: usize, shift: f64) -> Self {
        let mut alpha = Vec::with_capacity(t_max + 1);
        let mut sigma = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            let u = t as f64 / t_max as f64;
            let ab = cosine_alpha_bar(remap(u, shift));
            alpha.push(ab.sqrt() as f32);
            sigma.push((1.0 - ab).sqrt() as f32);
        }
        DiffusionSchedule {
            t_max,
            alpha,
            sigma,
            shift,
        }
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn alpha(&self, t: usize) -> f32 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f32 {
        self.sigma[t]
    }

    /// ᾱ_t = α_t².
    pub fn alpha_bar(&self, t: usize) -> f64 {
        (self.alpha[t] as f64).powi(2)
    }

    /// Evenly strided descending timestep subset for sampling, from t_max
    /// down; always ends at the boundary-adjacent step.
    pub fn strided_steps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.t_max {
            return Err(DiffusionError::contract(format!(
                "steps must be in [1, {}], got {steps}",
                self.t_max
            )));
        }
        let mut ts: Vec<usize> = (0..steps)
            .map(|j| {
                let frac = (steps - j) as f64 / steps as f64;
                ((self.t_max as f64 * frac).round() as usize).max(1)
            })
            .collect();
        ts.dedup();
        Ok(ts)
    }
}

/// Dimension-dependent schedule variant: remaps normalized time by
/// m = √(d / d_base) and rebuilds the coefficient tables. `d == d_base`
/// returns the schedule unchanged.
pub fn shift_timesteps(schedule: &DiffusionSchedule, d: usize, d_base: usize) -> DiffusionSchedule {
    let m = (d as f64 / d_base.max(1) as f64).sqrt();
    DiffusionSchedule::build(schedule.t_max, m * schedule.shift)
}
