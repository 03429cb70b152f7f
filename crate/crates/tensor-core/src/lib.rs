//! Minimal dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The building blocks here are deliberately small: row-major [`Tensor`]s of
//! `f32`, a [`Tape`] that records primitive operations and replays them
//! backwards, an AdamW optimizer, and a finite-difference gradient checker.
//! Compute kernels are generic over the element type so the same operation
//! set runs in `f32` for training and in `f64` for gradient verification.

mod error;
mod gradcheck;
pub mod nn;
mod optim;
mod params;
mod real;
mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use params::{GradientMap, ParamId, ParamSet};
pub use real::Real;
pub use rng::Rng;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
