//! Minimal differentiable substrate: a closed vocabulary of layers with
//! hand-written reverse-mode gradients, Adam, binary checkpoints and
//! finite-difference gradient checking.
//!
//! Everything is generic over [`Real`] so the same code trains in `f32` and
//! is verified in `f64`.

pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod optim;
mod params;

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use layers::{mish, mish_grad, time_embedding, LayerSpec, Network, Tape};
pub use optim::{adam_step, clip_grad_norm, AdamConfig};
pub use params::{Parameter, ParameterStore};

/// Floating-point scalar usable by the network code.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Default
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
