//! Multi-view descriptor fields, semantic fields, and a denoising-diffusion
//! action policy, together with a planar tabletop simulator that renders
//! synthetic descriptor images so the whole pipeline runs on a desk CPU.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: pinhole cameras, bilinear sampling, back-projection, FPS.
//! * [`fusion`]: per-view sampling and depth-weighted fusion into a
//!   [`fusion::DescriptorField`].
//! * [`semantics`]: reference descriptors, cosine semantic fields, and the
//!   policy observation.
//! * [`netcore`]: a small reverse-mode layer stack, Adam, checkpoints and
//!   gradient checking.
//! * [`encoder`]: hierarchical point-set encoder.
//! * [`policy`]: noise schedule, noise predictor, DDPM training and sampling,
//!   receding-horizon execution.
//! * [`sim`]: the tabletop environment, renderer and scripted expert.
//! * [`harness`]: run configuration, datasets, training, evaluation, heatmaps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod encoder;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod netcore;
pub mod policy;
pub mod rng;
pub mod semantics;
pub mod sim;

pub use error::{Error, Result};
