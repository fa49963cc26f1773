//! Diffusion action head: noise schedule, forward noising, the noise
//! prediction loss, ancestral sampling, and receding-horizon execution.

mod model;
mod normalize;
mod rollout;
mod schedule;

pub use model::{
    build_denoiser, draw_noised_batch, mse, predict_noise, DenoiserObjective, DiffusionPolicy,
    NoisedBatch, PolicyConfig, PolicyLossObjective,
};
pub use normalize::ActionNormalizer;
pub use rollout::{receding_horizon_execute, ChunkPolicy, Environment, Rollout};
pub use schedule::{add_noise, ddpm_sample, make_schedule, NoiseSchedule};
