//! Double-precision gradient checks of the configured encoder and denoiser
//! on a rendered scene.

use ndarray::Array2;

use super::config::RunConfig;
use super::eval::eval_env;
use super::observe::{load_selection, Perception};
use crate::encoder::EncoderObjective;
use crate::error::Result;
use crate::netcore::gradcheck::{
    grad_check_at, grad_check_objective, FlipGradientSign, GradCheckReport, Objective,
};
use crate::netcore::ParameterStore;
use crate::policy::{draw_noised_batch, DenoiserObjective, DiffusionPolicy};
use crate::rng;
use crate::sim::Split;

pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub encoder: GradCheckReport,
    pub encoder_flipped: GradCheckReport,
    pub denoiser: GradCheckReport,
    pub denoiser_flipped: GradCheckReport,
}

/// The parameter with the largest gradient norm and its `n` largest
/// gradient entries.
fn loudest(
    obj: &impl Objective,
    params: &mut ParameterStore<f64>,
    n: usize,
) -> Result<(String, Vec<usize>)> {
    obj.gradient(params)?;
    let best = params
        .iter()
        .max_by(|a, b| {
            let norm =
                |p: &crate::netcore::Parameter<f64>| p.grad.iter().map(|g| g * g).sum::<f64>();
            norm(a).total_cmp(&norm(b))
        })
        .expect("networks have parameters");
    let mut flat: Vec<usize> = (0..best.grad.len()).collect();
    let g = best.grad.as_slice().expect("standard layout");
    flat.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()));
    flat.truncate(n);
    Ok((best.name.clone(), flat))
}

/// Plain check on `entries` entries per tensor, then the sign-flip control
/// on the entries where the flip is guaranteed to matter.
fn check_pair(
    obj: &impl Objective,
    params: &mut ParameterStore<f64>,
    entries: usize,
) -> Result<(GradCheckReport, GradCheckReport)> {
    let plain = grad_check_objective(obj, params, STEP, Some(entries))?;
    let (param, flat) = loudest(obj, params, entries)?;
    let probes: Vec<(String, usize)> = flat.into_iter().map(|f| (param.clone(), f)).collect();
    let flipped = FlipGradientSign { inner: obj, param };
    let flip = grad_check_at(&flipped, params, STEP, &probes)?;
    Ok((plain, flip))
}

/// Probes `entries` entries per tensor of each network.
pub fn run_gradcheck(cfg: &RunConfig, entries: usize) -> Result<GradCheckSummary> {
    let policy = DiffusionPolicy::new(cfg.policy(), cfg.encoder())?;
    let mut params = ParameterStore::<f64>::new();
    policy.init_params(&mut params, &mut rng::stream(cfg.seed, &[0x1417]))?;
    let (sel, _) = load_selection(cfg)?;
    let perception = Perception::new(cfg, &sel)?;
    let frames = (0..policy.obs_horizon())
        .map(|e| {
            let (_, env) = eval_env(cfg, Split::Train, e)?;
            let field = perception.field(env.render_views())?;
            policy
                .encoder
                .prepare(&field.observation(env.state.robot(), cfg.ablate_semantics))
        })
        .collect::<Result<Vec<_>>>()?;

    let enc = EncoderObjective {
        encoder: &policy.encoder,
        frames: frames.iter().collect(),
    };
    let (encoder, encoder_flipped) = check_pair(&enc, &mut params, entries)?;

    let (embed, _) = policy.encoder.forward(&params, &enc.frames)?;
    let mut r = rng::stream(cfg.seed, &[0x9c4d]);
    let actions = Array2::from_shape_simple_fn((1, policy.config.flat_dim()), || {
        rand::Rng::random_range(&mut r, -1.0..1.0)
    });
    let batch = draw_noised_batch(actions.view(), &[0], 3, cfg.seed, &policy.schedule);
    let embed = embed.select(ndarray::Axis(0), &batch.source);
    let den = DenoiserObjective {
        net: &policy.denoiser,
        batch,
        embed,
    };
    let (denoiser, denoiser_flipped) = check_pair(&den, &mut params, entries)?;
    Ok(GradCheckSummary {
        encoder,
        encoder_flipped,
        denoiser,
        denoiser_flipped,
    })
}
