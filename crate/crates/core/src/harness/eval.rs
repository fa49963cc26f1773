//! Closed-loop evaluation of trained policies and the scripted expert.

use std::path::Path;

use nalgebra::{Point2, Vector2};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::observe::Perception;
use super::train::Trained;
use crate::encoder::{Encoder, PreparedFrame};
use crate::error::{Error, Result};
use crate::policy::{receding_horizon_execute, ChunkPolicy, Environment, Rollout};
use crate::rng;
use crate::sim::{sample_instance, Expert, ExpertPolicy, SimEnv, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: usize,
    pub instance_id: u64,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub split: Split,
    pub seed: u64,
    pub ablate_semantics: bool,
    pub episodes: Vec<EpisodeOutcome>,
    /// False when no episode ran; rate and mean steps are then null.
    pub rate_defined: bool,
    pub success_rate: Option<f64>,
    pub mean_steps: Option<f64>,
}

impl EvalReport {
    fn new(
        policy: &str,
        split: Split,
        seed: u64,
        ablate: bool,
        episodes: Vec<EpisodeOutcome>,
    ) -> Self {
        let n = episodes.len() as f64;
        let defined = !episodes.is_empty();
        let rate = defined.then(|| episodes.iter().filter(|e| e.success).count() as f64 / n);
        let steps = defined.then(|| episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n);
        Self {
            policy: policy.into(),
            split,
            seed,
            ablate_semantics: ablate,
            episodes,
            rate_defined: defined,
            success_rate: rate,
            mean_steps: steps,
        }
    }

    pub fn successes(&self) -> usize {
        self.episodes.iter().filter(|e| e.success).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::path(path, e))
    }
}

/// Seed of evaluation episode `e`.
pub fn eval_seed(cfg: &RunConfig, split: Split, e: usize) -> u64 {
    let s = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    rng::derive(cfg.seed, &[0xe7a1, s, e as u64])
}

/// Fresh environment for evaluation episode `e`.
pub fn eval_env(cfg: &RunConfig, split: Split, e: usize) -> Result<(u64, SimEnv)> {
    let n = match split {
        Split::Train => cfg.train_instances,
        Split::Test => cfg.test_instances,
    };
    let id = e as u64 % n;
    let inst = sample_instance(&cfg.category(), split, id);
    let env = SimEnv::reset(
        inst,
        cfg.task_spec(),
        cfg.dynamics(),
        cfg.render(),
        eval_seed(cfg, split, e),
    )?;
    Ok((id, env))
}

/// The simulator seen through cameras, fusion and the encoder.
pub struct PerceivingEnv<'a> {
    pub sim: SimEnv,
    pub perception: &'a Perception,
    pub encoder: &'a Encoder,
    pub ablate: bool,
}

impl PerceivingEnv<'_> {
    pub fn frame(&self) -> Result<PreparedFrame> {
        let field = self.perception.field(self.sim.render_views())?;
        self.encoder
            .prepare(&field.observation(self.sim.state.robot(), self.ablate))
    }
}

impl Environment for PerceivingEnv<'_> {
    type Observation = PreparedFrame;

    fn observe(&mut self) -> Result<PreparedFrame> {
        self.frame()
    }

    fn apply(&mut self, action: &[f64]) -> Result<()> {
        self.sim.step(action);
        Ok(())
    }

    fn succeeded(&self) -> bool {
        self.sim.success()
    }
}

/// Samples denormalized chunks from a trained policy; chunk `i` of an
/// episode uses noise keyed by `(seed, i)`.
pub struct DiffusionRunner<'a> {
    pub trained: &'a Trained,
    pub seed: u64,
    pub chunk: u64,
}

impl DiffusionRunner<'_> {
    /// `count` chunks for one history, each `pred_horizon x 3`.
    pub fn sample(
        &self,
        history: &[PreparedFrame],
        count: usize,
        seed: u64,
    ) -> Result<Vec<Array2<f64>>> {
        let t = self.trained;
        let refs: Vec<&PreparedFrame> = history.iter().collect();
        let flat = t.policy.sample_for_history(&t.params, &refs, count, seed)?;
        flat.rows()
            .into_iter()
            .map(|row| {
                let mut v = row.to_vec();
                t.sidecar.normalizer.denormalize(&mut v);
                Array2::from_shape_vec((t.policy.config.pred_horizon, 3), v)
                    .map_err(|e| Error::DimensionMismatch(e.to_string()))
            })
            .collect()
    }
}

impl ChunkPolicy<PreparedFrame> for DiffusionRunner<'_> {
    fn plan(&mut self, history: &[PreparedFrame]) -> Result<Array2<f64>> {
        let seed = rng::derive(self.seed, &[self.chunk]);
        self.chunk += 1;
        Ok(self.sample(history, 1, seed)?.remove(0))
    }
}

fn outcome(episode: usize, instance_id: u64, seed: u64, r: Rollout) -> EpisodeOutcome {
    EpisodeOutcome {
        episode,
        instance_id,
        seed,
        success: r.success,
        steps: r.steps(),
        chunks: r.chunks,
    }
}

/// Runs `episodes` closed-loop episodes of a trained policy on fresh
/// instances of `split`. Episodes run concurrently and are keyed by index.
pub fn evaluate(
    cfg: &RunConfig,
    trained: &Trained,
    perception: &Perception,
    split: Split,
    episodes: usize,
) -> Result<EvalReport> {
    let ablate = trained.sidecar.ablate_semantics;
    let outcomes = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let (id, sim) = eval_env(cfg, split, e)?;
            let seed = sim.episode_seed;
            let mut env = PerceivingEnv {
                sim,
                perception,
                encoder: &trained.policy.encoder,
                ablate,
            };
            let mut runner = DiffusionRunner {
                trained,
                seed: rng::derive(seed, &[0x5a4e]),
                chunk: 0,
            };
            let r = receding_horizon_execute(
                &mut runner,
                &mut env,
                cfg.obs_horizon,
                cfg.exec_horizon,
                cfg.step_cap,
            )?;
            Ok(outcome(e, id, seed, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(
        "diffusion",
        split,
        cfg.seed,
        ablate,
        outcomes,
    ))
}

/// The scripted expert run through the same episode loop.
pub fn evaluate_expert(cfg: &RunConfig, split: Split, episodes: usize) -> Result<EvalReport> {
    let outcomes = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let (id, mut env) = eval_env(cfg, split, e)?;
            let seed = env.episode_seed;
            let instance = env.instance.clone();
            let mut p = ExpertPolicy {
                expert: Expert::new(cfg.expert(), &mut rng::stream(seed, &[0x51de])),
                instance: &instance,
                task: env.task,
                dynamics: env.dynamics.clone(),
                pred_horizon: cfg.pred_horizon,
                exec_horizon: cfg.exec_horizon,
            };
            let r = receding_horizon_execute(
                &mut p,
                &mut env,
                cfg.obs_horizon,
                cfg.exec_horizon,
                cfg.step_cap,
            )?;
            Ok(outcome(e, id, seed, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new("expert", split, cfg.seed, false, outcomes))
}

/// Which approach waypoint an open-loop chunk passes closer to: `1` for the
/// `+normal` side of the handle axis, `-1` for the other.
pub fn approach_side(env: &SimEnv, chunk: &Array2<f64>, offset: f64) -> f64 {
    let s = &env.state;
    let h = s.pose.to_world(&env.instance.handle().center);
    let n = Vector2::new(-s.pose.yaw.sin(), s.pose.yaw.cos());
    let (wp, wm) = (h + n * offset, h - n * offset);
    let mut g: Point2<f64> = s.gripper;
    let (mut dp, mut dm) = ((g - wp).norm(), (g - wm).norm());
    for row in chunk.rows() {
        let mut d = Vector2::new(row[0], row[1]);
        if d.norm() > env.dynamics.max_step {
            d *= env.dynamics.max_step / d.norm();
        }
        g += d;
        dp = dp.min((g - wp).norm());
        dm = dm.min((g - wm).norm());
    }
    if dp <= dm {
        1.0
    } else {
        -1.0
    }
}
