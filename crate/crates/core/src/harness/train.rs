//! Policy training on a recorded dataset.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::Manifest;
use super::observe::{cache_dir, cached_fields, load_selection, Perception};
use crate::encoder::PreparedFrame;
use crate::error::{Error, Result};
use crate::netcore::{adam_step, checkpoint, clip_grad_norm, AdamConfig, ParameterStore};
use crate::policy::{ActionNormalizer, DiffusionPolicy};
use crate::rng;

pub const CHECKPOINT: &str = "checkpoint.gdpc";
pub const SIDECAR: &str = "checkpoint.json";
pub const LOSS_CSV: &str = "loss.csv";

/// Everything besides the weights needed to run a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub dataset_hash: String,
    pub ablate_semantics: bool,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub obs_horizon: usize,
    pub pred_horizon: usize,
    pub exec_horizon: usize,
    pub normalizer: ActionNormalizer,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
}

/// Training set in memory: prepared frames per episode and one normalized
/// flattened chunk per sample.
pub struct TrainingSet {
    pub frames: Vec<Vec<PreparedFrame>>,
    /// `(episode, step)` of each sample.
    pub samples: Vec<(usize, usize)>,
    pub chunks: Array2<f64>,
    pub normalizer: ActionNormalizer,
}

impl TrainingSet {
    /// Frames conditioning sample `s`, oldest first; steps before the
    /// episode start repeat its first frame.
    pub fn history(&self, s: usize, horizon: usize) -> impl Iterator<Item = &PreparedFrame> {
        let (e, t) = self.samples[s];
        (0..horizon).map(move |j| &self.frames[e][(t + j + 1).saturating_sub(horizon)])
    }
}

/// Action chunk starting at `t`: rows past the episode end hold still with
/// the last grip command.
pub fn action_chunk(actions: &[[f64; 3]], t: usize, horizon: usize) -> Vec<f64> {
    let last = actions.last().map_or(0.0, |a| a[2]);
    (t..t + horizon)
        .flat_map(|i| actions.get(i).copied().unwrap_or([0.0, 0.0, last]))
        .collect()
}

pub fn load_training_set(
    cfg: &RunConfig,
    policy: &DiffusionPolicy,
    dataset: &Path,
) -> Result<(TrainingSet, Manifest)> {
    let manifest = Manifest::load(dataset)?;
    manifest.check_shapes(cfg)?;
    let (sel, refs_text) = load_selection(cfg)?;
    let perception = Perception::new(cfg, &sel)?;
    let cache = cache_dir(
        dataset,
        &cfg.perception_hash(&(refs_text + &manifest.config_hash)),
    );
    let horizon = cfg.pred_horizon;
    let mut frames = Vec::new();
    let mut samples = Vec::new();
    let mut raw_chunks = Vec::new();
    for i in 0..manifest.episodes.len() {
        let ep = manifest.episode(dataset, i)?;
        let fields = cached_fields(&perception, &cache, i, &ep)?;
        let actions: Vec<[f64; 3]> = ep
            .steps
            .iter()
            .map(|s| [s.action[0] as f64, s.action[1] as f64, s.action[2] as f64])
            .collect();
        let prepared = fields
            .iter()
            .zip(&ep.steps)
            .map(|(f, s)| {
                let robot = crate::semantics::RobotState {
                    x: s.robot[0] as f64,
                    y: s.robot[1] as f64,
                    closed: s.robot[2] > 0.5,
                };
                policy
                    .encoder
                    .prepare(&f.observation(robot, cfg.ablate_semantics))
            })
            .collect::<Result<Vec<_>>>()?;
        for t in 0..actions.len() {
            samples.push((i, t));
            raw_chunks.push(action_chunk(&actions, t, horizon));
        }
        frames.push(prepared);
    }
    let normalizer = ActionNormalizer::fit(3, raw_chunks.iter().flat_map(|c| c.chunks_exact(3)))?;
    let flat = policy.config.flat_dim();
    let mut chunks = Array2::zeros((raw_chunks.len(), flat));
    for (mut row, mut c) in chunks.rows_mut().into_iter().zip(raw_chunks) {
        normalizer.normalize(&mut c);
        row.assign(&ndarray::aview1(&c));
    }
    Ok((
        TrainingSet {
            frames,
            samples,
            chunks,
            normalizer,
        },
        manifest,
    ))
}

/// Cosine decay from `lr` to `lr * floor` over `steps`.
pub fn learning_rate(cfg: &RunConfig, step: usize) -> f64 {
    let p = step as f64 / cfg.train_steps.max(1) as f64;
    cfg.learning_rate
        * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

pub struct Trained {
    pub policy: DiffusionPolicy,
    pub params: ParameterStore<f32>,
    pub sidecar: Sidecar,
    pub losses: Vec<f64>,
}

/// Optimizes the diffusion loss for `cfg.train_steps` steps. `progress`
/// sees every step's loss.
pub fn train_on(
    cfg: &RunConfig,
    policy: DiffusionPolicy,
    set: &TrainingSet,
    dataset_hash: &str,
    mut progress: impl FnMut(usize, f64),
) -> Result<Trained> {
    let mut params = ParameterStore::<f32>::new();
    policy.init_params(&mut params, &mut rng::stream(cfg.seed, &[0x1417]))?;
    let horizon = policy.obs_horizon();
    let mut losses = Vec::with_capacity(cfg.train_steps);
    for step in 0..cfg.train_steps {
        let mut r = rng::stream(cfg.seed, &[0xba7c, step as u64]);
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| r.random_range(0..set.samples.len()))
            .collect();
        let frames: Vec<&PreparedFrame> = picks
            .iter()
            .flat_map(|&s| set.history(s, horizon))
            .collect();
        let actions = set.chunks.select(ndarray::Axis(0), &picks);
        let keys: Vec<u64> = (0..picks.len())
            .map(|i| rng::derive(step as u64, &[i as u64]))
            .collect();
        let loss = policy.loss(&mut params, &frames, actions.view(), &keys, cfg.seed, true)?;
        clip_grad_norm(&mut params, cfg.grad_clip);
        adam_step(
            &mut params,
            &AdamConfig {
                lr: learning_rate(cfg, step),
                ..AdamConfig::default()
            },
        )?;
        losses.push(loss);
        progress(step, loss);
    }
    let sidecar = Sidecar {
        config_hash: cfg.hash(),
        dataset_hash: dataset_hash.to_string(),
        ablate_semantics: cfg.ablate_semantics,
        diffusion_steps: cfg.diffusion_steps,
        beta_start: cfg.beta_start,
        beta_end: cfg.beta_end,
        obs_horizon: cfg.obs_horizon,
        pred_horizon: cfg.pred_horizon,
        exec_horizon: cfg.exec_horizon,
        normalizer: set.normalizer.clone(),
        train_steps: cfg.train_steps,
        final_loss: losses.last().copied(),
    };
    Ok(Trained {
        policy,
        params,
        sidecar,
        losses,
    })
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::path(path, e))?);
    writeln!(f, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{i},{l:?}")?;
    }
    f.flush()?;
    Ok(())
}

impl Trained {
    pub fn save(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::path(out, e))?;
        checkpoint::save(&self.params, &out.join(CHECKPOINT))?;
        let path = out.join(SIDECAR);
        std::fs::write(&path, serde_json::to_string_pretty(&self.sidecar)? + "\n")
            .map_err(|e| Error::path(&path, e))?;
        write_loss_csv(&out.join(LOSS_CSV), &self.losses)
    }

    /// Loads a checkpoint directory written by [`Trained::save`]. The
    /// network shapes come from `cfg` and must match the stored tensors.
    pub fn load(cfg: &RunConfig, dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let schedule = (
            sidecar.diffusion_steps,
            sidecar.beta_start,
            sidecar.beta_end,
        );
        if schedule != (cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
            || (sidecar.obs_horizon, sidecar.pred_horizon) != (cfg.obs_horizon, cfg.pred_horizon)
        {
            return Err(Error::Config(
                "checkpoint schedule or horizons differ from the config".into(),
            ));
        }
        let policy = DiffusionPolicy::new(cfg.policy(), cfg.encoder())?;
        let mut params = ParameterStore::<f32>::new();
        policy.init_params(&mut params, &mut rng::stream(0, &[]))?;
        checkpoint::load(&mut params, &dir.join(CHECKPOINT))?;
        Ok(Self {
            policy,
            params,
            sidecar,
            losses: Vec::new(),
        })
    }
}

/// Loads the dataset, trains and writes checkpoint, sidecar and loss trace
/// to `out`.
pub fn train_policy(
    cfg: &RunConfig,
    dataset: &Path,
    out: &Path,
    progress: impl FnMut(usize, f64),
) -> Result<Trained> {
    let policy = DiffusionPolicy::new(cfg.policy(), cfg.encoder())?;
    let (set, manifest) = load_training_set(cfg, &policy, dataset)?;
    let trained = train_on(cfg, policy, &set, &manifest.config_hash, progress)?;
    trained.save(out)?;
    Ok(trained)
}
