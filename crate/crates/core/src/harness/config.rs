//! Flat `key = value` run configuration.

use std::path::Path;

use nalgebra::Point3;
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::geometry::WorkspaceBounds;
use crate::policy::PolicyConfig;
use crate::sim::{CategoryConfig, DynamicsConfig, ExpertConfig, RenderConfig, TaskKind, TaskSpec};

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
scalar_value!(u64, usize, bool, String);

impl ConfigValue for f64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for Vec<usize> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{e}")))
            .collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for TaskKind {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        match self {
            TaskKind::GraspHandle => "grasp-handle".into(),
            TaskKind::OrientHandle => "orient-handle".into(),
        }
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty = $default:expr,)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = ConfigValue::parse(value)
                            .map_err(|e| Error::Config(format!("{key} = '{value}': {e}")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            }

            /// Every key with its canonical value text, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), ConfigValue::render(&self.$field)),)*]
            }
        }
    };
}

run_config! {
    /// Master seed for collection, training and evaluation.
    seed: u64 = 0,
    task: TaskKind = TaskKind::GraspHandle,
    position_tol: f64 = 0.01,
    angle_tol: f64 = 0.2,
    step_cap: usize = 40,
    max_step: f64 = 0.03,
    grasp_radius: f64 = 0.025,
    reach: f64 = 0.22,
    spawn: f64 = 0.1,
    approach_offset: f64 = 0.07,
    category_seed: u64 = 7,
    instance_noise: f64 = 0.15,
    train_instances: u64 = 5,
    test_instances: u64 = 5,
    views: usize = 4,
    image_width: usize = 64,
    image_height: usize = 64,
    fov_deg: f64 = 45.0,
    camera_distance: f64 = 0.6,
    camera_elevation_deg: f64 = 45.0,
    feature_dim: usize = 16,
    pixel_noise: f64 = 0.1,
    /// Half side of the crop square, meters.
    crop_half_xy: f64 = 0.3,
    crop_min_z: f64 = 0.004,
    crop_max_z: f64 = 0.2,
    field_points: usize = 256,
    fps_seed: u64 = 0,
    weight_scale: f64 = 0.02,
    occlusion_margin: f64 = 0.01,
    /// Semantic channels; must match the reference file.
    parts: usize = 2,
    /// Reference-selection JSON; empty selects the built-in selection.
    refs: String = String::new(),
    ablate_semantics: bool = false,
    enc_centroids1: usize = 64,
    enc_centroids2: usize = 16,
    enc_radius1: f64 = 0.04,
    enc_radius2: f64 = 0.12,
    enc_neighbors: usize = 16,
    enc_widths1: Vec<usize> = vec![64, 64],
    enc_widths2: Vec<usize> = vec![128, 128],
    enc_global: usize = 256,
    enc_proprio: usize = 64,
    coord_scale: f64 = 0.25,
    obs_horizon: usize = 2,
    pred_horizon: usize = 16,
    exec_horizon: usize = 8,
    den_hidden: Vec<usize> = vec![512, 512],
    time_dim: usize = 64,
    diffusion_steps: usize = 100,
    beta_start: f64 = 1e-4,
    beta_end: f64 = 0.02,
    noise_draws: usize = 4,
    demos: usize = 60,
    /// Demonstrate every start state twice, once from each approach side.
    paired_sides: bool = false,
    train_steps: usize = 2000,
    batch_size: usize = 16,
    learning_rate: f64 = 1e-3,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    lr_floor: f64 = 0.1,
    grad_clip: f64 = 1.0,
    eval_episodes: usize = 20,
}

/// Keys that do not influence rendered observations or fields.
const NON_PERCEPTION_KEYS: &[&str] = &[
    "ablate_semantics",
    "enc_centroids1",
    "enc_centroids2",
    "enc_radius1",
    "enc_radius2",
    "enc_neighbors",
    "enc_widths1",
    "enc_widths2",
    "enc_global",
    "enc_proprio",
    "coord_scale",
    "obs_horizon",
    "pred_horizon",
    "exec_horizon",
    "den_hidden",
    "time_dim",
    "diffusion_steps",
    "beta_start",
    "beta_end",
    "noise_draws",
    "train_steps",
    "batch_size",
    "learning_rate",
    "lr_floor",
    "grad_clip",
    "eval_episodes",
];

fn sha_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunConfig {
    /// Parses `key = value` lines. `#` starts a comment; blank lines are
    /// ignored; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    n + 1
                )));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text: every key, declaration order.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        sha_hex(&self.to_text())
    }

    /// Hash over the keys that shape observations, plus the reference
    /// selection text. Keys the field cache.
    pub fn perception_hash(&self, refs_text: &str) -> String {
        let mut text: String = self
            .entries()
            .into_iter()
            .filter(|(k, _)| !NON_PERCEPTION_KEYS.contains(k))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        text.push_str(refs_text);
        sha_hex(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.category().validate()?;
        self.task_spec().validate()?;
        self.encoder().validate()?;
        self.policy().validate()?;
        self.bounds()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.views == 0 || self.image_width < 2 || self.image_height < 2 {
            return bad("need at least one view of at least 2x2 pixels");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.camera_distance > 0.0) {
            return bad("camera field of view and distance must be positive");
        }
        if self.pixel_noise < 0.0 || self.field_points == 0 || self.parts == 0 {
            return bad("pixel noise must be non-negative; field points and parts positive");
        }
        if !(self.weight_scale > 0.0 && self.occlusion_margin >= 0.0) {
            return bad("fusion weight scale must be positive and occlusion margin non-negative");
        }
        if self.train_instances == 0 || self.test_instances == 0 {
            return bad("need at least one instance per split");
        }
        if !(self.max_step > 0.0
            && self.grasp_radius > 0.0
            && self.reach > self.spawn
            && self.spawn >= 0.0)
        {
            return bad("dynamics: step and grasp radius positive, reach beyond spawn region");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return bad("training: batch size, learning rate and clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return bad("lr_floor must be in [0, 1]");
        }
        Ok(())
    }

    pub fn category(&self) -> CategoryConfig {
        CategoryConfig {
            seed: self.category_seed,
            feature_dim: self.feature_dim,
            instance_noise: self.instance_noise,
            ..CategoryConfig::default()
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            position_tol: self.position_tol,
            angle_tol: self.angle_tol,
            step_cap: self.step_cap,
        }
    }

    pub fn dynamics(&self) -> DynamicsConfig {
        DynamicsConfig {
            max_step: self.max_step,
            grasp_radius: self.grasp_radius,
            reach: self.reach,
            spawn: self.spawn,
            ..DynamicsConfig::default()
        }
    }

    pub fn expert(&self) -> ExpertConfig {
        ExpertConfig {
            approach_offset: self.approach_offset,
            ..ExpertConfig::default()
        }
    }

    pub fn render(&self) -> RenderConfig {
        RenderConfig {
            views: self.views,
            width: self.image_width,
            height: self.image_height,
            fov_deg: self.fov_deg,
            distance: self.camera_distance,
            elevation_deg: self.camera_elevation_deg,
            pixel_noise: self.pixel_noise,
            ..RenderConfig::default()
        }
    }

    pub fn bounds(&self) -> Result<WorkspaceBounds> {
        let h = self.crop_half_xy;
        WorkspaceBounds::new(
            Point3::new(-h, -h, self.crop_min_z),
            Point3::new(h, h, self.crop_max_z),
        )
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams {
            weight_scale: self.weight_scale,
            occlusion_margin: self.occlusion_margin,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            centroids: [self.enc_centroids1, self.enc_centroids2],
            radii: [self.enc_radius1, self.enc_radius2],
            neighbors: self.enc_neighbors,
            level1_widths: self.enc_widths1.clone(),
            level2_widths: self.enc_widths2.clone(),
            global_width: self.enc_global,
            proprio_width: self.enc_proprio,
            horizon: self.obs_horizon,
            parts: self.parts,
            coord_scale: self.coord_scale,
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            pred_horizon: self.pred_horizon,
            exec_horizon: self.exec_horizon,
            action_dim: 3,
            hidden: self.den_hidden.clone(),
            time_dim: self.time_dim,
            diffusion_steps: self.diffusion_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            noise_draws: self.noise_draws,
        }
    }
}
