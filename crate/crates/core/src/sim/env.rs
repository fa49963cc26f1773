use std::f64::consts::PI;

use nalgebra::{Point2, Vector2};
use rand::Rng;

use super::render::{render_views, ring_cameras, RenderConfig};
use super::scene::{ObjectInstance, ObjectPose, HANDLE};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthImage, FeatureImage};
use crate::policy::Environment;
use crate::rng;
use crate::semantics::RobotState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Close the gripper on the handle without ever holding the head.
    GraspHandle,
    /// Drag the object until its handle points along +x, then let go.
    OrientHandle,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grasp-handle" => Ok(TaskKind::GraspHandle),
            "orient-handle" => Ok(TaskKind::OrientHandle),
            _ => Err(Error::Config(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub position_tol: f64,
    pub angle_tol: f64,
    pub step_cap: usize,
}

impl TaskSpec {
    pub fn grasp_handle() -> Self {
        Self {
            kind: TaskKind::GraspHandle,
            position_tol: 0.01,
            angle_tol: 0.2,
            step_cap: 40,
        }
    }

    pub fn orient_handle() -> Self {
        Self {
            kind: TaskKind::OrientHandle,
            position_tol: 0.01,
            angle_tol: 0.2,
            step_cap: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position_tol > 0.0 && self.angle_tol > 0.0) {
            return Err(Error::Config("task tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    /// Longest gripper displacement per step, meters.
    pub max_step: f64,
    pub grasp_radius: f64,
    /// The gripper stays within `[-reach, reach]^2`.
    pub reach: f64,
    /// Object center is drawn from `[-spawn, spawn]^2`.
    pub spawn: f64,
    pub home: [f64; 2],
    pub home_jitter: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            max_step: 0.03,
            grasp_radius: 0.025,
            reach: 0.22,
            spawn: 0.1,
            home: [0.0, -0.2],
            home_jitter: 0.02,
        }
    }
}

/// Held part and where it is held, in the object frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grasp {
    pub part: usize,
    pub local: Point2<f64>,
    /// Distance from the grasp point to the object center.
    pub lever: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub pose: ObjectPose,
    pub gripper: Point2<f64>,
    pub closed: bool,
    pub grasp: Option<Grasp>,
    /// A part other than the handle was held at some point.
    pub touched_head: bool,
    pub handle_grasped: bool,
    pub steps: usize,
}

impl SceneState {
    pub fn robot(&self) -> RobotState {
        RobotState {
            x: self.gripper.x,
            y: self.gripper.y,
            closed: self.closed,
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a < -PI {
        a += 2.0 * PI;
    }
    a
}

fn signed_angle(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x * b.y - a.y * b.x).atan2(a.dot(b))
}

/// Advances the scene by one action `[dx, dy, grip]`; grip `> 0` means
/// closed. The displacement is clipped to `max_step` and the gripper to the
/// reachable square. A held object either moves rigidly with the gripper or,
/// for the orientation task, is towed: the center trails the grasp point at
/// a fixed lever.
pub fn step(
    state: &SceneState,
    instance: &ObjectInstance,
    task: &TaskSpec,
    dynamics: &DynamicsConfig,
    action: &[f64],
) -> SceneState {
    let mut next = state.clone();
    let mut delta = Vector2::new(action[0], action[1]);
    if !delta.iter().all(|v| v.is_finite()) {
        delta = Vector2::zeros();
    }
    let n = delta.norm();
    if n > dynamics.max_step {
        delta *= dynamics.max_step / n;
    }
    let old = state.gripper;
    let r = dynamics.reach;
    next.gripper = Point2::new(
        (old.x + delta.x).clamp(-r, r),
        (old.y + delta.y).clamp(-r, r),
    );
    let moved = next.gripper - old;

    if let Some(g) = state.grasp {
        match task.kind {
            TaskKind::GraspHandle => {
                next.pose.x += moved.x;
                next.pose.y += moved.y;
            }
            TaskKind::OrientHandle => {
                let c = Point2::new(state.pose.x, state.pose.y);
                let before = c - old;
                let mut after = c - next.gripper;
                if after.norm() < 1e-12 {
                    after = before;
                }
                let c_new = next.gripper + after.normalize() * g.lever;
                next.pose.yaw = wrap_angle(state.pose.yaw + signed_angle(&before, &after));
                next.pose.x = c_new.x;
                next.pose.y = c_new.y;
            }
        }
    }

    let want_closed = action.get(2).is_some_and(|&g| g > 0.0);
    if want_closed && !state.closed {
        next.closed = true;
        let nearest = instance
            .parts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (next.pose.to_world(&p.center) - next.gripper).norm()))
            .filter(|&(_, d)| d <= dynamics.grasp_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((part, _)) = nearest {
            let local = next.pose.to_local(&next.gripper);
            next.grasp = Some(Grasp {
                part,
                local,
                lever: local.coords.norm(),
            });
            if instance.parts[part].name == HANDLE {
                next.handle_grasped = true;
            } else {
                next.touched_head = true;
            }
        }
    } else if !want_closed && state.closed {
        next.closed = false;
        next.grasp = None;
    }
    next.steps += 1;
    next
}

pub fn check_success(state: &SceneState, instance: &ObjectInstance, task: &TaskSpec) -> bool {
    let handle = instance.part_index(HANDLE);
    match task.kind {
        TaskKind::GraspHandle => match (state.grasp, handle) {
            (Some(g), Some(h)) => {
                g.part == h
                    && (g.local - instance.parts[h].center).norm() <= task.position_tol
                    && !state.touched_head
            }
            _ => false,
        },
        TaskKind::OrientHandle => {
            state.handle_grasped
                && state.grasp.is_none()
                && wrap_angle(state.pose.yaw).abs() <= task.angle_tol
        }
    }
}

/// A running episode: instance, state, cameras and the keyed noise source
/// for rendering.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub instance: ObjectInstance,
    pub state: SceneState,
    pub task: TaskSpec,
    pub dynamics: DynamicsConfig,
    pub render: RenderConfig,
    pub cameras: Vec<CameraModel>,
    pub episode_seed: u64,
}

impl SimEnv {
    /// Fresh episode: object pose and gripper start drawn from
    /// `episode_seed`.
    pub fn reset(
        instance: ObjectInstance,
        task: TaskSpec,
        dynamics: DynamicsConfig,
        render: RenderConfig,
        episode_seed: u64,
    ) -> Result<Self> {
        task.validate()?;
        let mut r = rng::stream(episode_seed, &[0x1a70]);
        let s = dynamics.spawn;
        let pose = ObjectPose {
            x: r.random_range(-s..=s),
            y: r.random_range(-s..=s),
            yaw: r.random_range(-PI..PI),
        };
        let j = dynamics.home_jitter;
        let gripper = Point2::new(
            dynamics.home[0] + r.random_range(-j..=j),
            dynamics.home[1] + r.random_range(-j..=j),
        );
        Self::with_state(
            instance,
            task,
            dynamics,
            render,
            episode_seed,
            SceneState {
                pose,
                gripper,
                closed: false,
                grasp: None,
                touched_head: false,
                handle_grasped: false,
                steps: 0,
            },
        )
    }

    pub fn with_state(
        instance: ObjectInstance,
        task: TaskSpec,
        dynamics: DynamicsConfig,
        render: RenderConfig,
        episode_seed: u64,
        state: SceneState,
    ) -> Result<Self> {
        let cameras = ring_cameras(&render)?;
        Ok(Self {
            instance,
            state,
            task,
            dynamics,
            render,
            cameras,
            episode_seed,
        })
    }

    pub fn step(&mut self, action: &[f64]) {
        self.state = step(
            &self.state,
            &self.instance,
            &self.task,
            &self.dynamics,
            action,
        );
    }

    pub fn success(&self) -> bool {
        check_success(&self.state, &self.instance, &self.task)
    }

    pub fn done(&self) -> bool {
        self.success() || self.state.steps >= self.task.step_cap
    }

    /// Renders the current state. Noise is keyed by the episode seed and
    /// step count, so re-rendering a state gives identical images.
    pub fn render_views(&self) -> Vec<(FeatureImage, DepthImage)> {
        let mut r = rng::stream(self.episode_seed, &[0x9e4d, self.state.steps as u64]);
        render_views(
            &self.instance,
            &self.state.pose,
            &self.cameras,
            self.render.pixel_noise,
            self.render.table_half,
            &mut r,
        )
    }
}

/// Acting on the simulator directly; observations are the full state.
impl Environment for SimEnv {
    type Observation = SceneState;

    fn observe(&mut self) -> Result<SceneState> {
        Ok(self.state.clone())
    }

    fn apply(&mut self, action: &[f64]) -> Result<()> {
        SimEnv::step(self, action);
        Ok(())
    }

    fn succeeded(&self) -> bool {
        self.success()
    }
}
