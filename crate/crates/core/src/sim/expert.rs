use nalgebra::{Point2, Rotation2, Vector2};
use ndarray::Array2;
use rand::Rng;

use super::env::{step, wrap_angle, DynamicsConfig, SceneState, TaskKind, TaskSpec};
use super::scene::{ObjectInstance, HANDLE};
use crate::error::{Error, Result};
use crate::policy::ChunkPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    /// Distance of the approach waypoint from the handle center, across the
    /// handle axis.
    pub approach_offset: f64,
    /// The waypoint counts as reached within this distance.
    pub waypoint_tol: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            approach_offset: 0.07,
            waypoint_tol: 0.01,
        }
    }
}

/// Scripted demonstrator. The approach side is fixed per episode, which
/// makes demonstrations bimodal.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub config: ExpertConfig,
    /// `+1` approaches from the object's left of the handle axis, `-1` from
    /// the right.
    pub side: f64,
    passed_waypoint: bool,
}

fn clip(v: Vector2<f64>, cap: f64) -> Vector2<f64> {
    let n = v.norm();
    if n > cap {
        v * (cap / n)
    } else {
        v
    }
}

impl Expert {
    pub fn new(config: ExpertConfig, rng: &mut impl Rng) -> Self {
        Self::with_side(config, if rng.random_bool(0.5) { 1.0 } else { -1.0 })
    }

    pub fn with_side(config: ExpertConfig, side: f64) -> Self {
        Self {
            config,
            side,
            passed_waypoint: false,
        }
    }

    /// Approach waypoint in world coordinates, clamped to the reachable
    /// square.
    pub fn waypoint(
        &self,
        state: &SceneState,
        instance: &ObjectInstance,
        dynamics: &DynamicsConfig,
    ) -> Point2<f64> {
        let h = state.pose.to_world(&instance.handle().center);
        let normal = Vector2::new(-state.pose.yaw.sin(), state.pose.yaw.cos());
        let w = h + normal * (self.side * self.config.approach_offset);
        let r = dynamics.reach;
        Point2::new(w.x.clamp(-r, r), w.y.clamp(-r, r))
    }

    fn approach(
        &mut self,
        state: &SceneState,
        instance: &ObjectInstance,
        dynamics: &DynamicsConfig,
    ) -> Result<[f64; 3]> {
        let h = state.pose.to_world(&instance.handle().center);
        if h.x.abs() > dynamics.reach || h.y.abs() > dynamics.reach {
            return Err(Error::Unreachable(format!(
                "handle center ({:.3}, {:.3})",
                h.x, h.y
            )));
        }
        if state.closed {
            return Ok([0.0, 0.0, -1.0]);
        }
        if !self.passed_waypoint {
            let w = self.waypoint(state, instance, dynamics);
            if (w - state.gripper).norm() > self.config.waypoint_tol {
                let d = clip(w - state.gripper, dynamics.max_step);
                return Ok([d.x, d.y, -1.0]);
            }
            self.passed_waypoint = true;
        }
        let d = h - state.gripper;
        if d.norm() <= dynamics.max_step {
            Ok([d.x, d.y, 1.0])
        } else {
            let d = clip(d, dynamics.max_step);
            Ok([d.x, d.y, -1.0])
        }
    }

    /// Next action `[dx, dy, grip]`.
    pub fn action(
        &mut self,
        state: &SceneState,
        instance: &ObjectInstance,
        task: &TaskSpec,
        dynamics: &DynamicsConfig,
    ) -> Result<[f64; 3]> {
        let holding_handle = state
            .grasp
            .is_some_and(|g| instance.parts[g.part].name == HANDLE);
        match task.kind {
            TaskKind::GraspHandle => {
                if holding_handle {
                    Ok([0.0, 0.0, 1.0])
                } else {
                    self.approach(state, instance, dynamics)
                }
            }
            TaskKind::OrientHandle => {
                if holding_handle {
                    let err = wrap_angle(state.pose.yaw);
                    if err.abs() <= 0.5 * task.angle_tol {
                        return Ok([0.0, 0.0, -1.0]);
                    }
                    // Moving the grasp point tangentially spins the object
                    // about its center by atan(step / lever).
                    let lever = state.grasp.map_or(0.0, |g| g.lever);
                    let len = (lever * err.abs().min(1.2).tan()).min(dynamics.max_step);
                    let heading = state.pose.yaw - err.signum() * std::f64::consts::FRAC_PI_2;
                    let m = Rotation2::new(heading) * Vector2::x() * len;
                    Ok([m.x, m.y, 1.0])
                } else if state.handle_grasped {
                    Ok([0.0, 0.0, -1.0])
                } else {
                    self.approach(state, instance, dynamics)
                }
            }
        }
    }
}

/// States visited and actions taken by the expert until success or the
/// task's step cap. `states[t]` is the state `actions[t]` was chosen in.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub states: Vec<SceneState>,
    pub actions: Vec<[f64; 3]>,
    pub success: bool,
    pub final_state: SceneState,
}

pub fn run_expert(
    expert: &mut Expert,
    start: &SceneState,
    instance: &ObjectInstance,
    task: &TaskSpec,
    dynamics: &DynamicsConfig,
) -> Result<Demonstration> {
    let mut state = start.clone();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut success = super::env::check_success(&state, instance, task);
    while !success && actions.len() < task.step_cap {
        let a = expert.action(&state, instance, task, dynamics)?;
        states.push(state.clone());
        actions.push(a);
        state = step(&state, instance, task, dynamics, &a);
        success = super::env::check_success(&state, instance, task);
    }
    Ok(Demonstration {
        states,
        actions,
        success,
        final_state: state,
    })
}

/// The expert as a chunk policy: plans by simulating itself forward.
pub struct ExpertPolicy<'a> {
    pub expert: Expert,
    pub instance: &'a ObjectInstance,
    pub task: TaskSpec,
    pub dynamics: DynamicsConfig,
    pub pred_horizon: usize,
    pub exec_horizon: usize,
}

impl ChunkPolicy<SceneState> for ExpertPolicy<'_> {
    fn plan(&mut self, history: &[SceneState]) -> Result<Array2<f64>> {
        let mut state = history
            .last()
            .ok_or_else(|| Error::DimensionMismatch("empty history".into()))?
            .clone();
        let mut chunk = Array2::zeros((self.pred_horizon, 3));
        let mut planner = self.expert.clone();
        for t in 0..self.pred_horizon {
            if t == self.exec_horizon {
                self.expert = planner.clone();
            }
            let a = planner.action(&state, self.instance, &self.task, &self.dynamics)?;
            chunk.row_mut(t).assign(&ndarray::aview1(&a));
            state = step(&state, self.instance, &self.task, &self.dynamics, &a);
        }
        if self.exec_horizon >= self.pred_horizon {
            self.expert = planner;
        }
        Ok(chunk)
    }
}
