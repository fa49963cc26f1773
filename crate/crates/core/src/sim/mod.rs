//! Planar tabletop simulator: procedurally sized two-part tools, an analytic
//! ray caster that renders depth and synthetic descriptor images, kinematic
//! gripper dynamics, a scripted bimodal expert and success checks.

mod env;
mod expert;
mod render;
mod scene;

pub use env::{
    check_success, step, wrap_angle, DynamicsConfig, Grasp, SceneState, SimEnv, TaskKind, TaskSpec,
};
pub use expert::{run_expert, Demonstration, Expert, ExpertConfig, ExpertPolicy};
pub use render::{cast, ray_box, render_views, ring_cameras, Hit, RenderConfig};
pub use scene::{
    cosine, sample_instance, world_boxes, CategoryConfig, ObjectInstance, ObjectPose, Part, Split,
    SplitRanges, WorldBox, HANDLE, HEAD,
};
