//! Run configuration, demonstration datasets, training, evaluation and
//! heatmap export.

mod config;
mod dataset;
mod eval;
mod gradcheck;
mod heatmap;
mod observe;
mod train;

pub use config::RunConfig;
pub use dataset::{
    attempt_seed, attempt_start, collect_demos, decode_episode, decode_feature_map, encode_episode,
    feature_map_path, read_episode, write_episode, Episode, EpisodeMeta, Manifest, StepRecord,
    EPISODE_MAGIC, EPISODE_VERSION, MANIFEST, MAX_EXPERT_FAILURE, ROBOT_DIM,
};
pub use eval::{
    approach_side, eval_env, eval_seed, evaluate, evaluate_expert, DiffusionRunner, EpisodeOutcome,
    EvalReport, PerceivingEnv,
};
pub use gradcheck::{run_gradcheck, GradCheckSummary};
pub use heatmap::{
    export_heatmap, hot, render_heatmap, Heatmap, BACKGROUND, HEATMAP_SIZE, SPLAT_RADIUS,
};
pub use observe::{
    builtin_scene, cache_dir, cached_fields, decode_fields, encode_fields, generate_selection,
    load_selection, part_separation, reference_images, FrameField, Perception, Separation,
    CACHE_MAGIC, CACHE_VERSION,
};
pub use train::{
    action_chunk, learning_rate, load_training_set, train_on, train_policy, write_loss_csv,
    Sidecar, Trained, TrainingSet, CHECKPOINT, LOSS_CSV, SIDECAR,
};
