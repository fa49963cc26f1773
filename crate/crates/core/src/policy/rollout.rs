use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::Result;

/// Something a chunk policy can act in.
pub trait Environment {
    type Observation: Clone;

    fn observe(&mut self) -> Result<Self::Observation>;
    fn apply(&mut self, action: &[f64]) -> Result<()>;
    fn succeeded(&self) -> bool;
}

/// Maps the last `obs_horizon` observations (oldest first) to an action
/// chunk of shape `pred_horizon x action_dim`.
pub trait ChunkPolicy<O> {
    fn plan(&mut self, history: &[O]) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub actions: Vec<Vec<f64>>,
    pub success: bool,
    pub chunks: usize,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// Plans a chunk, executes its first `exec_horizon` actions, and repeats
/// until the environment reports success or `step_cap` actions were taken.
/// Before the first step the history is padded with the initial
/// observation.
pub fn receding_horizon_execute<E, P>(
    policy: &mut P,
    env: &mut E,
    obs_horizon: usize,
    exec_horizon: usize,
    step_cap: usize,
) -> Result<Rollout>
where
    E: Environment,
    P: ChunkPolicy<E::Observation>,
{
    let mut rollout = Rollout {
        actions: Vec::new(),
        success: false,
        chunks: 0,
    };
    if step_cap == 0 {
        return Ok(rollout);
    }
    let first = env.observe()?;
    let mut history: VecDeque<E::Observation> =
        std::iter::repeat_n(first, obs_horizon.max(1)).collect();
    // Only the observations that end up in the next history are rendered.
    let observe_from = exec_horizon.saturating_sub(obs_horizon);
    while rollout.steps() < step_cap {
        let window: Vec<E::Observation> = history.iter().cloned().collect();
        let chunk = policy.plan(&window)?;
        rollout.chunks += 1;
        for (j, row) in chunk.rows().into_iter().take(exec_horizon).enumerate() {
            let action = row.to_vec();
            env.apply(&action)?;
            rollout.actions.push(action);
            if env.succeeded() {
                rollout.success = true;
                return Ok(rollout);
            }
            if rollout.steps() >= step_cap {
                return Ok(rollout);
            }
            if j >= observe_from {
                history.pop_front();
                history.push_back(env.observe()?);
            }
        }
    }
    Ok(rollout)
}
