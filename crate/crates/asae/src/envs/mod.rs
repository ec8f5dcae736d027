//! Partially observable cooperative stochastic games.
//!
//! Every environment hands all agents one shared reward per step, consumes
//! exactly one action per agent, and exposes a global state encoding that is
//! only used by the centralized critic. Per-agent observations are composed
//! as `[env features | agent-id one-hot | last joint action one-hot]`.

pub mod grid;
pub mod matrix;
pub mod rollout;

pub use grid::{GridBattle, GridBattleSpec, OpponentPolicy};
pub use matrix::{exact_joint_q, joint_actions, JointQTable, MatrixGame, MatrixGameSpec};
pub use rollout::{collect_rollouts, Episode, StepRecord, TrajectoryBatch};

use rand_chacha::ChaCha20Rng;

/// Decentralized joint policy: one categorical distribution per agent over
/// its own observation. Implemented by actor snapshots and by test stubs.
pub trait JointPolicy {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn action_probs(&self, agent: usize, obs: &[f64]) -> Vec<f64>;
}

/// Output of one environment transition.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
    /// True only for battle environments when the allied side has eliminated
    /// every opponent.
    pub won: bool,
}

/// The stochastic-game contract: n agents acting simultaneously under a
/// shared reward, with per-agent observations depending only on (state,
/// agent).
pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    /// Whether win/loss is meaningful (battle environments).
    fn has_win_condition(&self) -> bool;
    fn reset(&mut self, rng: &mut ChaCha20Rng) -> (Vec<f64>, Vec<Vec<f64>>);
    fn step(&mut self, joint_action: &[usize]) -> StepOutcome;
}

/// `[features | agent-id one-hot | last joint action one-hot]`.
pub fn compose_observation(
    features: &[f64],
    agent: usize,
    n_agents: usize,
    n_actions: usize,
    last_joint_action: Option<&[usize]>,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(features.len() + n_agents + n_agents * n_actions);
    obs.extend_from_slice(features);
    for a in 0..n_agents {
        obs.push(if a == agent { 1.0 } else { 0.0 });
    }
    match last_joint_action {
        Some(joint) => {
            for &u in joint {
                for k in 0..n_actions {
                    obs.push(if k == u { 1.0 } else { 0.0 });
                }
            }
        }
        None => obs.extend(std::iter::repeat(0.0).take(n_agents * n_actions)),
    }
    obs
}
