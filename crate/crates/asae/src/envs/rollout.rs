//! On-policy rollout collection.

use rand_chacha::ChaCha20Rng;

use crate::diffmath::sample_categorical;
use crate::envs::{Environment, JointPolicy};
use crate::error::{Error, Result};

/// One environment transition as stored during collection.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// ln pi_{i-1}^a(u^a | obs^a) for the stored action, per agent.
    pub log_probs: Vec<f64>,
    /// Full behavior distributions, cached for estimation and KL reports.
    pub policy_probs: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    /// State after the final step (terminal or horizon cut).
    pub final_state: Vec<f64>,
    /// Discounted returns G_t aligned with steps.
    pub returns: Vec<f64>,
    pub won: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted episode reward.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Per-iteration collection of episodes under one behavior policy.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub episodes: Vec<Episode>,
    pub n_agents: usize,
    pub n_actions: usize,
    pub gamma: f64,
}

impl TrajectoryBatch {
    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.total_reward()).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn win_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.won).count() as f64 / self.episodes.len() as f64
    }
}

/// Discounted returns: G_t = r_t + gamma * G_{t+1}, G at the final step
/// equal to its reward.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    returns
}

/// Roll out `episode_count` episodes with decentralized execution: each
/// actor samples from its own observation only.
pub fn collect_rollouts(
    env: &mut dyn Environment,
    policy: &dyn JointPolicy,
    episode_count: usize,
    gamma: f64,
    rng: &mut ChaCha20Rng,
) -> Result<TrajectoryBatch> {
    if policy.n_actions() != env.n_actions() || policy.n_agents() != env.n_agents() {
        return Err(Error::Dimension(format!(
            "policy is {} agents x {} actions, environment needs {} x {}",
            policy.n_agents(),
            policy.n_actions(),
            env.n_agents(),
            env.n_actions()
        )));
    }
    let n = env.n_agents();
    let mut episodes = Vec::with_capacity(episode_count);
    for _ in 0..episode_count {
        let (mut state, mut observations) = env.reset(rng);
        let mut steps: Vec<StepRecord> = Vec::new();
        let mut won = false;
        let mut done = false;
        for _t in 0..env.max_steps() {
            let mut actions = Vec::with_capacity(n);
            let mut log_probs = Vec::with_capacity(n);
            let mut policy_probs = Vec::with_capacity(n);
            for a in 0..n {
                let probs = policy.action_probs(a, &observations[a]);
                let (u, lp) = sample_categorical(&probs, rng)?;
                actions.push(u);
                log_probs.push(lp);
                policy_probs.push(probs);
            }
            let outcome = env.step(&actions);
            steps.push(StepRecord {
                state,
                observations,
                actions,
                log_probs,
                policy_probs,
                reward: outcome.reward,
                done: outcome.done,
            });
            state = outcome.state;
            observations = outcome.observations;
            won = outcome.won;
            done = outcome.done;
            if done {
                break;
            }
        }
        if !done {
            return Err(Error::Data(
                "episode exceeded environment horizon without terminating".into(),
            ));
        }
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let returns = discounted_returns(&rewards, gamma);
        episodes.push(Episode {
            steps,
            final_state: state,
            returns,
            won,
        });
    }
    Ok(TrajectoryBatch {
        episodes,
        n_agents: n,
        n_actions: env.n_actions(),
        gamma,
    })
}
