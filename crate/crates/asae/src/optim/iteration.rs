//! The full centralized-training / decentralized-execution iteration.

use rand_chacha::ChaCha20Rng;

use crate::advantage::{estimate_batch, EstimatorConfig, QValueFn};
use crate::critic::{CriticTarget, JointQCritic};
use crate::diffmath::{
    adam_step, argmax, forward_mlp, softmax, Activation, AdamConfig, AdamState, MlpParams, Tensor,
};
use crate::envs::matrix::JointQTable;
use crate::envs::{collect_rollouts, Environment, JointPolicy};
use crate::error::{Error, Result};
use crate::optim::{
    clipped_surrogate, mean_policy_kl, PolicySnapshot, TrustRegionConfig,
};
use crate::seeding::{mix, substream, STREAM_ACTOR_INIT, STREAM_CRITIC_SHUFFLE, STREAM_EVAL, STREAM_ROLLOUT};

/// How agents consume the shared iteration data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSchedule {
    /// All agents update against the same frozen snapshot (one epoch per
    /// iteration at the joint level).
    Synchronous,
}

/// Everything one `train_iteration` call needs beyond the components.
#[derive(Debug, Clone)]
pub struct IterationConfig {
    pub batch_episodes: usize,
    pub gamma: f64,
    pub critic_epochs: usize,
    pub critic_minibatch: usize,
    pub trust: TrustRegionConfig,
    pub estimator: EstimatorConfig,
    pub schedule: UpdateSchedule,
    /// Lambda-return critic targets when set; Monte-Carlo returns otherwise.
    pub critic_td_lambda: Option<f64>,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            batch_episodes: 32,
            gamma: 0.99,
            critic_epochs: 10,
            critic_minibatch: 64,
            trust: TrustRegionConfig::default(),
            estimator: EstimatorConfig::default(),
            schedule: UpdateSchedule::Synchronous,
            critic_td_lambda: None,
        }
    }
}

/// The n decentralized actors with their optimizer states.
pub struct ActorSet {
    pub actors: Vec<MlpParams>,
    pub opts: Vec<AdamState>,
}

impl ActorSet {
    pub fn init(
        n_agents: usize,
        obs_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        activation: Activation,
        learning_rate: f64,
        seed: u64,
    ) -> Self {
        let mut actors = Vec::with_capacity(n_agents);
        let mut opts = Vec::with_capacity(n_agents);
        for agent in 0..n_agents {
            let mut sizes = vec![obs_dim];
            sizes.extend_from_slice(hidden);
            sizes.push(n_actions);
            let mut rng = substream(seed, &[STREAM_ACTOR_INIT, agent as u64]);
            let params = MlpParams::init(&sizes, activation, &mut rng);
            let opt = AdamState::new(&params, AdamConfig::with_lr(learning_rate));
            actors.push(params);
            opts.push(opt);
        }
        ActorSet { actors, opts }
    }

    pub fn n_agents(&self) -> usize {
        self.actors.len()
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot::new(&self.actors)
    }

    pub fn action_probs(&self, agent: usize, obs: &[f64]) -> Result<Vec<f64>> {
        let logits = forward_mlp(&self.actors[agent], &Tensor::vector(obs.to_vec()))?;
        softmax(&logits.data)
    }
}

#[derive(Debug, Clone)]
pub struct AgentReport {
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct IterationReport {
    pub env_steps: usize,
    pub mean_return: f64,
    pub win_rate: f64,
    pub critic_loss: f64,
    pub agents: Vec<AgentReport>,
    pub snapshot_hash: u64,
    /// Advantage entries whose snapshot stamp differed from the iteration
    /// snapshot. Must be zero; reported rather than asserted so audits can
    /// surface in metrics.
    pub audit_violations: usize,
}

fn mean_entropy(actor: &MlpParams, batch: &crate::envs::TrajectoryBatch, agent: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in &batch.episodes {
        for step in &ep.steps {
            let logits = forward_mlp(actor, &Tensor::vector(step.observations[agent].clone()))?;
            total += crate::diffmath::entropy(&softmax(&logits.data)?);
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// One synchronous training iteration: collect rollouts under the frozen
/// snapshot, fit the critic, estimate every agent's marginal advantages
/// against the same snapshot, then run each agent's clipped sub-objective
/// epochs independently.
#[allow(clippy::too_many_arguments)]
pub fn train_iteration(
    env: &mut dyn Environment,
    actor_set: &mut ActorSet,
    critic: &mut JointQCritic,
    config: &IterationConfig,
    seed: u64,
    iteration: usize,
    exact_tables: Option<&[JointQTable]>,
) -> Result<IterationReport> {
    config.trust.validate()?;
    config.estimator.validate()?;
    let n = actor_set.n_agents();
    let iter_tag = iteration as u64;

    // 1. Freeze the joint behavior policy.
    let snapshot = actor_set.snapshot();

    // 2. Rollouts under the snapshot.
    let mut rollout_rng = substream(seed, &[STREAM_ROLLOUT, iter_tag]);
    let batch = collect_rollouts(env, &snapshot, config.batch_episodes, config.gamma, &mut rollout_rng)?;
    snapshot.verify_batch(&batch)?;

    // 3. Critic regression on collected targets.
    let targets = match config.critic_td_lambda {
        Some(lambda) => CriticTarget::td_lambda(&batch, critic, lambda)?,
        None => CriticTarget::monte_carlo(&batch),
    };
    let mut critic_rng = substream(seed, &[STREAM_CRITIC_SHUFFLE, iter_tag]);
    let curve = critic.train(
        &batch,
        &targets,
        config.critic_epochs,
        config.critic_minibatch,
        &mut critic_rng,
    )?;
    let critic_loss = curve.last().copied().unwrap_or(0.0);

    // 4. Marginal advantages for every (episode, t, agent) against the one
    //    snapshot; the per-entry stamp makes the synchrony auditable.
    let advantage_seed = mix(seed, &[iter_tag]);
    let advantages = estimate_batch(
        critic as &dyn QValueFn,
        &batch,
        &config.estimator,
        advantage_seed,
        snapshot.hash(),
        exact_tables,
    )?;
    if !advantages.all_finite() {
        return Err(Error::Training(format!(
            "non-finite advantage estimate at iteration {iteration}"
        )));
    }
    let audit_violations = advantages
        .entries
        .iter()
        .flatten()
        .flatten()
        .filter(|e| e.snapshot_hash != snapshot.hash())
        .count();

    // 5. Independent per-agent sub-objective epochs, all referencing the
    //    same snapshot and advantage table.
    let UpdateSchedule::Synchronous = config.schedule;
    let mut agents = Vec::with_capacity(n);
    for agent in 0..n {
        let mut surrogate_value = 0.0;
        let mut clip_fraction = 0.0;
        let mut kl = 0.0;
        let mut epochs_run = 0;
        for _epoch in 0..config.trust.actor_epochs {
            let build = clipped_surrogate(
                &actor_set.actors[agent],
                agent,
                &batch,
                &advantages,
                &config.trust,
            )?;
            surrogate_value = build.surrogate_value;
            clip_fraction = build.clip_fraction;
            let grads = build.graph.backward(build.loss)?;
            adam_step(
                &mut actor_set.actors[agent],
                &build.tape_params.gradients(&grads),
                &mut actor_set.opts[agent],
            )?;
            epochs_run += 1;
            kl = mean_policy_kl(&actor_set.actors[agent], &snapshot, agent, &batch)?;
            if config.trust.kl_early_stop && kl > config.trust.delta2 {
                break;
            }
        }
        if !actor_set.actors[agent].all_finite() {
            return Err(Error::Training(format!(
                "actor {agent} parameters became non-finite at iteration {iteration}"
            )));
        }
        let entropy = mean_entropy(&actor_set.actors[agent], &batch, agent)?;
        agents.push(AgentReport {
            surrogate: surrogate_value,
            kl,
            entropy,
            clip_fraction,
            epochs_run,
        });
    }

    Ok(IterationReport {
        env_steps: batch.total_steps(),
        mean_return: batch.mean_return(),
        win_rate: batch.win_rate(),
        critic_loss,
        agents,
        snapshot_hash: snapshot.hash(),
        audit_violations,
    })
}

/// Greedy wrapper over a set of actors.
struct GreedyPolicy<'a> {
    actors: &'a [MlpParams],
}

impl JointPolicy for GreedyPolicy<'_> {
    fn n_agents(&self) -> usize {
        self.actors.len()
    }

    fn n_actions(&self) -> usize {
        self.actors[0].out_dim()
    }

    fn action_probs(&self, agent: usize, obs: &[f64]) -> Vec<f64> {
        let logits = forward_mlp(&self.actors[agent], &Tensor::vector(obs.to_vec()))
            .expect("actor forward");
        let probs = softmax(&logits.data).expect("softmax");
        let mut one_hot = vec![0.0; probs.len()];
        one_hot[argmax(&probs)] = 1.0;
        one_hot
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub return_std_err: f64,
    pub win_rate: f64,
}

/// Run evaluation episodes, stochastic or greedy.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    actors: &[MlpParams],
    episodes: usize,
    greedy: bool,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let mut rng: ChaCha20Rng = substream(seed, &[STREAM_EVAL]);
    let snapshot = PolicySnapshot::new(actors);
    let greedy_policy = GreedyPolicy { actors };
    let policy: &dyn JointPolicy = if greedy { &greedy_policy } else { &snapshot };
    let batch = collect_rollouts(env, policy, episodes, 1.0, &mut rng)?;
    let returns: Vec<f64> = batch.episodes.iter().map(|e| e.total_reward()).collect();
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let std_err = if episodes > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (episodes - 1) as f64;
        (var / episodes as f64).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        episodes,
        mean_return: mean,
        return_std_err: std_err,
        win_rate: batch.win_rate(),
    })
}

// Re-exported for ActorSet initialization determinism tests.
pub(crate) const _ACTOR_INIT_STREAM: u64 = STREAM_ACTOR_INIT;
