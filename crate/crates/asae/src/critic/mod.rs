//! Centralized joint-action-value critic.
//!
//! Input layout: `[global state | other agents' joint action one-hot | agent
//! id one-hot]`; the output is one Q value per candidate action of the
//! queried agent, so a full counterfactual sweep costs a single forward
//! pass. A frozen target copy follows the online parameters with a fixed
//! sync period.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;

use crate::advantage::{CounterfactualSample, QValueFn};
use crate::diffmath::{
    adam_step, forward_mlp, forward_on_tape, Activation, AdamConfig, AdamState, ComputationGraph,
    MlpParams, MlpTapeParams, Tensor,
};
use crate::envs::TrajectoryBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CriticConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub target_sync_period: usize,
    /// Bootstrapped lambda-return targets against the target network; `None`
    /// keeps pure Monte-Carlo returns.
    pub td_lambda: Option<f64>,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            learning_rate: 0.0005,
            target_sync_period: 50,
            td_lambda: None,
        }
    }
}

pub struct JointQCritic {
    params: MlpParams,
    target: MlpParams,
    adam: AdamState,
    n_agents: usize,
    n_actions: usize,
    state_dim: usize,
    sync_period: usize,
    steps_since_sync: usize,
}

impl JointQCritic {
    pub fn new(
        state_dim: usize,
        n_agents: usize,
        n_actions: usize,
        config: &CriticConfig,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let in_dim = state_dim + (n_agents - 1) * n_actions + n_agents;
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(n_actions);
        let params = MlpParams::init(&sizes, config.activation, rng);
        let target = params.clone();
        let adam = AdamState::new(&params, AdamConfig::with_lr(config.learning_rate));
        JointQCritic {
            params,
            target,
            adam,
            n_agents,
            n_actions,
            state_dim,
            sync_period: config.target_sync_period.max(1),
            steps_since_sync: 0,
        }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn set_params(&mut self, params: MlpParams) {
        self.target = params.clone();
        self.adam = AdamState::new(&params, AdamConfig::with_lr(self.adam.config.learning_rate));
        self.params = params;
        self.steps_since_sync = 0;
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + (self.n_agents - 1) * self.n_actions + self.n_agents
    }

    /// `[state | u^{-a} one-hot blocks in ascending other-agent order |
    /// agent-id one-hot]`, validated block by block.
    pub fn encode_input(&self, state: &[f64], others: &[usize], agent: usize) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "critic state block expects {} values, got {}",
                self.state_dim,
                state.len()
            )));
        }
        if others.len() != self.n_agents - 1 {
            return Err(Error::Dimension(format!(
                "critic joint-action block expects {} other agents, got {}",
                self.n_agents - 1,
                others.len()
            )));
        }
        if agent >= self.n_agents {
            return Err(Error::Dimension(format!(
                "critic agent-id block: agent {agent} out of {} agents",
                self.n_agents
            )));
        }
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(state);
        for &u in others {
            if u >= self.n_actions {
                return Err(Error::Dimension(format!(
                    "critic joint-action block: action {u} out of {} actions",
                    self.n_actions
                )));
            }
            for k in 0..self.n_actions {
                input.push(if k == u { 1.0 } else { 0.0 });
            }
        }
        for a in 0..self.n_agents {
            input.push(if a == agent { 1.0 } else { 0.0 });
        }
        Ok(input)
    }

    fn forward_with(&self, params: &MlpParams, input: Vec<f64>) -> Result<Vec<f64>> {
        Ok(forward_mlp(params, &Tensor::vector(input))?.data)
    }

    /// Q values over the queried agent's candidate actions (online net).
    pub fn q_values(&self, state: &[f64], others: &[usize], agent: usize) -> Result<Vec<f64>> {
        let input = self.encode_input(state, others, agent)?;
        self.forward_with(&self.params, input)
    }

    /// Same sweep against the frozen target network.
    pub fn target_q_values(&self, state: &[f64], others: &[usize], agent: usize) -> Result<Vec<f64>> {
        let input = self.encode_input(state, others, agent)?;
        self.forward_with(&self.target, input)
    }

    /// State value from reorganized samples: the policy-weighted average Q
    /// over the queried agent's actions, averaged over the m samples.
    pub fn state_value(
        &self,
        state: &[f64],
        samples: &[CounterfactualSample],
        agent_policy: &[f64],
        agent: usize,
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Argument(
                "state_value needs at least one reorganized sample".into(),
            ));
        }
        if agent_policy.len() != self.n_actions {
            return Err(Error::Dimension(format!(
                "agent policy has {} entries for {} actions",
                agent_policy.len(),
                self.n_actions
            )));
        }
        let q_rows = self.q_values_batch(state, samples, agent)?;
        Ok(crate::advantage::state_value_from_qs(&q_rows, agent_policy).0)
    }

    /// One gradient step on a minibatch; returns the minibatch MSE.
    fn minibatch_step(&mut self, inputs: &[Vec<f64>], actions: &[usize], ys: &[f64]) -> Result<f64> {
        let rows = inputs.len();
        let in_dim = self.input_dim();
        let mut flat = Vec::with_capacity(rows * in_dim);
        for input in inputs {
            flat.extend_from_slice(input);
        }
        let mut graph = ComputationGraph::new();
        let tape_params = MlpTapeParams::load(&mut graph, &self.params);
        let x = graph.constant(Tensor::matrix(rows, in_dim, flat));
        let q = forward_on_tape(&mut graph, &self.params, &tape_params, x)?;
        let picked = graph.gather_rows(q, actions.to_vec());
        let target = graph.constant(Tensor::vector(ys.to_vec()));
        let diff = graph.sub(picked, target);
        let sq = graph.mul(diff, diff);
        let loss = graph.mean(sq);
        let loss_value = graph.value(loss).value();
        if !loss_value.is_finite() {
            return Err(Error::Training(format!(
                "critic minibatch loss is not finite: {loss_value}"
            )));
        }
        let grads = graph.backward(loss)?;
        adam_step(&mut self.params, &tape_params.gradients(&grads), &mut self.adam)?;
        self.steps_since_sync += 1;
        if self.steps_since_sync >= self.sync_period {
            self.target = self.params.clone();
            self.steps_since_sync = 0;
        }
        Ok(loss_value)
    }

    /// Regression on the chosen-action head over every (episode, t, agent)
    /// sample. Returns the mean training MSE per epoch.
    pub fn train(
        &mut self,
        batch: &TrajectoryBatch,
        targets: &CriticTarget,
        epochs: usize,
        minibatch_size: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<f64>> {
        targets.check_alignment(batch)?;
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut actions: Vec<usize> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (e, ep) in batch.episodes.iter().enumerate() {
            for (t, step) in ep.steps.iter().enumerate() {
                for agent in 0..batch.n_agents {
                    let others = crate::advantage::drop_action(&step.actions, agent);
                    inputs.push(self.encode_input(&step.state, &others, agent)?);
                    actions.push(step.actions[agent]);
                    ys.push(targets.values[e][t][agent]);
                }
            }
        }
        let total = inputs.len();
        if total == 0 {
            return Ok(Vec::new());
        }
        let mb = minibatch_size.max(1).min(total);
        let mut order: Vec<usize> = (0..total).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut epoch_sse = 0.0;
            for chunk in order.chunks(mb) {
                let mb_inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
                let mb_actions: Vec<usize> = chunk.iter().map(|&i| actions[i]).collect();
                let mb_ys: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
                let mse = self.minibatch_step(&mb_inputs, &mb_actions, &mb_ys)?;
                epoch_sse += mse * chunk.len() as f64;
            }
            curve.push(epoch_sse / total as f64);
        }
        Ok(curve)
    }
}

impl QValueFn for JointQCritic {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn q_values(&self, state: &[f64], others: &[usize], agent: usize) -> Result<Vec<f64>> {
        JointQCritic::q_values(self, state, others, agent)
    }

    fn q_values_batch(
        &self,
        state: &[f64],
        others_list: &[CounterfactualSample],
        agent: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let rows = others_list.len();
        if rows == 0 {
            return Ok(Vec::new());
        }
        let in_dim = self.input_dim();
        let mut flat = Vec::with_capacity(rows * in_dim);
        for cf in others_list {
            flat.extend_from_slice(&self.encode_input(state, &cf.other_actions, agent)?);
        }
        let out = forward_mlp(&self.params, &Tensor::matrix(rows, in_dim, flat))?;
        Ok((0..rows).map(|r| out.row(r).to_vec()).collect())
    }
}

/// Per (episode, t, agent) regression targets.
#[derive(Debug, Clone)]
pub struct CriticTarget {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl CriticTarget {
    /// Monte-Carlo targets: the discounted return G_t, shared by all agents.
    pub fn monte_carlo(batch: &TrajectoryBatch) -> Self {
        let values = batch
            .episodes
            .iter()
            .map(|ep| {
                ep.returns
                    .iter()
                    .map(|&g| vec![g; batch.n_agents])
                    .collect()
            })
            .collect();
        CriticTarget { values }
    }

    /// Lambda returns bootstrapped from the frozen target network at the
    /// realized next actions; the final step of each episode takes its raw
    /// reward.
    pub fn td_lambda(batch: &TrajectoryBatch, critic: &JointQCritic, lambda: f64) -> Result<Self> {
        let mut values = Vec::with_capacity(batch.episodes.len());
        for ep in &batch.episodes {
            let horizon = ep.len();
            let mut ep_vals = vec![vec![0.0; batch.n_agents]; horizon];
            for agent in 0..batch.n_agents {
                let mut next_lambda_return = 0.0;
                for t in (0..horizon).rev() {
                    let step = &ep.steps[t];
                    let y = if t + 1 < horizon {
                        let next = &ep.steps[t + 1];
                        let others = crate::advantage::drop_action(&next.actions, agent);
                        let q_next =
                            critic.target_q_values(&next.state, &others, agent)?[next.actions[agent]];
                        step.reward
                            + batch.gamma
                                * ((1.0 - lambda) * q_next + lambda * next_lambda_return)
                    } else {
                        step.reward
                    };
                    ep_vals[t][agent] = y;
                    next_lambda_return = y;
                }
            }
            values.push(ep_vals);
        }
        Ok(CriticTarget { values })
    }

    pub fn check_alignment(&self, batch: &TrajectoryBatch) -> Result<()> {
        if self.values.len() != batch.episodes.len() {
            return Err(Error::Data("targets not aligned with batch episodes".into()));
        }
        for (vals, ep) in self.values.iter().zip(&batch.episodes) {
            if vals.len() != ep.len() {
                return Err(Error::Data("targets not aligned with episode steps".into()));
            }
            for ts in vals {
                if ts.len() != batch.n_agents || ts.iter().any(|y| !y.is_finite()) {
                    return Err(Error::Data("target row malformed or non-finite".into()));
                }
            }
        }
        Ok(())
    }
}
