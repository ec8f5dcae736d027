//! Per-agent clipped policy optimization under KL restrictions.
//!
//! Each training iteration freezes all actors into a `PolicySnapshot`,
//! collects rollouts and advantage estimates against that single snapshot,
//! and then optimizes every agent's clipped surrogate sub-objective
//! independently. The per-agent KL budget `delta2` stands in for the joint
//! restriction on the other agents' policies: the joint KL of a product
//! policy decomposes into the sum of per-agent KLs, so bounding each factor
//! bounds the joint.

mod iteration;

pub use iteration::{
    evaluate_policy, train_iteration, ActorSet, AgentReport, EvalReport, IterationConfig,
    IterationReport, UpdateSchedule,
};

use crate::advantage::AdvantageTable;
use crate::diffmath::{
    forward_mlp, forward_on_tape, log_softmax, softmax, ComputationGraph, MlpParams,
    MlpTapeParams, NodeId, Tensor,
};
use crate::envs::{JointPolicy, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::seeding::hash_f64s;

/// Frozen copies of all actors at the start of an iteration.
pub struct PolicySnapshot {
    actors: Vec<MlpParams>,
    hash: u64,
}

impl PolicySnapshot {
    pub fn new(actors: &[MlpParams]) -> Self {
        let actors: Vec<MlpParams> = actors.to_vec();
        let hash = hash_f64s(actors.iter().flat_map(|p| p.flat_values()));
        PolicySnapshot { actors, hash }
    }

    /// Content hash over every parameter bit; estimates stamped with this
    /// value provably reference this snapshot.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn actor(&self, agent: usize) -> &MlpParams {
        &self.actors[agent]
    }

    pub fn log_prob(&self, agent: usize, obs: &[f64], action: usize) -> Result<f64> {
        let logits = forward_mlp(&self.actors[agent], &Tensor::vector(obs.to_vec()))?;
        Ok(log_softmax(&logits.data)?[action])
    }

    /// Check that stored behavior log-probs reproduce from the frozen
    /// parameters within 1e-10.
    pub fn verify_batch(&self, batch: &TrajectoryBatch) -> Result<()> {
        for ep in &batch.episodes {
            for step in &ep.steps {
                for agent in 0..batch.n_agents {
                    let lp = self.log_prob(agent, &step.observations[agent], step.actions[agent])?;
                    if (lp - step.log_probs[agent]).abs() > 1e-10 {
                        return Err(Error::Data(format!(
                            "stored log-prob {} does not reproduce from the snapshot ({lp})",
                            step.log_probs[agent]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl JointPolicy for PolicySnapshot {
    fn n_agents(&self) -> usize {
        self.actors.len()
    }

    fn n_actions(&self) -> usize {
        self.actors[0].out_dim()
    }

    fn action_probs(&self, agent: usize, obs: &[f64]) -> Vec<f64> {
        let logits = forward_mlp(&self.actors[agent], &Tensor::vector(obs.to_vec()))
            .expect("snapshot actor forward");
        softmax(&logits.data).expect("snapshot softmax")
    }
}

/// Surrogate objective forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateForm {
    /// Pessimistic PPO bound: mean of min(r * A, clip(r) * A).
    PpoMin,
    /// Plain clipped ratio: mean of clip(r) * A.
    PaperClip,
}

impl SurrogateForm {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "ppo-min" => Ok(SurrogateForm::PpoMin),
            "paper-clip" => Ok(SurrogateForm::PaperClip),
            other => Err(Error::Argument(format!(
                "unknown surrogate `{other}` (known: ppo-min, paper-clip)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            SurrogateForm::PpoMin => "ppo-min",
            SurrogateForm::PaperClip => "paper-clip",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrustRegionConfig {
    /// Clip range epsilon of the surrogate ratio.
    pub clip_range: f64,
    /// Per-agent KL budget delta2; the joint others' budget is
    /// delta1 = (n-1) * delta2 by construction.
    pub delta2: f64,
    pub actor_epochs: usize,
    pub kl_early_stop: bool,
    pub surrogate: SurrogateForm,
    pub entropy_coef: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            clip_range: 0.1,
            delta2: 0.01,
            actor_epochs: 4,
            kl_early_stop: true,
            surrogate: SurrogateForm::PpoMin,
            entropy_coef: 0.0,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return Err(Error::Argument(format!(
                "clip range must lie in (0, 1), got {}",
                self.clip_range
            )));
        }
        if self.delta2 <= 0.0 {
            return Err(Error::Argument("delta2 must be positive".into()));
        }
        if self.actor_epochs == 0 {
            return Err(Error::Argument("actor_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Joint KL budget over the n-1 other agents.
    pub fn delta1(&self, n_agents: usize) -> f64 {
        (n_agents.saturating_sub(1)) as f64 * self.delta2
    }
}

/// KL(p || q) for categorical distributions on the same support. A zero in
/// q where p has mass yields +infinity as a flagged value; mismatched
/// support lengths are an error.
pub fn policy_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "KL support mismatch: {} vs {} actions",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk == 0.0 {
            continue;
        }
        if qk == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pk * (pk / qk).ln();
    }
    // Rounding can push tiny negative values below zero when p ~ q.
    Ok(kl.max(0.0))
}

/// KL between two product distributions given per-factor pairs, computed by
/// direct enumeration over the product support. The enumeration route is
/// kept independent of per-factor summation so the additivity identity is a
/// real check.
pub fn joint_policy_kl(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("joint_policy_kl needs at least one pair".into()));
    }
    let mut support = 1usize;
    for (p, q) in pairs {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::Argument("joint KL factor support mismatch".into()));
        }
        support = support.saturating_mul(p.len());
        if support > 1_000_000 {
            return Err(Error::Capacity {
                needed: support,
                limit: 1_000_000,
            });
        }
    }
    let mut combo = vec![0usize; pairs.len()];
    let mut kl = 0.0;
    loop {
        let mut p_joint = 1.0;
        let mut q_joint = 1.0;
        for (i, &c) in combo.iter().enumerate() {
            p_joint *= pairs[i].0[c];
            q_joint *= pairs[i].1[c];
        }
        if p_joint > 0.0 {
            if q_joint == 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += p_joint * (p_joint / q_joint).ln();
        }
        // Mixed-radix increment over the product support.
        let mut slot = pairs.len();
        loop {
            if slot == 0 {
                return Ok(kl.max(0.0));
            }
            slot -= 1;
            combo[slot] += 1;
            if combo[slot] < pairs[slot].0.len() {
                break;
            }
            combo[slot] = 0;
        }
    }
}

/// A surrogate loss built on a fresh tape, ready for backward.
pub struct SurrogateBuild {
    pub graph: ComputationGraph,
    pub loss: NodeId,
    pub tape_params: MlpTapeParams,
    /// Objective value (the loss is its negation, before the entropy bonus).
    pub surrogate_value: f64,
    /// Fraction of timesteps whose ratio left [1 - eps, 1 + eps].
    pub clip_fraction: f64,
}

/// Build the clipped surrogate loss for one agent over a whole batch. The
/// ratio is exp(log pi_i - log pi_{i-1}) at the stored actions; advantages
/// enter as constants, so the loss differentiates through actor `agent`'s
/// parameters only.
pub fn clipped_surrogate(
    actor: &MlpParams,
    agent: usize,
    batch: &TrajectoryBatch,
    advantages: &AdvantageTable,
    config: &TrustRegionConfig,
) -> Result<SurrogateBuild> {
    config.validate()?;
    let mut obs_flat: Vec<f64> = Vec::new();
    let mut actions: Vec<usize> = Vec::new();
    let mut old_log_probs: Vec<f64> = Vec::new();
    let mut adv: Vec<f64> = Vec::new();
    for (e, ep) in batch.episodes.iter().enumerate() {
        for (t, step) in ep.steps.iter().enumerate() {
            if !step.log_probs[agent].is_finite() {
                return Err(Error::Data(format!(
                    "zero behavior probability stored for agent {agent} at episode {e} step {t}"
                )));
            }
            obs_flat.extend_from_slice(&step.observations[agent]);
            actions.push(step.actions[agent]);
            old_log_probs.push(step.log_probs[agent]);
            adv.push(advantages.entry(e, t, agent).value);
        }
    }
    let rows = actions.len();
    if rows == 0 {
        return Err(Error::Data("empty batch for surrogate".into()));
    }
    let obs_dim = actor.in_dim();
    let eps = config.clip_range;

    let mut graph = ComputationGraph::new();
    let tape_params = MlpTapeParams::load(&mut graph, actor);
    let x = graph.constant(Tensor::matrix(rows, obs_dim, obs_flat));
    let logits = forward_on_tape(&mut graph, actor, &tape_params, x)?;
    let lsm = graph.log_softmax_rows(logits);
    let new_log_probs = graph.gather_rows(lsm, actions);
    let old = graph.constant(Tensor::vector(old_log_probs));
    let log_ratio = graph.sub(new_log_probs, old);
    let ratio = graph.exp(log_ratio);
    let adv_node = graph.constant(Tensor::vector(adv));
    let clipped = graph.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let clipped_term = graph.mul(clipped, adv_node);
    let objective = match config.surrogate {
        SurrogateForm::PpoMin => {
            let raw_term = graph.mul(ratio, adv_node);
            let per_step = graph.min_elem(raw_term, clipped_term);
            graph.mean(per_step)
        }
        SurrogateForm::PaperClip => graph.mean(clipped_term),
    };
    let mut loss = graph.neg(objective);
    if config.entropy_coef > 0.0 {
        let probs = graph.exp(lsm);
        let plogp = graph.mul(probs, lsm);
        let neg_ent_rows = graph.row_sum(plogp);
        let neg_ent = graph.mean(neg_ent_rows);
        // loss += coef * mean(sum p log p) = -coef * entropy
        let scaled = graph.mul_scalar(neg_ent, config.entropy_coef);
        loss = graph.add(loss, scaled);
    }
    let surrogate_value = graph.value(objective).value();
    if !surrogate_value.is_finite() {
        return Err(Error::Training(format!(
            "surrogate objective for agent {agent} is not finite"
        )));
    }
    let ratio_vals = &graph.value(ratio).data;
    let clip_fraction = ratio_vals
        .iter()
        .filter(|&&r| r < 1.0 - eps || r > 1.0 + eps)
        .count() as f64
        / rows as f64;
    Ok(SurrogateBuild {
        graph,
        loss,
        tape_params,
        surrogate_value,
        clip_fraction,
    })
}

/// Result of the combined-restriction diagnostic.
#[derive(Debug, Clone)]
pub struct RestrictionReport {
    /// Mean per-state KL[pi_i^a || pi_{i-1}^a] per agent.
    pub per_agent_kl: Vec<f64>,
    /// True iff every agent's KL is within delta2.
    pub verdict: bool,
    /// Agents exceeding the budget.
    pub offenders: Vec<usize>,
    /// Max deviation of joint KL over any others-set beyond the sum of its
    /// per-agent KLs, measured on sampled states (should be <= ~1e-10).
    pub joint_vs_sum_max_excess: f64,
}

/// Mean per-state KL of one agent's current policy against the snapshot.
pub fn mean_policy_kl(
    actor: &MlpParams,
    snapshot: &PolicySnapshot,
    agent: usize,
    batch: &TrajectoryBatch,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in &batch.episodes {
        for step in &ep.steps {
            let logits = forward_mlp(actor, &Tensor::vector(step.observations[agent].clone()))?;
            let p = softmax(&logits.data)?;
            let q = snapshot.action_probs(agent, &step.observations[agent]);
            total += policy_kl(&p, &q)?;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Verify the per-agent KL budgets and, diagnostically, that the joint KL of
/// every others-set stays within the sum of its per-agent KLs on sampled
/// states.
pub fn restriction_check(
    snapshot: &PolicySnapshot,
    actors: &[MlpParams],
    batch: &TrajectoryBatch,
    config: &TrustRegionConfig,
) -> Result<RestrictionReport> {
    if batch.episodes.is_empty() {
        return Err(Error::Argument("restriction_check needs a non-empty batch".into()));
    }
    let n = batch.n_agents;
    let mut per_agent_kl = Vec::with_capacity(n);
    for (agent, actor) in actors.iter().enumerate() {
        per_agent_kl.push(mean_policy_kl(actor, snapshot, agent, batch)?);
    }
    let offenders: Vec<usize> = per_agent_kl
        .iter()
        .enumerate()
        .filter(|(_, &kl)| kl > config.delta2)
        .map(|(a, _)| a)
        .collect();

    // Joint-vs-sum diagnostic on a handful of sampled states.
    let mut max_excess: f64 = 0.0;
    for ep in batch.episodes.iter().take(4) {
        if let Some(step) = ep.steps.first() {
            for excluded in 0..n {
                let mut pairs = Vec::with_capacity(n - 1);
                let mut sum = 0.0;
                for (agent, actor) in actors.iter().enumerate() {
                    if agent == excluded {
                        continue;
                    }
                    let logits =
                        forward_mlp(actor, &Tensor::vector(step.observations[agent].clone()))?;
                    let p = softmax(&logits.data)?;
                    let q = snapshot.action_probs(agent, &step.observations[agent]);
                    sum += policy_kl(&p, &q)?;
                    pairs.push((p, q));
                }
                if pairs.is_empty() {
                    continue;
                }
                let joint = joint_policy_kl(&pairs)?;
                max_excess = max_excess.max(joint - sum);
            }
        }
    }
    Ok(RestrictionReport {
        verdict: offenders.is_empty(),
        per_agent_kl,
        offenders,
        joint_vs_sum_max_excess: max_excess,
    })
}

#[cfg(test)]
mod tests;
