//! Per-agent credit assignment through marginal advantages.
//!
//! The counterfactual advantage of agent `a` fixes the other agents' joint
//! action and baselines agent `a`'s Q value against its own policy. The
//! marginal advantage is the expectation of that quantity over the other
//! agents' policies; it is computed exactly by enumeration on small games
//! (the oracle path) or by Monte-Carlo sample reorganization against a
//! centralized critic (the training path). Exact and MC routes are kept
//! independent so each can check the other.

mod estimate;

pub use estimate::{estimate_batch, state_value_from_qs};

use rand_chacha::ChaCha20Rng;

use crate::diffmath::sample_categorical;
use crate::envs::matrix::{joint_actions, JointQTable, ENUMERATION_LIMIT};
use crate::envs::TrajectoryBatch;
use crate::error::{Error, Result};

/// Estimator selection. `m` is the Monte-Carlo sample count per timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorVariant {
    Exact,
    McQ,
    TdResidual1Step,
    TdResidualDiscountedSum,
}

impl EstimatorVariant {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "exact" => Ok(EstimatorVariant::Exact),
            "mc-q" => Ok(EstimatorVariant::McQ),
            "td-residual-1step" => Ok(EstimatorVariant::TdResidual1Step),
            "td-residual-discounted-sum" => Ok(EstimatorVariant::TdResidualDiscountedSum),
            other => Err(Error::Argument(format!(
                "unknown estimator `{other}` (known: exact, mc-q, td-residual-1step, td-residual-discounted-sum)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            EstimatorVariant::Exact => "exact",
            EstimatorVariant::McQ => "mc-q",
            EstimatorVariant::TdResidual1Step => "td-residual-1step",
            EstimatorVariant::TdResidualDiscountedSum => "td-residual-discounted-sum",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub m: usize,
    pub variant: EstimatorVariant,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            m: 50,
            variant: EstimatorVariant::McQ,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Argument("estimator sample count m must be >= 1".into()));
        }
        Ok(())
    }
}

/// A counterfactual scene for one agent: the other agents' joint action,
/// bound to the state the pool was drawn at, plus which MC draw produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterfactualSample {
    /// One action per other agent, in ascending agent order with the current
    /// agent removed.
    pub other_actions: Vec<usize>,
    /// Index of the joint draw this sample was reorganized from.
    pub draw: usize,
}

/// One advantage estimate for an (episode, timestep, agent) slot.
#[derive(Debug, Clone)]
pub struct AdvantageEntry {
    pub value: f64,
    pub sample_count: usize,
    pub variant: EstimatorVariant,
    /// Sample std / sqrt(m) for MC variants; exactly 0 for the exact variant.
    pub std_err: f64,
    /// Hash of the policy snapshot the estimate was computed against.
    pub snapshot_hash: u64,
}

/// Marginal advantage estimates for a whole trajectory batch, indexed as
/// `[episode][t][agent]`.
#[derive(Debug, Clone)]
pub struct AdvantageTable {
    pub entries: Vec<Vec<Vec<AdvantageEntry>>>,
}

impl AdvantageTable {
    pub fn entry(&self, episode: usize, t: usize, agent: usize) -> &AdvantageEntry {
        &self.entries[episode][t][agent]
    }

    /// Flat advantage values for one agent across the whole batch, episode
    /// order then time order.
    pub fn agent_values(&self, agent: usize) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|ep| ep.iter().map(move |ts| ts[agent].value))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .flatten()
            .flatten()
            .all(|e| e.value.is_finite() && e.std_err.is_finite())
    }
}

/// Q(s, u) for agent `a`'s chosen action minus the policy-weighted average
/// over its alternatives, with the others' joint action held fixed.
pub fn counterfactual_advantage(q_vec: &[f64], policy: &[f64], chosen: usize) -> Result<f64> {
    if q_vec.len() != policy.len() {
        return Err(Error::Dimension(format!(
            "q vector has {} entries, policy has {}",
            q_vec.len(),
            policy.len()
        )));
    }
    if chosen >= q_vec.len() {
        return Err(Error::Argument(format!(
            "chosen action {chosen} out of range for {} actions",
            q_vec.len()
        )));
    }
    let baseline: f64 = q_vec.iter().zip(policy).map(|(q, p)| q * p).sum();
    Ok(q_vec[chosen] - baseline)
}

/// Insert agent `agent`'s action into an others-tuple to form a joint action.
pub fn insert_action(others: &[usize], agent: usize, action: usize) -> Vec<usize> {
    let mut joint = Vec::with_capacity(others.len() + 1);
    joint.extend_from_slice(&others[..agent]);
    joint.push(action);
    joint.extend_from_slice(&others[agent..]);
    joint
}

/// Remove agent `agent`'s entry from a joint action.
pub fn drop_action(joint: &[usize], agent: usize) -> Vec<usize> {
    let mut others = Vec::with_capacity(joint.len() - 1);
    others.extend_from_slice(&joint[..agent]);
    others.extend_from_slice(&joint[agent + 1..]);
    others
}

/// Enumerate the other agents' joint actions of a table-sized game.
fn check_enumerable(table: &JointQTable) -> Result<()> {
    if table.values.len() >= ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            needed: table.values.len(),
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Marginal Q: expectation of the joint Q over the other agents' policies
/// with agent `agent`'s action fixed to `action`.
pub fn marginal_q_exact(
    table: &JointQTable,
    other_policies: &[Vec<f64>],
    agent: usize,
    action: usize,
) -> Result<f64> {
    check_enumerable(table)?;
    if other_policies.len() != table.n_agents - 1 {
        return Err(Error::Argument(format!(
            "need {} other-agent policies, got {}",
            table.n_agents - 1,
            other_policies.len()
        )));
    }
    let mut total = 0.0;
    for others in joint_actions(table.n_agents - 1, table.n_actions) {
        let weight: f64 = others
            .iter()
            .zip(other_policies)
            .map(|(&u, pi)| pi[u])
            .product();
        if weight == 0.0 {
            continue;
        }
        total += weight * table.q(&insert_action(&others, agent, action));
    }
    Ok(total)
}

/// Marginal advantage via the marginal-Q route: Q^a(s, u^a) minus its
/// policy-weighted average over u^a.
pub fn marginal_advantage_via_marginal_q(
    table: &JointQTable,
    policies: &[Vec<f64>],
    agent: usize,
    action: usize,
) -> Result<f64> {
    let others: Vec<Vec<f64>> = policies
        .iter()
        .enumerate()
        .filter(|(o, _)| *o != agent)
        .map(|(_, p)| p.clone())
        .collect();
    let q_marginal: Vec<f64> = (0..table.n_actions)
        .map(|k| marginal_q_exact(table, &others, agent, k))
        .collect::<Result<_>>()?;
    counterfactual_advantage(&q_marginal, &policies[agent], action)
}

/// Marginal advantage via the counterfactual route: expectation over the
/// other agents' policies of the counterfactual advantage.
pub fn marginal_advantage_via_counterfactual(
    table: &JointQTable,
    policies: &[Vec<f64>],
    agent: usize,
    action: usize,
) -> Result<f64> {
    check_enumerable(table)?;
    let mut total = 0.0;
    for others in joint_actions(table.n_agents - 1, table.n_actions) {
        let weight: f64 = others
            .iter()
            .enumerate()
            .map(|(slot, &u)| {
                let o = if slot < agent { slot } else { slot + 1 };
                policies[o][u]
            })
            .product();
        if weight == 0.0 {
            continue;
        }
        let q_vec: Vec<f64> = (0..table.n_actions)
            .map(|k| table.q(&insert_action(&others, agent, k)))
            .collect();
        total += weight * counterfactual_advantage(&q_vec, &policies[agent], action)?;
    }
    Ok(total)
}

/// Exact marginal advantage. Both algebraic routes are evaluated and must
/// agree to 1e-10; their agreement is this module's core identity.
pub fn marginal_advantage_exact(
    table: &JointQTable,
    policies: &[Vec<f64>],
    agent: usize,
    action: usize,
) -> Result<f64> {
    let via_q = marginal_advantage_via_marginal_q(table, policies, agent, action)?;
    let via_cf = marginal_advantage_via_counterfactual(table, policies, agent, action)?;
    if (via_q - via_cf).abs() > 1e-10 {
        return Err(Error::Training(format!(
            "marginal advantage routes disagree: {via_q} vs {via_cf}"
        )));
    }
    Ok(via_q)
}

/// Reorganize m joint-action draws into m counterfactual samples for one
/// agent: sample j keeps agent `agent`'s action from draw 0 and takes the
/// other agents' actions from draw j (draw 0 included).
pub fn reorganize_samples(
    joint_samples: &[Vec<usize>],
    agent: usize,
) -> Result<Vec<CounterfactualSample>> {
    if joint_samples.is_empty() {
        return Err(Error::Argument("reorganize_samples needs at least one draw".into()));
    }
    Ok(joint_samples
        .iter()
        .enumerate()
        .map(|(j, joint)| CounterfactualSample {
            other_actions: drop_action(joint, agent),
            draw: j,
        })
        .collect())
}

/// Joint-Q access used by the MC estimators: one query yields the full
/// sweep over agent `agent`'s candidate actions with the others fixed.
pub trait QValueFn: Sync {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn q_values(&self, state: &[f64], others: &[usize], agent: usize) -> Result<Vec<f64>>;

    /// Batched sweep over many others-tuples at one state. Implementations
    /// with a natural batch path should override this.
    fn q_values_batch(
        &self,
        state: &[f64],
        others_list: &[CounterfactualSample],
        agent: usize,
    ) -> Result<Vec<Vec<f64>>> {
        others_list
            .iter()
            .map(|cf| self.q_values(state, &cf.other_actions, agent))
            .collect()
    }
}

/// Exact-table Q function for enumerable games; the oracle side of the
/// MC-vs-exact comparisons. Multi-step tables are indexed by the position
/// of the 1 in the step one-hot state encoding.
pub struct ExactTableQ {
    pub tables: Vec<JointQTable>,
}

impl ExactTableQ {
    pub fn single(table: JointQTable) -> Self {
        ExactTableQ { tables: vec![table] }
    }

    fn table_for_state(&self, state: &[f64]) -> &JointQTable {
        let t = state
            .iter()
            .position(|&v| v == 1.0)
            .unwrap_or(0)
            .min(self.tables.len() - 1);
        &self.tables[t]
    }
}

impl QValueFn for ExactTableQ {
    fn n_agents(&self) -> usize {
        self.tables[0].n_agents
    }

    fn n_actions(&self) -> usize {
        self.tables[0].n_actions
    }

    fn q_values(&self, state: &[f64], others: &[usize], agent: usize) -> Result<Vec<f64>> {
        let table = self.table_for_state(state);
        if others.len() != table.n_agents - 1 {
            return Err(Error::Dimension(format!(
                "expected {} other actions, got {}",
                table.n_agents - 1,
                others.len()
            )));
        }
        Ok((0..table.n_actions)
            .map(|k| table.q(&insert_action(others, agent, k)))
            .collect())
    }
}

/// Draw `m` joint actions from per-agent categorical policies; when
/// `realized` is given it becomes draw 0 and only m-1 fresh draws are made.
pub fn draw_joint_samples(
    agent_policies: &[Vec<f64>],
    m: usize,
    realized: Option<&[usize]>,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut samples = Vec::with_capacity(m);
    if let Some(joint) = realized {
        if joint.len() != agent_policies.len() {
            return Err(Error::Dimension(format!(
                "realized joint action has {} entries for {} agents",
                joint.len(),
                agent_policies.len()
            )));
        }
        samples.push(joint.to_vec());
    }
    while samples.len() < m {
        let joint: Vec<usize> = agent_policies
            .iter()
            .map(|pi| sample_categorical(pi, rng).map(|(u, _)| u))
            .collect::<Result<_>>()?;
        samples.push(joint);
    }
    Ok(samples)
}

/// Monte-Carlo marginal advantage for one (state, agent, action): the mean
/// counterfactual advantage over m reorganized samples of the other agents'
/// actions, with its standard error.
pub fn marginal_advantage_mc(
    qfn: &dyn QValueFn,
    state: &[f64],
    agent_policies: &[Vec<f64>],
    agent: usize,
    chosen: usize,
    cfg: &EstimatorConfig,
    rng: &mut ChaCha20Rng,
    realized: Option<&[usize]>,
    snapshot_hash: u64,
) -> Result<AdvantageEntry> {
    cfg.validate()?;
    let samples = draw_joint_samples(agent_policies, cfg.m, realized, rng)?;
    let reorganized = reorganize_samples(&samples, agent)?;
    let q_rows = qfn.q_values_batch(state, &reorganized, agent)?;
    let policy = &agent_policies[agent];
    let mut values = Vec::with_capacity(cfg.m);
    for q_vec in &q_rows {
        values.push(counterfactual_advantage(q_vec, policy, chosen)?);
    }
    Ok(mc_entry(&values, cfg.variant, snapshot_hash))
}

/// Fold per-sample values into an entry with mean and standard error.
pub(crate) fn mc_entry(values: &[f64], variant: EstimatorVariant, snapshot_hash: u64) -> AdvantageEntry {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    let std_err = if m > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    AdvantageEntry {
        value: mean,
        sample_count: m,
        variant,
        std_err,
        snapshot_hash,
    }
}

/// TD residual advantages over a collected batch, per agent. The value
/// function receives (state, agent); terminal states count as value zero.
pub fn td_residual_advantage(
    batch: &TrajectoryBatch,
    value_fn: impl Fn(&[f64], usize) -> f64,
    variant: EstimatorVariant,
    gamma: f64,
    snapshot_hash: u64,
) -> Result<AdvantageTable> {
    if !matches!(
        variant,
        EstimatorVariant::TdResidual1Step | EstimatorVariant::TdResidualDiscountedSum
    ) {
        return Err(Error::Argument(format!(
            "td_residual_advantage cannot produce variant {}",
            variant.id()
        )));
    }
    let n = batch.n_agents;
    let mut entries = Vec::with_capacity(batch.episodes.len());
    for ep in &batch.episodes {
        let horizon = ep.len();
        // deltas[t][agent]
        let mut deltas = vec![vec![0.0; n]; horizon];
        for (t, step) in ep.steps.iter().enumerate() {
            for agent in 0..n {
                let v_t = value_fn(&step.state, agent);
                let v_next = if t + 1 < horizon {
                    value_fn(&ep.steps[t + 1].state, agent)
                } else {
                    0.0 // terminal by contract
                };
                deltas[t][agent] = step.reward + gamma * v_next - v_t;
            }
        }
        let mut ep_entries = vec![Vec::with_capacity(n); horizon];
        match variant {
            EstimatorVariant::TdResidual1Step => {
                for t in 0..horizon {
                    for agent in 0..n {
                        ep_entries[t].push(AdvantageEntry {
                            value: deltas[t][agent],
                            sample_count: 1,
                            variant,
                            std_err: 0.0,
                            snapshot_hash,
                        });
                    }
                }
            }
            EstimatorVariant::TdResidualDiscountedSum => {
                let mut acc = vec![0.0; n];
                for t in (0..horizon).rev() {
                    for agent in 0..n {
                        acc[agent] = deltas[t][agent] + gamma * acc[agent];
                    }
                    for agent in 0..n {
                        ep_entries[t].push(AdvantageEntry {
                            value: acc[agent],
                            sample_count: 1,
                            variant,
                            std_err: 0.0,
                            snapshot_hash,
                        });
                    }
                }
            }
            _ => unreachable!(),
        }
        entries.push(ep_entries);
    }
    Ok(AdvantageTable { entries })
}

#[cfg(test)]
mod tests;
