//! Cooperative matrix games with enumerable joint action spaces.
//!
//! One shared payoff tensor indexed by the joint action; episodes run for a
//! fixed horizon (default one step) with an unchanging payoff. These games
//! double as the exact ground truth for critic and advantage oracles.

use rand_chacha::ChaCha20Rng;

use crate::envs::{compose_observation, Environment, StepOutcome};
use crate::error::{Error, Result};

/// Joint action spaces larger than this are refused by enumeration oracles.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGameSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    /// Flat payoff tensor with |U|^n entries, agent 0 slowest index.
    pub payoff: Vec<f64>,
    /// Steps per episode.
    pub horizon: usize,
}

impl MatrixGameSpec {
    pub fn new(n_agents: usize, n_actions: usize, payoff: Vec<f64>, horizon: usize) -> Result<Self> {
        if n_agents == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::Argument(
                "matrix game needs agents, actions and horizon >= 1".into(),
            ));
        }
        let expected = n_actions.checked_pow(n_agents as u32).ok_or(Error::Capacity {
            needed: usize::MAX,
            limit: ENUMERATION_LIMIT,
        })?;
        if payoff.len() != expected {
            return Err(Error::Dimension(format!(
                "payoff tensor needs {expected} entries for {n_agents} agents x {n_actions} actions, got {}",
                payoff.len()
            )));
        }
        if payoff.iter().any(|p| !p.is_finite()) {
            return Err(Error::Argument("payoff tensor entries must be finite".into()));
        }
        Ok(MatrixGameSpec {
            n_agents,
            n_actions,
            payoff,
            horizon,
        })
    }

    /// The 2x2 coordination game [[1, 0], [0, 0.5]].
    pub fn coordination() -> Self {
        MatrixGameSpec::new(2, 2, vec![1.0, 0.0, 0.0, 0.5], 1).unwrap()
    }

    /// A game whose payoff depends only on agent 0's action; agent 1 is a
    /// dummy with no payoff influence.
    pub fn dummy_second_agent() -> Self {
        MatrixGameSpec::new(2, 2, vec![1.0, 1.0, 0.0, 0.0], 1).unwrap()
    }

    pub fn joint_count(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    pub fn joint_index(&self, joint: &[usize]) -> usize {
        debug_assert_eq!(joint.len(), self.n_agents);
        joint.iter().fold(0, |acc, &u| acc * self.n_actions + u)
    }

    pub fn payoff_at(&self, joint: &[usize]) -> f64 {
        self.payoff[self.joint_index(joint)]
    }
}

/// Iterate all joint actions of `n_agents` agents with `n_actions` actions
/// each, in lexicographic order (agent 0 slowest).
pub fn joint_actions(n_agents: usize, n_actions: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n_actions.pow(n_agents as u32);
    (0..total).map(move |mut idx| {
        let mut joint = vec![0usize; n_agents];
        for a in (0..n_agents).rev() {
            joint[a] = idx % n_actions;
            idx /= n_actions;
        }
        joint
    })
}

/// Exact joint action values for one decision point of an enumerable game.
#[derive(Debug, Clone)]
pub struct JointQTable {
    pub n_agents: usize,
    pub n_actions: usize,
    /// Flat values indexed like the payoff tensor.
    pub values: Vec<f64>,
}

impl JointQTable {
    pub fn index(&self, joint: &[usize]) -> usize {
        debug_assert_eq!(joint.len(), self.n_agents);
        joint.iter().fold(0, |acc, &u| acc * self.n_actions + u)
    }

    pub fn q(&self, joint: &[usize]) -> f64 {
        self.values[self.index(joint)]
    }
}

/// Exact Q(s_t, u) for every step and joint action of a repeated matrix
/// game, by backward enumeration over the horizon. Ground truth for critic
/// and advantage tests.
pub fn exact_joint_q(
    spec: &MatrixGameSpec,
    policies: &[Vec<f64>],
    gamma: f64,
) -> Result<Vec<JointQTable>> {
    let entries = spec.joint_count().saturating_mul(spec.horizon);
    if entries >= ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            needed: entries,
            limit: ENUMERATION_LIMIT,
        });
    }
    if policies.len() != spec.n_agents {
        return Err(Error::Argument(format!(
            "need one policy per agent, got {} for {} agents",
            policies.len(),
            spec.n_agents
        )));
    }
    let mut tables: Vec<JointQTable> = Vec::with_capacity(spec.horizon);
    let mut next_value = 0.0; // V_{t+1} under the given policies
    for _ in 0..spec.horizon {
        let values: Vec<f64> = (0..spec.joint_count())
            .map(|i| spec.payoff[i] + gamma * next_value)
            .collect();
        let table = JointQTable {
            n_agents: spec.n_agents,
            n_actions: spec.n_actions,
            values,
        };
        // V_t = E_{u ~ product policy}[Q_t(u)]
        next_value = joint_actions(spec.n_agents, spec.n_actions)
            .map(|joint| {
                let weight: f64 = joint
                    .iter()
                    .enumerate()
                    .map(|(a, &u)| policies[a][u])
                    .product();
                weight * table.q(&joint)
            })
            .sum();
        tables.push(table);
    }
    tables.reverse();
    Ok(tables)
}

/// Episode-based matrix game environment. The state encodes the current step
/// one-hot over the horizon; the terminal state is all zeros.
pub struct MatrixGame {
    spec: MatrixGameSpec,
    t: usize,
    last_action: Option<Vec<usize>>,
}

impl MatrixGame {
    pub fn new(spec: MatrixGameSpec) -> Self {
        MatrixGame {
            spec,
            t: 0,
            last_action: None,
        }
    }

    pub fn spec(&self) -> &MatrixGameSpec {
        &self.spec
    }

    fn state_encoding(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.spec.horizon];
        if self.t < self.spec.horizon {
            s[self.t] = 1.0;
        }
        s
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let features = self.state_encoding();
        (0..self.spec.n_agents)
            .map(|a| {
                compose_observation(
                    &features,
                    a,
                    self.spec.n_agents,
                    self.spec.n_actions,
                    self.last_action.as_deref(),
                )
            })
            .collect()
    }
}

impl Environment for MatrixGame {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn obs_dim(&self) -> usize {
        self.spec.horizon + self.spec.n_agents + self.spec.n_agents * self.spec.n_actions
    }

    fn state_dim(&self) -> usize {
        self.spec.horizon
    }

    fn max_steps(&self) -> usize {
        self.spec.horizon
    }

    fn has_win_condition(&self) -> bool {
        false
    }

    fn reset(&mut self, _rng: &mut ChaCha20Rng) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.t = 0;
        self.last_action = None;
        (self.state_encoding(), self.observations())
    }

    fn step(&mut self, joint_action: &[usize]) -> StepOutcome {
        assert_eq!(joint_action.len(), self.spec.n_agents, "one action per agent");
        let reward = self.spec.payoff_at(joint_action);
        self.t += 1;
        self.last_action = Some(joint_action.to_vec());
        StepOutcome {
            state: self.state_encoding(),
            observations: self.observations(),
            reward,
            done: self.t >= self.spec.horizon,
            won: false,
        }
    }
}
