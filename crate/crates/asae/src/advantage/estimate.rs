//! Batch advantage estimation over collected trajectories.
//!
//! One pool of m joint-action draws is shared by all agents at a timestep:
//! the realized joint action is draw 0 and m-1 fresh draws come from the
//! behavior policies, then the pool is reorganized per agent. Each timestep
//! uses its own RNG substream keyed by (seed, episode, t), so estimates are
//! identical whether episodes are processed sequentially or in parallel.

use rayon::prelude::*;

use crate::advantage::{
    counterfactual_advantage, draw_joint_samples, marginal_advantage_exact, mc_entry,
    reorganize_samples, AdvantageEntry, AdvantageTable, EstimatorConfig, EstimatorVariant,
    QValueFn,
};
use crate::envs::matrix::JointQTable;
use crate::envs::{Episode, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::seeding::{substream, STREAM_ADVANTAGE};

/// Mean and standard error of the policy-averaged Q over reorganized
/// samples: V = (1/m) sum_j sum_k pi(k) q_j[k].
pub fn state_value_from_qs(q_rows: &[Vec<f64>], policy: &[f64]) -> (f64, f64) {
    let m = q_rows.len();
    let per_sample: Vec<f64> = q_rows
        .iter()
        .map(|q| q.iter().zip(policy).map(|(qk, pk)| qk * pk).sum())
        .collect();
    let mean = per_sample.iter().sum::<f64>() / m as f64;
    let std_err = if m > 1 {
        let var = per_sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    (mean, std_err)
}

fn estimate_episode_mc(
    qfn: &dyn QValueFn,
    episode: &Episode,
    ep_index: usize,
    cfg: &EstimatorConfig,
    seed: u64,
    snapshot_hash: u64,
    n_agents: usize,
) -> Result<Vec<Vec<AdvantageEntry>>> {
    let mut out = Vec::with_capacity(episode.len());
    for (t, step) in episode.steps.iter().enumerate() {
        let mut rng = substream(seed, &[STREAM_ADVANTAGE, ep_index as u64, t as u64]);
        let pool = draw_joint_samples(&step.policy_probs, cfg.m, Some(&step.actions), &mut rng)?;
        let mut per_agent = Vec::with_capacity(n_agents);
        for agent in 0..n_agents {
            let reorganized = reorganize_samples(&pool, agent)?;
            let q_rows = qfn.q_values_batch(&step.state, &reorganized, agent)?;
            let policy = &step.policy_probs[agent];
            let chosen = step.actions[agent];
            let values: Vec<f64> = q_rows
                .iter()
                .map(|q| counterfactual_advantage(q, policy, chosen))
                .collect::<Result<_>>()?;
            per_agent.push(mc_entry(&values, EstimatorVariant::McQ, snapshot_hash));
        }
        out.push(per_agent);
    }
    Ok(out)
}

fn estimate_episode_td(
    qfn: &dyn QValueFn,
    episode: &Episode,
    ep_index: usize,
    cfg: &EstimatorConfig,
    gamma: f64,
    seed: u64,
    snapshot_hash: u64,
    n_agents: usize,
) -> Result<Vec<Vec<AdvantageEntry>>> {
    let horizon = episode.len();
    // State values from the shared reorganized pools; v[t][agent].
    let mut values = vec![vec![0.0; n_agents]; horizon];
    let mut errs = vec![vec![0.0; n_agents]; horizon];
    for (t, step) in episode.steps.iter().enumerate() {
        let mut rng = substream(seed, &[STREAM_ADVANTAGE, ep_index as u64, t as u64]);
        let pool = draw_joint_samples(&step.policy_probs, cfg.m, Some(&step.actions), &mut rng)?;
        for agent in 0..n_agents {
            let reorganized = reorganize_samples(&pool, agent)?;
            let q_rows = qfn.q_values_batch(&step.state, &reorganized, agent)?;
            let (v, se) = state_value_from_qs(&q_rows, &step.policy_probs[agent]);
            values[t][agent] = v;
            errs[t][agent] = se;
        }
    }
    let mut deltas = vec![vec![0.0; n_agents]; horizon];
    for t in 0..horizon {
        for agent in 0..n_agents {
            let v_next = if t + 1 < horizon { values[t + 1][agent] } else { 0.0 };
            deltas[t][agent] = episode.steps[t].reward + gamma * v_next - values[t][agent];
        }
    }
    let mut out = vec![Vec::with_capacity(n_agents); horizon];
    match cfg.variant {
        EstimatorVariant::TdResidual1Step => {
            for t in 0..horizon {
                for agent in 0..n_agents {
                    out[t].push(AdvantageEntry {
                        value: deltas[t][agent],
                        sample_count: cfg.m,
                        variant: cfg.variant,
                        // MC uncertainty of the state-value term at t.
                        std_err: errs[t][agent],
                        snapshot_hash,
                    });
                }
            }
        }
        EstimatorVariant::TdResidualDiscountedSum => {
            let mut acc = vec![0.0; n_agents];
            for t in (0..horizon).rev() {
                for agent in 0..n_agents {
                    acc[agent] = deltas[t][agent] + gamma * acc[agent];
                    out[t].push(AdvantageEntry {
                        value: acc[agent],
                        sample_count: cfg.m,
                        variant: cfg.variant,
                        std_err: errs[t][agent],
                        snapshot_hash,
                    });
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

fn estimate_episode_exact(
    episode: &Episode,
    tables: &[JointQTable],
    snapshot_hash: u64,
    n_agents: usize,
) -> Result<Vec<Vec<AdvantageEntry>>> {
    let mut out = Vec::with_capacity(episode.len());
    for (t, step) in episode.steps.iter().enumerate() {
        if t >= tables.len() {
            return Err(Error::Argument(format!(
                "exact estimator has {} tables but episode reaches step {t}",
                tables.len()
            )));
        }
        let table = &tables[t];
        let enumeration = table.n_actions.pow(table.n_agents as u32 - 1);
        let mut per_agent = Vec::with_capacity(n_agents);
        for agent in 0..n_agents {
            let value = marginal_advantage_exact(
                table,
                &step.policy_probs,
                agent,
                step.actions[agent],
            )?;
            per_agent.push(AdvantageEntry {
                value,
                sample_count: enumeration,
                variant: EstimatorVariant::Exact,
                std_err: 0.0,
                snapshot_hash,
            });
        }
        out.push(per_agent);
    }
    Ok(out)
}

/// Marginal advantage estimates for every (episode, t, agent) slot of a
/// batch. `exact_tables` (one per step) is required by the exact variant and
/// ignored otherwise.
pub fn estimate_batch(
    qfn: &dyn QValueFn,
    batch: &TrajectoryBatch,
    cfg: &EstimatorConfig,
    seed: u64,
    snapshot_hash: u64,
    exact_tables: Option<&[JointQTable]>,
) -> Result<AdvantageTable> {
    cfg.validate()?;
    let n = batch.n_agents;
    let entries: Result<Vec<_>> = batch
        .episodes
        .par_iter()
        .enumerate()
        .map(|(ep_index, episode)| match cfg.variant {
            EstimatorVariant::McQ => {
                estimate_episode_mc(qfn, episode, ep_index, cfg, seed, snapshot_hash, n)
            }
            EstimatorVariant::TdResidual1Step | EstimatorVariant::TdResidualDiscountedSum => {
                estimate_episode_td(
                    qfn,
                    episode,
                    ep_index,
                    cfg,
                    batch.gamma,
                    seed,
                    snapshot_hash,
                    n,
                )
            }
            EstimatorVariant::Exact => {
                let tables = exact_tables.ok_or_else(|| {
                    Error::Argument(
                        "exact estimator needs enumerable ground-truth tables".into(),
                    )
                })?;
                estimate_episode_exact(episode, tables, snapshot_hash, n)
            }
        })
        .collect();
    Ok(AdvantageTable { entries: entries? })
}
