use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::envs::matrix::{exact_joint_q, MatrixGame, MatrixGameSpec};
use crate::envs::rollout::collect_rollouts;
use crate::envs::JointPolicy;

pub fn random_policy(n_actions: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

pub fn random_table(n_agents: usize, n_actions: usize, rng: &mut ChaCha20Rng) -> JointQTable {
    let count = n_actions.pow(n_agents as u32);
    JointQTable {
        n_agents,
        n_actions,
        values: (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn coordination_table() -> JointQTable {
    JointQTable {
        n_agents: 2,
        n_actions: 2,
        values: vec![1.0, 0.0, 0.0, 0.5],
    }
}

struct UniformPolicy {
    n_agents: usize,
    n_actions: usize,
}

impl JointPolicy for UniformPolicy {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, _agent: usize, _obs: &[f64]) -> Vec<f64> {
        vec![1.0 / self.n_actions as f64; self.n_actions]
    }
}

/// Critic stub returning a constant for every joint action.
struct ConstantQ {
    n_agents: usize,
    n_actions: usize,
    value: f64,
}

impl QValueFn for ConstantQ {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn q_values(&self, _state: &[f64], _others: &[usize], _agent: usize) -> crate::Result<Vec<f64>> {
        Ok(vec![self.value; self.n_actions])
    }
}

#[test]
fn counterfactual_advantage_cancels_constants() {
    for u in 0..3 {
        let a = counterfactual_advantage(&[2.5, 2.5, 2.5], &[0.2, 0.3, 0.5], u).unwrap();
        assert!(a.abs() < 1e-15);
    }
}

#[test]
fn counterfactual_advantage_two_action_example() {
    let q = [1.0, 0.0];
    let pi = [0.5, 0.5];
    assert!((counterfactual_advantage(&q, &pi, 0).unwrap() - 0.5).abs() < 1e-15);
    assert!((counterfactual_advantage(&q, &pi, 1).unwrap() + 0.5).abs() < 1e-15);
}

#[test]
fn counterfactual_advantage_is_zero_mean_under_policy() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    for _ in 0..200 {
        let k = rng.gen_range(2..6);
        let q: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pi = random_policy(k, &mut rng);
        let mean: f64 = (0..k)
            .map(|u| pi[u] * counterfactual_advantage(&q, &pi, u).unwrap())
            .sum();
        assert!(mean.abs() < 1e-12, "policy-weighted mean was {mean}");
    }
}

#[test]
fn counterfactual_advantage_rejects_bad_inputs() {
    assert!(counterfactual_advantage(&[1.0, 2.0], &[0.5, 0.5], 2).is_err());
    assert!(counterfactual_advantage(&[1.0, 2.0], &[1.0], 0).is_err());
}

#[test]
fn marginal_q_on_coordination_game() {
    let table = coordination_table();
    let uniform = vec![vec![0.5, 0.5]];
    let q0 = marginal_q_exact(&table, &uniform, 0, 0).unwrap();
    let q1 = marginal_q_exact(&table, &uniform, 0, 1).unwrap();
    assert!((q0 - 0.5).abs() < 1e-15);
    assert!((q1 - 0.25).abs() < 1e-15);
}

#[test]
fn marginal_q_degenerate_other_policy_reads_the_table() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let table = random_table(2, 3, &mut rng);
    let one_hot = vec![vec![0.0, 0.0, 1.0]];
    for u in 0..3 {
        let got = marginal_q_exact(&table, &one_hot, 0, u).unwrap();
        assert!((got - table.q(&[u, 2])).abs() < 1e-15);
    }
}

#[test]
fn marginal_q_single_agent_is_identity() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let table = random_table(1, 4, &mut rng);
    for u in 0..4 {
        let got = marginal_q_exact(&table, &[], 0, u).unwrap();
        assert_eq!(got, table.q(&[u]));
    }
}

#[test]
fn marginal_advantage_on_coordination_game() {
    let table = coordination_table();
    let policies = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let a0 = marginal_advantage_exact(&table, &policies, 0, 0).unwrap();
    let a1 = marginal_advantage_exact(&table, &policies, 0, 1).unwrap();
    assert!((a0 - 0.125).abs() < 1e-15);
    assert!((a1 + 0.125).abs() < 1e-15);
}

#[test]
fn marginal_advantage_single_agent_reduces_to_sa_advantage() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let table = random_table(1, 4, &mut rng);
    let pi = random_policy(4, &mut rng);
    for u in 0..4 {
        let got = marginal_advantage_exact(&table, &[pi.clone()], 0, u).unwrap();
        let want = counterfactual_advantage(&table.values, &pi, u).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn marginal_advantage_dual_routes_agree_on_random_games() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let mut max_dev: f64 = 0.0;
    for _ in 0..100 {
        let n_agents = rng.gen_range(2..=3);
        let n_actions = rng.gen_range(2..=4);
        let table = random_table(n_agents, n_actions, &mut rng);
        let policies: Vec<Vec<f64>> = (0..n_agents)
            .map(|_| random_policy(n_actions, &mut rng))
            .collect();
        for agent in 0..n_agents {
            for u in 0..n_actions {
                let via_q = marginal_advantage_via_marginal_q(&table, &policies, agent, u).unwrap();
                let via_cf =
                    marginal_advantage_via_counterfactual(&table, &policies, agent, u).unwrap();
                max_dev = max_dev.max((via_q - via_cf).abs());
            }
        }
    }
    assert!(max_dev <= 1e-10, "dual-route deviation {max_dev}");
}

#[test]
fn marginal_advantage_is_zero_mean_under_own_policy() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    for _ in 0..100 {
        let n_agents = rng.gen_range(2..=3);
        let n_actions = rng.gen_range(2..=4);
        let table = random_table(n_agents, n_actions, &mut rng);
        let policies: Vec<Vec<f64>> = (0..n_agents)
            .map(|_| random_policy(n_actions, &mut rng))
            .collect();
        for agent in 0..n_agents {
            let mean: f64 = (0..n_actions)
                .map(|u| {
                    policies[agent][u]
                        * marginal_advantage_exact(&table, &policies, agent, u).unwrap()
                })
                .sum();
            assert!(mean.abs() < 1e-12);
        }
    }
}

#[test]
fn dummy_agent_has_identically_zero_marginal_advantages() {
    // Payoff depends only on agent 0; agent 1's credit must vanish while
    // agent 0's does not.
    let table = JointQTable {
        n_agents: 2,
        n_actions: 2,
        values: vec![1.0, 1.0, 0.0, 0.0],
    };
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    for _ in 0..20 {
        let policies = vec![random_policy(2, &mut rng), random_policy(2, &mut rng)];
        for u in 0..2 {
            let dummy = marginal_advantage_exact(&table, &policies, 1, u).unwrap();
            assert!(dummy.abs() <= 1e-12, "dummy agent advantage {dummy}");
        }
        let influential = marginal_advantage_exact(&table, &policies, 0, 0).unwrap();
        assert!(influential.abs() > 1e-6);
    }
}

#[test]
fn reorganize_single_sample_is_identity() {
    let samples = vec![vec![3, 1, 2]];
    let out = reorganize_samples(&samples, 0).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].other_actions, vec![1, 2]);
    assert_eq!(out[0].draw, 0);
}

#[test]
fn reorganize_pairs_first_draw_action_with_each_pool_entry() {
    let samples = vec![vec![0, 1], vec![1, 0], vec![0, 0]];
    let out = reorganize_samples(&samples, 0).unwrap();
    let others: Vec<usize> = out.iter().map(|cf| cf.other_actions[0]).collect();
    assert_eq!(others, vec![1, 0, 0]);
}

#[test]
fn reorganize_drops_the_right_slot_for_middle_agents() {
    let samples = vec![vec![4, 5, 6], vec![7, 8, 9]];
    let out = reorganize_samples(&samples, 1).unwrap();
    assert_eq!(out[0].other_actions, vec![4, 6]);
    assert_eq!(out[1].other_actions, vec![7, 9]);
}

#[test]
fn reorganize_rejects_empty_pool() {
    assert!(matches!(
        reorganize_samples(&[], 0),
        Err(Error::Argument(_))
    ));
}

#[test]
fn mc_estimate_converges_to_exact_on_coordination_game() {
    let table = coordination_table();
    let qfn = ExactTableQ::single(table.clone());
    let policies = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let cfg = EstimatorConfig {
        m: 10_000,
        variant: EstimatorVariant::McQ,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let entry = marginal_advantage_mc(
        &qfn,
        &[1.0],
        &policies,
        0,
        0,
        &cfg,
        &mut rng,
        None,
        0,
    )
    .unwrap();
    let exact = 0.125;
    assert!(
        (entry.value - exact).abs() <= 3.0 * entry.std_err,
        "estimate {} +- {} vs exact {exact}",
        entry.value,
        entry.std_err
    );
}

#[test]
fn mc_estimate_with_one_hot_others_is_exact_and_noiseless() {
    let mut rng = ChaCha20Rng::seed_from_u64(18);
    let table = random_table(2, 3, &mut rng);
    let qfn = ExactTableQ::single(table.clone());
    let policies = vec![random_policy(3, &mut rng), vec![0.0, 1.0, 0.0]];
    let cfg = EstimatorConfig {
        m: 7,
        variant: EstimatorVariant::McQ,
    };
    let entry =
        marginal_advantage_mc(&qfn, &[1.0], &policies, 0, 2, &cfg, &mut rng, None, 0).unwrap();
    assert_eq!(entry.std_err, 0.0);
    let exact = marginal_advantage_exact(&table, &policies, 0, 2).unwrap();
    assert!((entry.value - exact).abs() < 1e-12);
}

#[test]
fn mc_estimate_is_exactly_zero_under_constant_critic() {
    let qfn = ConstantQ {
        n_agents: 3,
        n_actions: 4,
        value: 3.7,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    let policies: Vec<Vec<f64>> = (0..3).map(|_| random_policy(4, &mut rng)).collect();
    for m in [1, 5, 50] {
        let cfg = EstimatorConfig {
            m,
            variant: EstimatorVariant::McQ,
        };
        for u in 0..4 {
            let entry =
                marginal_advantage_mc(&qfn, &[0.0], &policies, 1, u, &cfg, &mut rng, None, 0)
                    .unwrap();
            assert_eq!(entry.value, 0.0);
        }
    }
}

#[test]
fn mc_error_shrinks_with_sample_count() {
    let mut rng = ChaCha20Rng::seed_from_u64(20);
    let table = random_table(2, 3, &mut rng);
    let qfn = ExactTableQ::single(table.clone());
    let policies = vec![random_policy(3, &mut rng), random_policy(3, &mut rng)];
    let exact = marginal_advantage_exact(&table, &policies, 0, 1).unwrap();
    let mean_abs_err = |m: usize, rng: &mut ChaCha20Rng| -> f64 {
        let cfg = EstimatorConfig {
            m,
            variant: EstimatorVariant::McQ,
        };
        let trials = 64;
        (0..trials)
            .map(|_| {
                let e = marginal_advantage_mc(&qfn, &[1.0], &policies, 0, 1, &cfg, rng, None, 0)
                    .unwrap();
                (e.value - exact).abs()
            })
            .sum::<f64>()
            / trials as f64
    };
    let err_small = mean_abs_err(10, &mut rng);
    let err_large = mean_abs_err(1000, &mut rng);
    assert!(
        err_large < err_small / 3.0,
        "errors {err_small} -> {err_large} did not shrink"
    );
}

#[test]
fn td_residual_with_zero_value_recovers_rewards_and_returns() {
    let spec = MatrixGameSpec::new(2, 2, vec![1.0, 0.0, 0.0, 0.5], 4).unwrap();
    let mut env = MatrixGame::new(spec);
    let policy = UniformPolicy {
        n_agents: 2,
        n_actions: 2,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let gamma = 0.9;
    let batch = collect_rollouts(&mut env, &policy, 8, gamma, &mut rng).unwrap();

    let one_step =
        td_residual_advantage(&batch, |_, _| 0.0, EstimatorVariant::TdResidual1Step, gamma, 0)
            .unwrap();
    let summed = td_residual_advantage(
        &batch,
        |_, _| 0.0,
        EstimatorVariant::TdResidualDiscountedSum,
        gamma,
        0,
    )
    .unwrap();
    for (e, ep) in batch.episodes.iter().enumerate() {
        for t in 0..ep.len() {
            for a in 0..2 {
                assert_eq!(one_step.entry(e, t, a).value, ep.steps[t].reward);
                assert!((summed.entry(e, t, a).value - ep.returns[t]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn td_discounted_sum_with_gamma_zero_equals_one_step() {
    let spec = MatrixGameSpec::new(2, 2, vec![0.3, -0.2, 0.9, 0.1], 5).unwrap();
    let mut env = MatrixGame::new(spec);
    let policy = UniformPolicy {
        n_agents: 2,
        n_actions: 2,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let batch = collect_rollouts(&mut env, &policy, 8, 0.0, &mut rng).unwrap();
    let value_fn = |state: &[f64], _agent: usize| state.iter().sum::<f64>() * 0.3;
    let a = td_residual_advantage(&batch, value_fn, EstimatorVariant::TdResidual1Step, 0.0, 0)
        .unwrap();
    let b = td_residual_advantage(
        &batch,
        value_fn,
        EstimatorVariant::TdResidualDiscountedSum,
        0.0,
        0,
    )
    .unwrap();
    for (e, ep) in batch.episodes.iter().enumerate() {
        for t in 0..ep.len() {
            for agent in 0..2 {
                assert_eq!(a.entry(e, t, agent).value, b.entry(e, t, agent).value);
            }
        }
    }
}

#[test]
fn td_residual_mean_is_zero_under_true_value_function() {
    // Repeated matrix game under uniform policies: the true state values
    // are V_t = mean_payoff * (1 + gamma + ... ) by backward recursion, so
    // the expected TD residual is zero at every step.
    let horizon = 3;
    let spec = MatrixGameSpec::new(2, 2, vec![1.0, 0.0, 0.0, 0.5], horizon).unwrap();
    let gamma = 0.9;
    let uniform = vec![vec![0.5, 0.5]; 2];
    let tables = exact_joint_q(&spec, &uniform, gamma).unwrap();
    let mean_payoff = 0.375;
    // V_t from the exact tables under uniform play.
    let v_t: Vec<f64> = tables
        .iter()
        .map(|tab| tab.values.iter().sum::<f64>() / tab.values.len() as f64)
        .collect();
    assert!((v_t[horizon - 1] - mean_payoff).abs() < 1e-12);

    let mut env = MatrixGame::new(spec);
    let policy = UniformPolicy {
        n_agents: 2,
        n_actions: 2,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let episodes = 4000;
    let batch = collect_rollouts(&mut env, &policy, episodes, gamma, &mut rng).unwrap();
    let value_fn = |state: &[f64], _agent: usize| {
        match state.iter().position(|&x| x == 1.0) {
            Some(t) => v_t[t],
            None => 0.0,
        }
    };
    let table =
        td_residual_advantage(&batch, value_fn, EstimatorVariant::TdResidual1Step, gamma, 0)
            .unwrap();
    for t in 0..horizon {
        let deltas: Vec<f64> = (0..episodes).map(|e| table.entry(e, t, 0).value).collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (deltas.len() - 1) as f64;
        let se = (var / deltas.len() as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se.max(1e-9),
            "step {t}: mean delta {mean} exceeds 3 x {se}"
        );
    }
}

#[test]
fn estimate_batch_mc_is_deterministic_and_stamped() {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let policy = UniformPolicy {
        n_agents: 2,
        n_actions: 2,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(24);
    let batch = collect_rollouts(&mut env, &policy, 16, 0.99, &mut rng).unwrap();
    let qfn = ExactTableQ::single(coordination_table());
    let cfg = EstimatorConfig {
        m: 16,
        variant: EstimatorVariant::McQ,
    };
    let t1 = estimate_batch(&qfn, &batch, &cfg, 99, 0xabcd, None).unwrap();
    let t2 = estimate_batch(&qfn, &batch, &cfg, 99, 0xabcd, None).unwrap();
    for (e, ep) in t1.entries.iter().enumerate() {
        for (t, step) in ep.iter().enumerate() {
            for (a, entry) in step.iter().enumerate() {
                assert_eq!(entry.value, t2.entry(e, t, a).value);
                assert_eq!(entry.snapshot_hash, 0xabcd);
                assert_eq!(entry.sample_count, 16);
            }
        }
    }
}

#[test]
fn estimate_batch_exact_requires_tables() {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let policy = UniformPolicy {
        n_agents: 2,
        n_actions: 2,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(25);
    let batch = collect_rollouts(&mut env, &policy, 4, 0.99, &mut rng).unwrap();
    let qfn = ExactTableQ::single(coordination_table());
    let cfg = EstimatorConfig {
        m: 4,
        variant: EstimatorVariant::Exact,
    };
    assert!(estimate_batch(&qfn, &batch, &cfg, 99, 0, None).is_err());
    let tables = [coordination_table()];
    let table = estimate_batch(&qfn, &batch, &cfg, 99, 0, Some(&tables)).unwrap();
    assert!(table.all_finite());
    for ep in &table.entries {
        for step in ep {
            for entry in step {
                assert_eq!(entry.std_err, 0.0);
                assert_eq!(entry.variant, EstimatorVariant::Exact);
            }
        }
    }
}

#[test]
fn state_value_from_qs_matches_hand_enumeration() {
    // Coordination payoff, uniform policies, all four joint samples for
    // agent 0: V = mean of (0.5, 0.25, 0.5, 0.25) = 0.375.
    let qfn = ExactTableQ::single(coordination_table());
    let pool = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let reorganized = reorganize_samples(&pool, 0).unwrap();
    let q_rows = qfn.q_values_batch(&[1.0], &reorganized, 0).unwrap();
    let (v, _) = state_value_from_qs(&q_rows, &[0.5, 0.5]);
    assert!((v - 0.375).abs() < 1e-15);

    // Constant critic: V equals the constant for any pool and policy.
    let cqfn = ConstantQ {
        n_agents: 2,
        n_actions: 2,
        value: 1.25,
    };
    let q_rows = cqfn.q_values_batch(&[1.0], &reorganized, 0).unwrap();
    let (v, se) = state_value_from_qs(&q_rows, &[0.3, 0.7]);
    assert!((v - 1.25).abs() < 1e-15);
    assert_eq!(se, 0.0);

    // Degenerate own policy with fixed others reads the table directly.
    let one_sample = reorganize_samples(&[vec![0, 0]], 0).unwrap();
    let q_rows = qfn.q_values_batch(&[1.0], &one_sample, 0).unwrap();
    let (v, _) = state_value_from_qs(&q_rows, &[1.0, 0.0]);
    assert!((v - 1.0).abs() < 1e-15);
}
