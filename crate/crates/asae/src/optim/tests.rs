use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::advantage::{AdvantageEntry, AdvantageTable, EstimatorVariant};
use crate::critic::{CriticConfig, JointQCritic};
use crate::diffmath::{Activation, Tensor};
use crate::envs::matrix::{MatrixGame, MatrixGameSpec};
use crate::envs::Environment;
use crate::optim::iteration::{train_iteration, ActorSet, IterationConfig};

fn random_policy(n_actions: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

#[test]
fn kl_of_identical_distributions_is_zero() {
    let p = vec![0.2, 0.3, 0.5];
    assert_eq!(policy_kl(&p, &p).unwrap(), 0.0);
}

#[test]
fn kl_closed_form_examples() {
    let got = policy_kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    let want = 0.5 * 2.0f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((got - want).abs() < 1e-14, "{got} vs {want}");

    let got = policy_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    assert!((got - 2.0f64.ln()).abs() < 1e-14);
}

#[test]
fn kl_flags_missing_support_with_infinity() {
    assert_eq!(policy_kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
}

#[test]
fn kl_rejects_support_mismatch() {
    assert!(policy_kl(&[1.0], &[0.5, 0.5]).is_err());
}

#[test]
fn joint_kl_of_identical_pairs_is_zero() {
    let pairs = vec![
        (vec![0.4, 0.6], vec![0.4, 0.6]),
        (vec![0.1, 0.9], vec![0.1, 0.9]),
    ];
    assert_eq!(joint_policy_kl(&pairs).unwrap(), 0.0);
}

#[test]
fn joint_kl_adds_across_independent_factors() {
    let p = vec![0.5, 0.5];
    let q = vec![0.25, 0.75];
    let kappa = policy_kl(&p, &q).unwrap();
    let pairs = vec![(p.clone(), q.clone()), (p.clone(), q.clone())];
    let joint = joint_policy_kl(&pairs).unwrap();
    assert!((joint - 2.0 * kappa).abs() < 1e-12, "{joint} vs {}", 2.0 * kappa);

    let pairs = vec![(q.clone(), q.clone()), (p, q)];
    let joint = joint_policy_kl(&pairs).unwrap();
    assert!((joint - kappa).abs() < 1e-12);
}

#[test]
fn joint_kl_single_pair_equals_policy_kl() {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    for _ in 0..20 {
        let p = random_policy(3, &mut rng);
        let q = random_policy(3, &mut rng);
        let joint = joint_policy_kl(&[(p.clone(), q.clone())]).unwrap();
        let single = policy_kl(&p, &q).unwrap();
        assert!((joint - single).abs() < 1e-14);
    }
}

#[test]
fn joint_kl_equals_sum_on_random_factored_policies() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut max_dev: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=4);
        let k = rng.gen_range(2..=5);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .map(|_| (random_policy(k, &mut rng), random_policy(k, &mut rng)))
            .collect();
        let joint = joint_policy_kl(&pairs).unwrap();
        let sum: f64 = pairs.iter().map(|(p, q)| policy_kl(p, q).unwrap()).sum();
        max_dev = max_dev.max((joint - sum).abs());
    }
    assert!(max_dev <= 1e-10, "joint vs sum deviation {max_dev}");
}

#[test]
fn joint_kl_capacity_guard() {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..21)
        .map(|_| (vec![0.5, 0.5], vec![0.5, 0.5]))
        .collect();
    assert!(matches!(
        joint_policy_kl(&pairs),
        Err(Error::Capacity { .. })
    ));
}

/// Collect a small coordination-game batch under the given actors.
fn coordination_batch(
    actors: &[MlpParams],
    episodes: usize,
    seed: u64,
) -> crate::envs::TrajectoryBatch {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let snapshot = PolicySnapshot::new(actors);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    collect_rollouts_helper(&mut env, &snapshot, episodes, &mut rng)
}

fn collect_rollouts_helper(
    env: &mut MatrixGame,
    snapshot: &PolicySnapshot,
    episodes: usize,
    rng: &mut ChaCha20Rng,
) -> crate::envs::TrajectoryBatch {
    crate::envs::collect_rollouts(env, snapshot, episodes, 0.99, rng).unwrap()
}

fn uniform_table(batch: &crate::envs::TrajectoryBatch, value: f64) -> AdvantageTable {
    let entries = batch
        .episodes
        .iter()
        .map(|ep| {
            ep.steps
                .iter()
                .map(|_| {
                    (0..batch.n_agents)
                        .map(|_| AdvantageEntry {
                            value,
                            sample_count: 1,
                            variant: EstimatorVariant::McQ,
                            std_err: 0.0,
                            snapshot_hash: 0,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    AdvantageTable { entries }
}

fn small_actor_set(seed: u64) -> ActorSet {
    let env = MatrixGame::new(MatrixGameSpec::coordination());
    ActorSet::init(2, env.obs_dim(), 2, &[16], Activation::Tanh, 0.01, seed)
}

#[test]
fn snapshot_reproduces_stored_log_probs() {
    let actor_set = small_actor_set(3);
    let batch = coordination_batch(&actor_set.actors, 16, 4);
    let snapshot = actor_set.snapshot();
    snapshot.verify_batch(&batch).unwrap();
}

#[test]
fn snapshot_hash_tracks_content() {
    let a = small_actor_set(5);
    let b = small_actor_set(5);
    assert_eq!(PolicySnapshot::new(&a.actors).hash(), PolicySnapshot::new(&b.actors).hash());
    let c = small_actor_set(6);
    assert_ne!(PolicySnapshot::new(&a.actors).hash(), PolicySnapshot::new(&c.actors).hash());
}

#[test]
fn surrogate_at_ratio_one_returns_mean_advantage() {
    let actor_set = small_actor_set(7);
    let batch = coordination_batch(&actor_set.actors, 32, 8);
    let mut adv = uniform_table(&batch, 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut expected = 0.0;
    let mut count = 0;
    for ep in adv.entries.iter_mut() {
        for ts in ep.iter_mut() {
            for e in ts.iter_mut() {
                e.value = rng.gen_range(-1.0..1.0);
                if count % 2 == 0 {
                    expected += e.value;
                }
                count += 1;
            }
        }
    }
    expected /= (count / 2) as f64;
    let cfg = TrustRegionConfig::default();
    for form in [SurrogateForm::PpoMin, SurrogateForm::PaperClip] {
        let mut cfg = cfg.clone();
        cfg.surrogate = form;
        let build =
            clipped_surrogate(&actor_set.actors[0], 0, &batch, &adv, &cfg).unwrap();
        assert!(
            (build.surrogate_value - expected).abs() < 1e-9,
            "{form:?}: {} vs {expected}",
            build.surrogate_value
        );
        assert_eq!(build.clip_fraction, 0.0);
    }
}

#[test]
fn ratio_one_gradient_matches_vanilla_policy_gradient() {
    // At pi_i = pi_{i-1} both surrogate forms and the plain policy-gradient
    // objective -mean(log pi * A) have identical gradients.
    let actor_set = small_actor_set(10);
    let actor = &actor_set.actors[0];
    let batch = coordination_batch(&actor_set.actors, 32, 11);
    let mut adv = uniform_table(&batch, 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for ep in adv.entries.iter_mut() {
        for ts in ep.iter_mut() {
            for e in ts.iter_mut() {
                e.value = rng.gen_range(-1.0..1.0);
            }
        }
    }

    // Reference: vanilla policy gradient on a fresh tape.
    let mut obs_flat = Vec::new();
    let mut actions = Vec::new();
    let mut advs = Vec::new();
    for (e, ep) in batch.episodes.iter().enumerate() {
        for (t, step) in ep.steps.iter().enumerate() {
            obs_flat.extend_from_slice(&step.observations[0]);
            actions.push(step.actions[0]);
            advs.push(adv.entry(e, t, 0).value);
        }
    }
    let rows = actions.len();
    let mut graph = crate::diffmath::ComputationGraph::new();
    let tp = crate::diffmath::MlpTapeParams::load(&mut graph, actor);
    let x = graph.constant(Tensor::matrix(rows, actor.in_dim(), obs_flat));
    let logits = crate::diffmath::forward_on_tape(&mut graph, actor, &tp, x).unwrap();
    let lsm = graph.log_softmax_rows(logits);
    let logp = graph.gather_rows(lsm, actions);
    let advc = graph.constant(Tensor::vector(advs));
    let weighted = graph.mul(logp, advc);
    let mean = graph.mean(weighted);
    let loss = graph.neg(mean);
    let grads = graph.backward(loss).unwrap();
    let pg_flat: Vec<f64> = tp
        .gradients(&grads)
        .iter()
        .flat_map(|(w, b)| w.data.iter().chain(b.data.iter()).copied().collect::<Vec<_>>())
        .collect();

    for form in [SurrogateForm::PpoMin, SurrogateForm::PaperClip] {
        let cfg = TrustRegionConfig {
            surrogate: form,
            ..TrustRegionConfig::default()
        };
        let build = clipped_surrogate(actor, 0, &batch, &adv, &cfg).unwrap();
        let grads = build.graph.backward(build.loss).unwrap();
        let sur_flat: Vec<f64> = build
            .tape_params
            .gradients(&grads)
            .iter()
            .flat_map(|(w, b)| w.data.iter().chain(b.data.iter()).copied().collect::<Vec<_>>())
            .collect();
        for (a, b) in sur_flat.iter().zip(&pg_flat) {
            let scale = a.abs().max(b.abs());
            if scale < 1e-10 {
                continue;
            }
            assert!(
                (a - b).abs() / scale <= 1e-9,
                "{form:?} gradient deviates: {a} vs {b}"
            );
        }
    }
}

/// Build a hand-rolled one-step batch: a single observation, stored action 0
/// with behavior log-prob `old_lp`, and a single-layer actor producing the
/// requested new probability for action 0.
fn ratio_rig(new_p0: f64, old_p0: f64, advantage: f64) -> (MlpParams, crate::envs::TrajectoryBatch, AdvantageTable) {
    let mut actor = MlpParams::zeros(&[2, 2], Activation::Tanh);
    // logits = [ln(p0), ln(1-p0)] via bias only
    actor.layers[0].bias = Tensor::vector(vec![new_p0.ln(), (1.0 - new_p0).ln()]);
    let step = crate::envs::StepRecord {
        state: vec![1.0],
        observations: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        actions: vec![0, 0],
        log_probs: vec![old_p0.ln(), old_p0.ln()],
        policy_probs: vec![vec![old_p0, 1.0 - old_p0]; 2],
        reward: 0.0,
        done: true,
    };
    let episode = crate::envs::Episode {
        steps: vec![step],
        final_state: vec![0.0],
        returns: vec![0.0],
        won: false,
    };
    let batch = crate::envs::TrajectoryBatch {
        episodes: vec![episode],
        n_agents: 2,
        n_actions: 2,
        gamma: 0.99,
    };
    let adv = uniform_table(&batch, advantage);
    (actor, batch, adv)
}

#[test]
fn positive_advantage_ratio_above_clip_is_flat() {
    // ratio 2 with eps 0.1: per-step value min(2, 1.1) = 1.1, gradient zero.
    let (actor, batch, adv) = ratio_rig(0.5, 0.25, 1.0);
    let cfg = TrustRegionConfig::default();
    let build = clipped_surrogate(&actor, 0, &batch, &adv, &cfg).unwrap();
    assert!((build.surrogate_value - 1.1).abs() < 1e-12);
    assert_eq!(build.clip_fraction, 1.0);
    let grads = build.graph.backward(build.loss).unwrap();
    for (w, b) in build.tape_params.gradients(&grads) {
        assert!(w.data.iter().all(|&g| g == 0.0));
        assert!(b.data.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn negative_advantage_ratio_below_clip_is_flat() {
    // ratio 0.5 with eps 0.1 and A = -1: min(-0.5, -0.9) = -0.9 picks the
    // clipped branch, so the pessimistic bound is active and flat.
    let (actor, batch, adv) = ratio_rig(0.25, 0.5, -1.0);
    let cfg = TrustRegionConfig::default();
    let build = clipped_surrogate(&actor, 0, &batch, &adv, &cfg).unwrap();
    assert!((build.surrogate_value - (-0.9)).abs() < 1e-12);
    let grads = build.graph.backward(build.loss).unwrap();
    for (w, b) in build.tape_params.gradients(&grads) {
        assert!(w.data.iter().all(|&g| g == 0.0));
        assert!(b.data.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn advantage_scaling_preserves_branch_and_direction() {
    let actor_set = small_actor_set(13);
    let batch = coordination_batch(&actor_set.actors, 16, 14);
    let mut adv = uniform_table(&batch, 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    for ep in adv.entries.iter_mut() {
        for ts in ep.iter_mut() {
            for e in ts.iter_mut() {
                e.value = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let mut scaled = adv.clone();
    for ep in scaled.entries.iter_mut() {
        for ts in ep.iter_mut() {
            for e in ts.iter_mut() {
                e.value *= 3.0;
            }
        }
    }
    let cfg = TrustRegionConfig::default();
    let b1 = clipped_surrogate(&actor_set.actors[0], 0, &batch, &adv, &cfg).unwrap();
    let b2 = clipped_surrogate(&actor_set.actors[0], 0, &batch, &scaled, &cfg).unwrap();
    assert!((b2.surrogate_value - 3.0 * b1.surrogate_value).abs() < 1e-9);
    let g1 = b1.graph.backward(b1.loss).unwrap();
    let g2 = b2.graph.backward(b2.loss).unwrap();
    for ((w1, _), (w2, _)) in b1
        .tape_params
        .gradients(&g1)
        .iter()
        .zip(b2.tape_params.gradients(&g2).iter())
    {
        for (a, b) in w1.data.iter().zip(&w2.data) {
            assert!((3.0 * a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
        }
    }
}

#[test]
fn surrogate_rejects_zero_behavior_probability() {
    let (actor, mut batch, adv) = ratio_rig(0.5, 0.25, 1.0);
    batch.episodes[0].steps[0].log_probs[0] = f64::NEG_INFINITY;
    let cfg = TrustRegionConfig::default();
    assert!(matches!(
        clipped_surrogate(&actor, 0, &batch, &adv, &cfg),
        Err(Error::Data(_))
    ));
}

#[test]
fn restriction_check_passes_on_untouched_actors() {
    let actor_set = small_actor_set(16);
    let batch = coordination_batch(&actor_set.actors, 8, 17);
    let snapshot = actor_set.snapshot();
    let cfg = TrustRegionConfig::default();
    let report = restriction_check(&snapshot, &actor_set.actors, &batch, &cfg).unwrap();
    assert!(report.verdict);
    assert!(report.per_agent_kl.iter().all(|&kl| kl.abs() < 1e-12));
    assert!(report.offenders.is_empty());
    assert!(report.joint_vs_sum_max_excess <= 1e-10);
}

#[test]
fn restriction_check_identifies_perturbed_agent() {
    let mut actor_set = small_actor_set(18);
    let batch = coordination_batch(&actor_set.actors, 8, 19);
    let snapshot = actor_set.snapshot();
    let cfg = TrustRegionConfig::default();
    // Shift agent 1's output bias until its KL clearly exceeds the budget.
    let last = actor_set.actors[1].layers.len() - 1;
    actor_set.actors[1].layers[last].bias.data[0] += 0.5;
    let report = restriction_check(&snapshot, &actor_set.actors, &batch, &cfg).unwrap();
    assert!(!report.verdict);
    assert_eq!(report.offenders, vec![1]);
    assert!(report.per_agent_kl[1] > cfg.delta2);
    assert!(report.per_agent_kl[0].abs() < 1e-12);
}

#[test]
fn train_iteration_with_constant_critic_leaves_actors_unchanged() {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let mut actor_set = ActorSet::init(2, env.obs_dim(), 2, &[16], Activation::Tanh, 0.01, 20);
    let before: Vec<Vec<f64>> = actor_set.actors.iter().map(|a| a.flat_values()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let cfg = CriticConfig {
        hidden: vec![8],
        ..CriticConfig::default()
    };
    let mut critic = JointQCritic::new(env.state_dim(), 2, 2, &cfg, &mut rng);
    // Zero params make every Q exactly zero, so advantages vanish.
    critic.set_params(MlpParams::zeros(&[critic.input_dim(), 8, 2], Activation::Tanh));
    let mut it_cfg = IterationConfig::default();
    it_cfg.critic_epochs = 0; // keep the critic constant
    let report = train_iteration(&mut env, &mut actor_set, &mut critic, &it_cfg, 22, 0, None).unwrap();
    for (actor, prev) in actor_set.actors.iter().zip(&before) {
        assert_eq!(&actor.flat_values(), prev, "actor moved under zero advantages");
    }
    assert_eq!(report.audit_violations, 0);
    for agent in &report.agents {
        assert!(agent.kl.abs() < 1e-12);
    }
}

#[test]
fn train_iteration_report_fields_are_sane() {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let mut actor_set = ActorSet::init(2, env.obs_dim(), 2, &[16], Activation::Tanh, 0.005, 23);
    let mut rng = ChaCha20Rng::seed_from_u64(24);
    let cfg = CriticConfig {
        hidden: vec![16],
        learning_rate: 0.005,
        ..CriticConfig::default()
    };
    let mut critic = JointQCritic::new(env.state_dim(), 2, 2, &cfg, &mut rng);
    let it_cfg = IterationConfig {
        batch_episodes: 16,
        ..IterationConfig::default()
    };
    for iter in 0..3 {
        let report =
            train_iteration(&mut env, &mut actor_set, &mut critic, &it_cfg, 25, iter, None).unwrap();
        assert_eq!(report.env_steps, 16);
        assert_eq!(report.audit_violations, 0);
        assert_eq!(report.agents.len(), 2);
        for agent in &report.agents {
            assert!(agent.kl >= 0.0);
            assert!((0.0..=1.0).contains(&agent.clip_fraction));
            assert!(agent.entropy >= 0.0 && agent.entropy <= 2.0f64.ln() + 1e-9);
            assert!(agent.epochs_run >= 1);
        }
    }
}

#[test]
fn evaluate_policy_rejects_zero_episodes() {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let actor_set = small_actor_set(26);
    assert!(evaluate_policy(&mut env, &actor_set.actors, 0, false, 1).is_err());
}

#[test]
fn greedy_evaluation_is_deterministic_on_matrix_games() {
    let mut env = MatrixGame::new(MatrixGameSpec::coordination());
    let actor_set = small_actor_set(27);
    let a = evaluate_policy(&mut env, &actor_set.actors, 16, true, 2).unwrap();
    let b = evaluate_policy(&mut env, &actor_set.actors, 16, true, 2).unwrap();
    assert_eq!(a.mean_return, b.mean_return);
    assert_eq!(a.return_std_err, 0.0);
}
