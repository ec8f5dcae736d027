//! Executable invariant suites.
//!
//! Each check returns the measured quantity next to its pinned threshold so
//! reports are machine-readable. The same functions back the `oracle-check`
//! CLI command and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::advantage::{
    marginal_advantage_exact, marginal_advantage_mc, marginal_advantage_via_counterfactual,
    marginal_advantage_via_marginal_q, EstimatorConfig, EstimatorVariant, ExactTableQ,
};
use crate::diffmath::gradcheck::{compare_grads, finite_difference_grad};
use crate::diffmath::{
    forward_on_tape, Activation, ComputationGraph, MlpParams, MlpTapeParams, Tensor,
};
use crate::envs::matrix::JointQTable;
use crate::error::{Error, Result};
use crate::optim::{joint_policy_kl, policy_kl};

pub const DUAL_FORM_TOL: f64 = 1e-10;
pub const ZERO_MEAN_TOL: f64 = 1e-12;
pub const KL_SUM_TOL: f64 = 1e-10;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const MC_SLOPE_LO: f64 = -0.65;
pub const MC_SLOPE_HI: f64 = -0.35;

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    /// The measured quantity (deviation, error, slope, ...).
    pub measured: f64,
    /// The threshold it was compared against.
    pub threshold: f64,
    pub detail: String,
}

impl PropertyResult {
    pub fn line(&self) -> String {
        format!(
            "{} {} measured={:.6e} threshold={:.6e} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub suite: String,
    pub properties: Vec<PropertyResult>,
}

impl OracleReport {
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }
}

fn random_policy(n_actions: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.02..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

fn random_game(rng: &mut ChaCha20Rng) -> (JointQTable, Vec<Vec<f64>>) {
    let n_agents = rng.gen_range(2..=3usize);
    let n_actions = rng.gen_range(2..=4usize);
    let count = n_actions.pow(n_agents as u32);
    let table = JointQTable {
        n_agents,
        n_actions,
        values: (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let policies = (0..n_agents)
        .map(|_| random_policy(n_actions, rng))
        .collect();
    (table, policies)
}

/// Marginal advantage computed through its two algebraic routes on random
/// games; reports the worst absolute deviation.
pub fn check_dual_form(games: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..games {
        let (table, policies) = random_game(&mut rng);
        for agent in 0..table.n_agents {
            for action in 0..table.n_actions {
                let via_q =
                    marginal_advantage_via_marginal_q(&table, &policies, agent, action).unwrap();
                let via_cf =
                    marginal_advantage_via_counterfactual(&table, &policies, agent, action)
                        .unwrap();
                max_dev = max_dev.max((via_q - via_cf).abs());
            }
        }
    }
    PropertyResult {
        name: "marginal-advantage-dual-form".into(),
        pass: max_dev <= DUAL_FORM_TOL,
        measured: max_dev,
        threshold: DUAL_FORM_TOL,
        detail: format!("({games} random games)"),
    }
}

/// Policy-weighted mean of exact marginal advantages must vanish.
pub fn check_zero_mean_exact(games: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..games {
        let (table, policies) = random_game(&mut rng);
        for agent in 0..table.n_agents {
            let mean: f64 = (0..table.n_actions)
                .map(|u| {
                    policies[agent][u]
                        * marginal_advantage_exact(&table, &policies, agent, u).unwrap()
                })
                .sum();
            max_dev = max_dev.max(mean.abs());
        }
    }
    PropertyResult {
        name: "exact-advantage-zero-mean".into(),
        pass: max_dev <= ZERO_MEAN_TOL,
        measured: max_dev,
        threshold: ZERO_MEAN_TOL,
        detail: format!("({games} random games)"),
    }
}

/// MC estimator unbiasedness surrogate: averaging estimates over actions
/// drawn from the agent's own policy and fresh sample pools stays within
/// three standard errors of zero.
pub fn check_mc_unbiased(trials: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (table, policies) = random_game(&mut rng);
    let qfn = ExactTableQ::single(table);
    let cfg = EstimatorConfig {
        m: 10,
        variant: EstimatorVariant::McQ,
    };
    let mut estimates = Vec::with_capacity(trials);
    for _ in 0..trials {
        let agent = rng.gen_range(0..policies.len());
        let (action, _) =
            crate::diffmath::sample_categorical(&policies[agent], &mut rng).unwrap();
        let entry = marginal_advantage_mc(
            &qfn,
            &[1.0],
            &policies,
            agent,
            action,
            &cfg,
            &mut rng,
            None,
            0,
        )
        .unwrap();
        estimates.push(entry.value);
    }
    let mean = estimates.iter().sum::<f64>() / trials as f64;
    let var = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (trials - 1) as f64;
    let se = (var / trials as f64).sqrt();
    let threshold = 3.0 * se;
    PropertyResult {
        name: "mc-advantage-unbiased".into(),
        pass: mean.abs() <= threshold,
        measured: mean.abs(),
        threshold,
        detail: format!("({trials} resamples of action and pool, m={})", cfg.m),
    }
}

/// Mean absolute MC error against the exact oracle at m in {10, 100, 1000};
/// the fitted log-log slope must sit in the O(1/sqrt(m)) band.
pub fn check_mc_convergence(trials_per_m: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (table, policies) = random_game(&mut rng);
    let qfn = ExactTableQ::single(table.clone());
    let agent = 0;
    let action = 0;
    let exact = marginal_advantage_exact(&table, &policies, agent, action).unwrap();
    let ms = [10usize, 100, 1000];
    let mut points = Vec::with_capacity(ms.len());
    for &m in &ms {
        let cfg = EstimatorConfig {
            m,
            variant: EstimatorVariant::McQ,
        };
        let mut err_acc = 0.0;
        for _ in 0..trials_per_m {
            let entry = marginal_advantage_mc(
                &qfn,
                &[1.0],
                &policies,
                agent,
                action,
                &cfg,
                &mut rng,
                None,
                0,
            )
            .unwrap();
            err_acc += (entry.value - exact).abs();
        }
        points.push(((m as f64).ln(), (err_acc / trials_per_m as f64).ln()));
    }
    let x_mean = points.iter().map(|(x, _)| x).sum::<f64>() / points.len() as f64;
    let y_mean = points.iter().map(|(_, y)| y).sum::<f64>() / points.len() as f64;
    let slope = points
        .iter()
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum::<f64>()
        / points.iter().map(|(x, _)| (x - x_mean) * (x - x_mean)).sum::<f64>();
    PropertyResult {
        name: "mc-convergence-slope".into(),
        pass: (MC_SLOPE_LO..=MC_SLOPE_HI).contains(&slope),
        measured: slope,
        threshold: MC_SLOPE_LO,
        detail: format!(
            "(band [{MC_SLOPE_LO}, {MC_SLOPE_HI}], {trials_per_m} trials per m in {{10,100,1000}})"
        ),
    }
}

/// Joint KL of factored policies equals the sum of per-factor KLs.
pub fn check_kl_product_sum(pairs: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..pairs {
        let n = rng.gen_range(2..=4usize);
        let k = rng.gen_range(2..=5usize);
        let factors: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .map(|_| (random_policy(k, &mut rng), random_policy(k, &mut rng)))
            .collect();
        let joint = joint_policy_kl(&factors).unwrap();
        let sum: f64 = factors.iter().map(|(p, q)| policy_kl(p, q).unwrap()).sum();
        max_dev = max_dev.max((joint - sum).abs());
    }
    PropertyResult {
        name: "kl-product-equals-sum".into(),
        pass: max_dev <= KL_SUM_TOL,
        measured: max_dev,
        threshold: KL_SUM_TOL,
        detail: format!("({pairs} random factored policy pairs)"),
    }
}

/// KL closed forms (identical distributions, hand-computed asymmetric case).
pub fn check_kl_closed_forms() -> PropertyResult {
    let zero = policy_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
    let asym = policy_kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    let want = 0.5 * 2.0f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let max_dev = zero.abs().max((asym - want).abs());
    PropertyResult {
        name: "kl-closed-forms".into(),
        pass: max_dev <= 1e-12,
        measured: max_dev,
        threshold: 1e-12,
        detail: "(identical pair and 0.5ln2 + 0.5ln(2/3))".into(),
    }
}

enum LossKind {
    SoftmaxCrossEntropy,
    WeightedLogProb,
    MeanSquared,
    ClippedRatio,
}

/// Build one random loss instance and return (analytic flat grads, loss
/// closure result via finite differences, report).
fn gradient_case(kind: &LossKind, rng: &mut ChaCha20Rng) -> (f64, f64) {
    let in_dim = rng.gen_range(3..6);
    let hidden = rng.gen_range(4..9);
    let out_dim = rng.gen_range(2..5);
    let params = MlpParams::init(&[in_dim, hidden, out_dim], Activation::Tanh, rng);
    let rows = rng.gen_range(2..6);
    let input = Tensor::matrix(
        rows,
        in_dim,
        (0..rows * in_dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    );
    let picks: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..out_dim)).collect();
    let weights: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Old log-probs close to the current ones keep the ratio well inside
    // the clip region, away from finite-difference kinks.
    let mut old_log_probs = Vec::with_capacity(rows);
    {
        let logits = crate::diffmath::forward_mlp(&params, &input).unwrap();
        for (r, &pick) in picks.iter().enumerate() {
            let lsm = crate::diffmath::log_softmax(logits.row(r)).unwrap();
            old_log_probs.push(lsm[pick] - rng.gen_range(-0.04..0.04));
        }
    }

    let build = |p: &MlpParams| -> (ComputationGraph, MlpTapeParams, crate::diffmath::NodeId) {
        let mut graph = ComputationGraph::new();
        let tp = MlpTapeParams::load(&mut graph, p);
        let x = graph.constant(input.clone());
        let logits = forward_on_tape(&mut graph, p, &tp, x).unwrap();
        let loss = match kind {
            LossKind::SoftmaxCrossEntropy => {
                let lsm = graph.log_softmax_rows(logits);
                let picked = graph.gather_rows(lsm, picks.clone());
                let mean = graph.mean(picked);
                graph.neg(mean)
            }
            LossKind::WeightedLogProb => {
                let lsm = graph.log_softmax_rows(logits);
                let picked = graph.gather_rows(lsm, picks.clone());
                let w = graph.constant(Tensor::vector(weights.clone()));
                let weighted = graph.mul(picked, w);
                let mean = graph.mean(weighted);
                graph.neg(mean)
            }
            LossKind::MeanSquared => {
                let picked = graph.gather_rows(logits, picks.clone());
                let t = graph.constant(Tensor::vector(targets.clone()));
                let diff = graph.sub(picked, t);
                let sq = graph.mul(diff, diff);
                graph.mean(sq)
            }
            LossKind::ClippedRatio => {
                let lsm = graph.log_softmax_rows(logits);
                let picked = graph.gather_rows(lsm, picks.clone());
                let old = graph.constant(Tensor::vector(old_log_probs.clone()));
                let log_ratio = graph.sub(picked, old);
                let ratio = graph.exp(log_ratio);
                let clipped = graph.clamp(ratio, 0.8, 1.2);
                let w = graph.constant(Tensor::vector(weights.clone()));
                let raw = graph.mul(ratio, w);
                let clip_term = graph.mul(clipped, w);
                let per_step = graph.min_elem(raw, clip_term);
                let mean = graph.mean(per_step);
                graph.neg(mean)
            }
        };
        (graph, tp, loss)
    };

    let (graph, tp, loss) = build(&params);
    let grads = graph.backward(loss).unwrap();
    let analytic: Vec<f64> = tp
        .gradients(&grads)
        .iter()
        .flat_map(|(w, b)| w.data.iter().chain(b.data.iter()).copied().collect::<Vec<_>>())
        .collect();
    let numeric = finite_difference_grad(&params, 1e-5, |p| {
        let (graph, _, loss) = build(p);
        graph.value(loss).value()
    });
    let report = compare_grads(&analytic, &numeric, 1e-8);
    (report.max_rel_err, report.checked as f64)
}

/// Analytic gradients of random actor- and critic-style losses against
/// central finite differences.
pub fn check_gradient_fidelity(cases: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let kinds = [
        LossKind::SoftmaxCrossEntropy,
        LossKind::WeightedLogProb,
        LossKind::MeanSquared,
        LossKind::ClippedRatio,
    ];
    let mut max_rel: f64 = 0.0;
    let mut checked = 0.0;
    for case in 0..cases {
        let (rel, n) = gradient_case(&kinds[case % kinds.len()], &mut rng);
        max_rel = max_rel.max(rel);
        checked += n;
    }
    PropertyResult {
        name: "gradient-finite-difference".into(),
        pass: max_rel <= GRAD_REL_TOL,
        measured: max_rel,
        threshold: GRAD_REL_TOL,
        detail: format!("({cases} random losses, {checked} coordinates)"),
    }
}

/// Softmax outputs stay valid distributions on random logits.
pub fn check_softmax_validity(cases: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(2..8);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p = crate::diffmath::softmax(&logits).unwrap();
        let sum: f64 = p.iter().sum();
        let neg = p.iter().cloned().fold(0.0f64, |acc, x| acc.min(x));
        max_dev = max_dev.max((sum - 1.0).abs()).max(-neg);
    }
    PropertyResult {
        name: "softmax-distribution-validity".into(),
        pass: max_dev <= 1e-12,
        measured: max_dev,
        threshold: 1e-12,
        detail: format!("({cases} random logit vectors)"),
    }
}

/// Agent whose action never moves the payoff receives exactly zero credit.
pub fn check_dummy_agent_zero_credit(trials: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let table = JointQTable {
        n_agents: 2,
        n_actions: 2,
        values: vec![1.0, 1.0, 0.0, 0.0],
    };
    let mut max_dummy: f64 = 0.0;
    let mut min_active = f64::INFINITY;
    for _ in 0..trials {
        let policies = vec![random_policy(2, &mut rng), random_policy(2, &mut rng)];
        for u in 0..2 {
            max_dummy = max_dummy
                .max(marginal_advantage_exact(&table, &policies, 1, u).unwrap().abs());
        }
        min_active = min_active
            .min(marginal_advantage_exact(&table, &policies, 0, 0).unwrap().abs());
    }
    PropertyResult {
        name: "dummy-agent-zero-credit".into(),
        pass: max_dummy <= 1e-12 && min_active > 1e-9,
        measured: max_dummy,
        threshold: 1e-12,
        detail: format!("(influential agent floor {min_active:.3e})"),
    }
}

/// Run a named suite: advantage, kl, gradients, or all.
pub fn run_suite(suite: &str) -> Result<OracleReport> {
    let advantage = || {
        vec![
            check_dual_form(100, 101),
            check_zero_mean_exact(100, 102),
            check_dummy_agent_zero_credit(50, 103),
            check_mc_unbiased(10_000, 104),
            check_mc_convergence(200, 105),
        ]
    };
    let kl = || {
        vec![
            check_kl_closed_forms(),
            check_kl_product_sum(1000, 201),
        ]
    };
    let gradients = || {
        vec![
            check_softmax_validity(500, 301),
            check_gradient_fidelity(100, 302),
        ]
    };
    let properties = match suite {
        "advantage" => advantage(),
        "kl" => kl(),
        "gradients" => gradients(),
        "all" => {
            let mut all = advantage();
            all.extend(kl());
            all.extend(gradients());
            all
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown suite `{other}` (known: advantage, kl, gradients, all)"
            )))
        }
    };
    Ok(OracleReport {
        suite: suite.to_string(),
        properties,
    })
}
