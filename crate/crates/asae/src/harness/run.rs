//! Training and evaluation entry points behind the CLI.

use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::critic::{CriticConfig, CriticTarget, JointQCritic};
use crate::envs::matrix::JointQTable;
use crate::envs::{collect_rollouts, Environment, GridBattle, JointPolicy, MatrixGame};
use crate::error::Result;
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint};
use crate::harness::config::{EnvConfig, ExperimentConfig};
use crate::harness::metrics::{MetricsRow, MetricsWriter};
use crate::harness::plot::emit_plot;
use crate::optim::{evaluate_policy, train_iteration, ActorSet, EvalReport, IterationReport};
use crate::seeding::{substream, STREAM_CRITIC_INIT, STREAM_ROLLOUT};

pub fn build_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>> {
    Ok(match cfg {
        EnvConfig::Matrix(spec) => Box::new(MatrixGame::new(spec.clone())),
        EnvConfig::GridBattle(spec) => Box::new(GridBattle::new(spec.clone())?),
    })
}

/// Ground-truth tables for the exact estimator (one-step matrix games).
fn exact_tables(cfg: &ExperimentConfig) -> Option<Vec<JointQTable>> {
    match (&cfg.env, cfg.train.estimator) {
        (EnvConfig::Matrix(spec), crate::advantage::EstimatorVariant::Exact) => {
            Some(vec![JointQTable {
                n_agents: spec.n_agents,
                n_actions: spec.n_actions,
                values: spec.payoff.clone(),
            }])
        }
        _ => None,
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

/// State of one seed's training run.
pub struct SeedTrainer {
    pub seed: u64,
    pub env: Box<dyn Environment>,
    pub actor_set: ActorSet,
    pub critic: JointQCritic,
    pub cumulative_steps: usize,
    config: ExperimentConfig,
    tables: Option<Vec<JointQTable>>,
}

impl SeedTrainer {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let env = build_env(&config.env)?;
        let actor_set = ActorSet::init(
            env.n_agents(),
            env.obs_dim(),
            env.n_actions(),
            &config.train.actor_hidden,
            config.train.activation,
            config.train.lr_actor,
            seed,
        );
        let critic_cfg = CriticConfig {
            hidden: config.train.critic_hidden.clone(),
            activation: config.train.activation,
            learning_rate: config.train.lr_critic,
            target_sync_period: config.train.target_sync,
            td_lambda: config.train.td_lambda,
        };
        let mut critic_rng = substream(seed, &[STREAM_CRITIC_INIT]);
        let critic = JointQCritic::new(
            env.state_dim(),
            env.n_agents(),
            env.n_actions(),
            &critic_cfg,
            &mut critic_rng,
        );
        let mut trainer = SeedTrainer {
            seed,
            env,
            actor_set,
            critic,
            cumulative_steps: 0,
            config: config.clone(),
            tables: exact_tables(config),
        };
        if config.train.critic_warm_start {
            trainer.warm_start()?;
        }
        Ok(trainer)
    }

    /// Pre-train the critic on uniform-policy rollouts before iteration 0.
    fn warm_start(&mut self) -> Result<()> {
        let uniform = UniformPolicy {
            n_agents: self.env.n_agents(),
            n_actions: self.env.n_actions(),
        };
        let mut rng = substream(self.seed, &[STREAM_ROLLOUT, u64::MAX]);
        let batch = collect_rollouts(
            self.env.as_mut(),
            &uniform,
            self.config.train.batch_episodes,
            self.config.train.gamma,
            &mut rng,
        )?;
        let targets = CriticTarget::monte_carlo(&batch);
        let mut shuffle_rng = substream(self.seed, &[STREAM_CRITIC_INIT, u64::MAX]);
        self.critic.train(
            &batch,
            &targets,
            self.config.train.critic_epochs,
            self.config.train.critic_minibatch,
            &mut shuffle_rng,
        )?;
        Ok(())
    }

    pub fn step(&mut self, iteration: usize) -> Result<IterationReport> {
        let it_cfg = self.config.iteration_config();
        let report = train_iteration(
            self.env.as_mut(),
            &mut self.actor_set,
            &mut self.critic,
            &it_cfg,
            self.seed,
            iteration,
            self.tables.as_deref(),
        )?;
        self.cumulative_steps += report.env_steps;
        Ok(report)
    }

    pub fn metrics_row(&self, iteration: usize, report: &IterationReport) -> MetricsRow {
        MetricsRow {
            seed: self.seed,
            iteration,
            env_steps: self.cumulative_steps,
            mean_return: report.mean_return,
            win_rate: self
                .env
                .has_win_condition()
                .then_some(report.win_rate),
            per_agent_kl: report.agents.iter().map(|a| a.kl).collect(),
            per_agent_entropy: report.agents.iter().map(|a| a.entropy).collect(),
            critic_loss: report.critic_loss,
            clip_fraction: if report.agents.is_empty() {
                0.0
            } else {
                report.agents.iter().map(|a| a.clip_fraction).sum::<f64>()
                    / report.agents.len() as f64
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.config.env,
            &self.actor_set.actors,
            self.critic.params(),
            self.env.obs_dim(),
            self.env.state_dim(),
        )
    }
}

pub struct TrainArtifacts {
    pub metrics_path: PathBuf,
    pub plot_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Run every seed in the config, streaming metrics rows to
/// `<out_dir>/metrics.csv` (partial files survive failures), writing
/// periodic and final checkpoints, and emitting the learning-curve SVG.
pub fn run_training(config: &ExperimentConfig) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(&config.out_dir)?;
    let metrics_path = config.out_dir.join("metrics.csv");
    let plot_path = config.out_dir.join("learning_curve.svg");
    let probe_env = build_env(&config.env)?;
    let n_agents = probe_env.n_agents();
    let with_win = probe_env.has_win_condition();
    drop(probe_env);

    let file = std::fs::File::create(&metrics_path)?;
    let mut writer = MetricsWriter::new(BufWriter::new(file), n_agents, with_win)?;
    let mut checkpoints = Vec::new();

    for &seed in &config.seeds {
        let started = Instant::now();
        let mut trainer = SeedTrainer::new(config, seed)?;
        for iteration in 0..config.iterations {
            let iter_started = Instant::now();
            let report = trainer.step(iteration)?;
            writer.write_row(&trainer.metrics_row(iteration, &report))?;
            if config.checkpoint_every > 0 && (iteration + 1) % config.checkpoint_every == 0 {
                let path = config
                    .out_dir
                    .join(format!("ckpt_seed{seed}_iter{:05}.bin", iteration + 1));
                trainer.save(&path)?;
                checkpoints.push(path);
            }
            println!(
                "seed {seed} iter {iteration} steps {} return {:.4}{} critic_loss {:.5} kl {} wall_ms {}",
                trainer.cumulative_steps,
                report.mean_return,
                if with_win {
                    format!(" win_rate {:.3}", report.win_rate)
                } else {
                    String::new()
                },
                report.critic_loss,
                report
                    .agents
                    .iter()
                    .map(|a| format!("{:.4}", a.kl))
                    .collect::<Vec<_>>()
                    .join("/"),
                iter_started.elapsed().as_millis(),
            );
        }
        let final_path = config.out_dir.join(format!("ckpt_seed{seed}_final.bin"));
        trainer.save(&final_path)?;
        checkpoints.push(final_path);
        println!(
            "seed {seed} finished {} iterations in {} ms",
            config.iterations,
            started.elapsed().as_millis()
        );
    }

    emit_plot(&metrics_path, &plot_path)?;
    Ok(TrainArtifacts {
        metrics_path,
        plot_path,
        checkpoints,
    })
}

/// Evaluate a checkpoint on the environment stored inside it.
pub fn run_eval(checkpoint: &Path, episodes: usize, greedy: bool, seed: u64) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut env = build_env(&ckpt.env)?;
    if env.obs_dim() != ckpt.obs_dim
        || env.state_dim() != ckpt.state_dim
        || env.n_agents() != ckpt.actors.len()
        || env.n_actions() != ckpt.actors[0].out_dim()
    {
        return Err(crate::error::Error::Checkpoint(format!(
            "checkpoint/environment mismatch: env wants {} agents x {} actions, obs {}, state {}; \
             checkpoint has {} agents x {} actions, obs {}, state {}",
            env.n_agents(),
            env.n_actions(),
            env.obs_dim(),
            env.state_dim(),
            ckpt.actors.len(),
            ckpt.actors[0].out_dim(),
            ckpt.obs_dim,
            ckpt.state_dim,
        )));
    }
    evaluate_policy(env.as_mut(), &ckpt.actors, episodes, greedy, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            "\
[experiment]
seeds = 7
iterations = 3
out_dir = {}
checkpoint_every = 2

[env]
id = matrix
payoff = 1 0 0 0.5

[train]
m = 8
batch_episodes = 8
critic_epochs = 2
actor_hidden = 8
critic_hidden = 8
",
            dir.display()
        );
        parse_config(&text, &[]).unwrap()
    }

    #[test]
    fn training_produces_metrics_checkpoints_and_plot() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let artifacts = run_training(&config).unwrap();
        assert!(artifacts.metrics_path.exists());
        assert!(artifacts.plot_path.exists());
        // One periodic checkpoint (iter 2) plus the final one.
        assert_eq!(artifacts.checkpoints.len(), 2);
        for p in &artifacts.checkpoints {
            assert!(p.exists());
        }
        let text = std::fs::read_to_string(&artifacts.metrics_path).unwrap();
        assert_eq!(text.lines().count(), 4); // header + 3 iterations
    }

    #[test]
    fn zero_iterations_leave_a_header_only_metrics_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.iterations = 0;
        let artifacts = run_training(&config).unwrap();
        let text = std::fs::read_to_string(&artifacts.metrics_path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("seed,iteration,env_steps,mean_return"));
    }

    #[test]
    fn identical_config_and_seed_reproduce_metrics_bytes() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut c1 = tiny_config(dir1.path());
        let mut c2 = tiny_config(dir2.path());
        c1.iterations = 4;
        c2.iterations = 4;
        let a1 = run_training(&c1).unwrap();
        let a2 = run_training(&c2).unwrap();
        let b1 = std::fs::read(&a1.metrics_path).unwrap();
        let b2 = std::fs::read(&a2.metrics_path).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn eval_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let artifacts = run_training(&config).unwrap();
        let final_ckpt = artifacts.checkpoints.last().unwrap();
        let report = run_eval(final_ckpt, 16, false, 1).unwrap();
        assert_eq!(report.episodes, 16);
        assert!(report.mean_return.is_finite());
        let err = run_eval(final_ckpt, 0, false, 1);
        assert!(err.is_err());
    }
}
