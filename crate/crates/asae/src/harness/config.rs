//! Experiment configuration.
//!
//! Flat key-value text with `[section]` headers, `#` comments, and
//! whitespace-separated numeric arrays. Unknown keys are rejected with the
//! offending `section.key` in the error. The `algorithm` key applies a
//! baseline preset first; explicit keys always win over the preset.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::advantage::{EstimatorConfig, EstimatorVariant};
use crate::diffmath::Activation;
use crate::envs::{GridBattleSpec, MatrixGameSpec, OpponentPolicy};
use crate::error::{Error, Result};
use crate::optim::{IterationConfig, SurrogateForm, TrustRegionConfig, UpdateSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Marginal advantages by MC sample reorganization, KL-restricted
    /// per-agent clipped updates from one snapshot.
    Asae,
    /// Shared-signal baseline: discounted-sum TD-residual advantages, no
    /// counterfactual credit.
    IndependentPpo,
    /// Single-sample counterfactual baseline: the realized others' actions
    /// only (m = 1), updated over epochs without the KL early stop.
    ComaAsync,
}

impl Algorithm {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "asae" => Ok(Algorithm::Asae),
            "independent-ppo" => Ok(Algorithm::IndependentPpo),
            "coma-async" => Ok(Algorithm::ComaAsync),
            other => Err(Error::config(
                "experiment.algorithm",
                format!("unknown algorithm `{other}` (known: asae, independent-ppo, coma-async)"),
            )),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Asae => "asae",
            Algorithm::IndependentPpo => "independent-ppo",
            Algorithm::ComaAsync => "coma-async",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Matrix(MatrixGameSpec),
    GridBattle(GridBattleSpec),
}

impl EnvConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::Matrix(_) => "matrix",
            EnvConfig::GridBattle(_) => "grid-battle",
        }
    }

    pub fn has_win_condition(&self) -> bool {
        matches!(self, EnvConfig::GridBattle(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub m: usize,
    pub clip_range: f64,
    pub delta2: f64,
    pub gamma: f64,
    pub batch_episodes: usize,
    pub actor_epochs: usize,
    pub critic_epochs: usize,
    pub critic_minibatch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub estimator: EstimatorVariant,
    pub surrogate: SurrogateForm,
    pub kl_early_stop: bool,
    pub entropy_coef: f64,
    pub target_sync: usize,
    pub td_lambda: Option<f64>,
    pub critic_warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 50,
            clip_range: 0.1,
            delta2: 0.01,
            gamma: 0.99,
            batch_episodes: 32,
            actor_epochs: 4,
            critic_epochs: 10,
            critic_minibatch: 64,
            lr_actor: 0.0005,
            lr_critic: 0.0005,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            activation: Activation::Tanh,
            estimator: EstimatorVariant::McQ,
            surrogate: SurrogateForm::PpoMin,
            kl_early_stop: true,
            entropy_coef: 0.0,
            target_sync: 50,
            td_lambda: None,
            critic_warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub out_dir: PathBuf,
    /// Periodic checkpoint interval in iterations; 0 keeps only the final
    /// checkpoint.
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn iteration_config(&self) -> IterationConfig {
        IterationConfig {
            batch_episodes: self.train.batch_episodes,
            gamma: self.train.gamma,
            critic_epochs: self.train.critic_epochs,
            critic_minibatch: self.train.critic_minibatch,
            trust: TrustRegionConfig {
                clip_range: self.train.clip_range,
                delta2: self.train.delta2,
                actor_epochs: self.train.actor_epochs,
                kl_early_stop: self.train.kl_early_stop,
                surrogate: self.train.surrogate,
                entropy_coef: self.train.entropy_coef,
            },
            estimator: EstimatorConfig {
                m: self.train.m,
                variant: self.train.estimator,
            },
            schedule: UpdateSchedule::Synchronous,
            critic_td_lambda: self.train.td_lambda,
        }
    }

    /// Serialize back to config-file text; parsing the output reproduces the
    /// config.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        s.push_str("[experiment]\n");
        s.push_str(&format!("algorithm = {}\n", self.algorithm.id()));
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        s.push_str(&format!("seeds = {}\n", seeds.join(" ")));
        s.push_str(&format!("iterations = {}\n", self.iterations));
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        s.push_str(&format!("checkpoint_every = {}\n", self.checkpoint_every));
        s.push_str("\n[env]\n");
        s.push_str(&format!("id = {}\n", self.env.id()));
        match &self.env {
            EnvConfig::Matrix(m) => {
                s.push_str(&format!("agents = {}\n", m.n_agents));
                s.push_str(&format!("actions = {}\n", m.n_actions));
                let payoff: Vec<String> = m.payoff.iter().map(|x| format!("{x}")).collect();
                s.push_str(&format!("payoff = {}\n", payoff.join(" ")));
                s.push_str(&format!("horizon = {}\n", m.horizon));
            }
            EnvConfig::GridBattle(g) => {
                s.push_str(&format!("width = {}\n", g.width));
                s.push_str(&format!("height = {}\n", g.height));
                s.push_str(&format!("allies = {}\n", g.allies));
                s.push_str(&format!("enemies = {}\n", g.enemies));
                s.push_str(&format!("unit_hp = {}\n", g.unit_hp));
                s.push_str(&format!("attack_range = {}\n", g.attack_range));
                s.push_str(&format!("attack_damage = {}\n", g.attack_damage));
                s.push_str(&format!("sight_radius = {}\n", g.sight_radius));
                s.push_str(&format!("max_steps = {}\n", g.max_steps));
                s.push_str(&format!("opponent = {}\n", g.opponent.id()));
            }
        }
        let t = &self.train;
        s.push_str("\n[train]\n");
        s.push_str(&format!("m = {}\n", t.m));
        s.push_str(&format!("clip_range = {}\n", t.clip_range));
        s.push_str(&format!("delta2 = {}\n", t.delta2));
        s.push_str(&format!("gamma = {}\n", t.gamma));
        s.push_str(&format!("batch_episodes = {}\n", t.batch_episodes));
        s.push_str(&format!("actor_epochs = {}\n", t.actor_epochs));
        s.push_str(&format!("critic_epochs = {}\n", t.critic_epochs));
        s.push_str(&format!("critic_minibatch = {}\n", t.critic_minibatch));
        s.push_str(&format!("lr_actor = {}\n", t.lr_actor));
        s.push_str(&format!("lr_critic = {}\n", t.lr_critic));
        let hid: Vec<String> = t.actor_hidden.iter().map(|x| x.to_string()).collect();
        s.push_str(&format!("actor_hidden = {}\n", hid.join(" ")));
        let hid: Vec<String> = t.critic_hidden.iter().map(|x| x.to_string()).collect();
        s.push_str(&format!("critic_hidden = {}\n", hid.join(" ")));
        s.push_str(&format!(
            "activation = {}\n",
            match t.activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
            }
        ));
        s.push_str(&format!("estimator = {}\n", t.estimator.id()));
        s.push_str(&format!("surrogate = {}\n", t.surrogate.id()));
        s.push_str(&format!("kl_early_stop = {}\n", t.kl_early_stop));
        s.push_str(&format!("entropy_coef = {}\n", t.entropy_coef));
        s.push_str(&format!("target_sync = {}\n", t.target_sync));
        if let Some(l) = t.td_lambda {
            s.push_str(&format!("td_lambda = {l}\n"));
        }
        s.push_str(&format!("critic_warm_start = {}\n", t.critic_warm_start));
        s
    }
}

/// Raw parsed key-value view with consumption tracking.
struct RawConfig {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') || line.len() < 3 {
                    return Err(Error::config(
                        format!("line {}", lineno + 1),
                        format!("malformed section header `{line}`"),
                    ));
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    "empty key".to_string(),
                ));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if values.insert(full.clone(), value.to_string()).is_some() {
                return Err(Error::config(full, "duplicate key"));
            }
        }
        Ok(RawConfig {
            values,
            consumed: BTreeSet::new(),
        })
    }

    fn apply_override(&mut self, spec: &str) -> Result<()> {
        let Some(eq) = spec.find('=') else {
            return Err(Error::config(
                spec,
                "override must look like section.key=value",
            ));
        };
        let key = spec[..eq].trim().to_string();
        let value = spec[eq + 1..].trim().to_string();
        if !key.contains('.') {
            return Err(Error::config(key, "override key must be section.key"));
        }
        self.values.insert(key, value);
        Ok(())
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.values.get(key).cloned()
    }

    fn take<T, F: FnOnce(&str) -> std::result::Result<T, String>>(
        &mut self,
        key: &str,
        default: T,
        parse: F,
    ) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => parse(&raw).map_err(|m| Error::config(key, m)),
        }
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.get(key)
            .ok_or_else(|| Error::config(key, "required key is missing"))
    }

    fn finish(&self) -> Result<()> {
        for key in self.values.keys() {
            if !self.consumed.contains(key) {
                return Err(Error::config(key, "unknown key"));
            }
        }
        Ok(())
    }
}

fn parse_usize(raw: &str) -> std::result::Result<usize, String> {
    raw.parse::<usize>()
        .map_err(|_| format!("expected a non-negative integer, got `{raw}`"))
}

fn parse_i32(raw: &str) -> std::result::Result<i32, String> {
    raw.parse::<i32>().map_err(|_| format!("expected an integer, got `{raw}`"))
}

fn parse_f64(raw: &str) -> std::result::Result<f64, String> {
    raw.parse::<f64>().map_err(|_| format!("expected a number, got `{raw}`"))
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

fn parse_usize_list(raw: &str) -> std::result::Result<Vec<usize>, String> {
    raw.split_whitespace().map(parse_usize).collect()
}

fn parse_u64_list(raw: &str) -> std::result::Result<Vec<u64>, String> {
    raw.split_whitespace()
        .map(|x| {
            x.parse::<u64>()
                .map_err(|_| format!("expected an integer seed, got `{x}`"))
        })
        .collect()
}

fn parse_f64_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split_whitespace().map(parse_f64).collect()
}

fn in_range(key: &str, value: f64, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Result<()> {
    let ok_lo = if lo_open { value > lo } else { value >= lo };
    let ok_hi = if hi_open { value < hi } else { value <= hi };
    if ok_lo && ok_hi {
        Ok(())
    } else {
        Err(Error::config(
            key,
            format!("value {value} outside documented range"),
        ))
    }
}

fn parse_env(raw: &mut RawConfig) -> Result<EnvConfig> {
    let id = raw.require("env.id")?;
    match id.as_str() {
        "matrix" => {
            let agents = raw.take("env.agents", 2, parse_usize)?;
            let actions = raw.take("env.actions", 2, parse_usize)?;
            let horizon = raw.take("env.horizon", 1, parse_usize)?;
            let payoff_raw = raw.require("env.payoff")?;
            let payoff = parse_f64_list(&payoff_raw).map_err(|m| Error::config("env.payoff", m))?;
            let spec = MatrixGameSpec::new(agents, actions, payoff, horizon)
                .map_err(|e| Error::config("env.payoff", e.to_string()))?;
            Ok(EnvConfig::Matrix(spec))
        }
        "grid-battle" => {
            let d = GridBattleSpec::default();
            let spec = GridBattleSpec {
                width: raw.take("env.width", d.width, parse_usize)?,
                height: raw.take("env.height", d.height, parse_usize)?,
                allies: raw.take("env.allies", d.allies, parse_usize)?,
                enemies: raw.take("env.enemies", d.enemies, parse_usize)?,
                unit_hp: raw.take("env.unit_hp", d.unit_hp, parse_i32)?,
                attack_range: raw.take("env.attack_range", d.attack_range, parse_i32)?,
                attack_damage: raw.take("env.attack_damage", d.attack_damage, parse_i32)?,
                sight_radius: raw.take("env.sight_radius", d.sight_radius, parse_i32)?,
                max_steps: raw.take("env.max_steps", d.max_steps, parse_usize)?,
                opponent: raw.take("env.opponent", d.opponent, |s| {
                    OpponentPolicy::from_id(s).map_err(|e| e.to_string())
                })?,
            };
            spec.validate().map_err(|e| Error::config("env", e.to_string()))?;
            Ok(EnvConfig::GridBattle(spec))
        }
        other => Err(Error::config(
            "env.id",
            format!("unknown environment `{other}` (known: matrix, grid-battle)"),
        )),
    }
}

/// Parse config text plus `--set section.key=value` overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut raw = RawConfig::parse(text)?;
    for spec in overrides {
        raw.apply_override(spec)?;
    }

    let algorithm = Algorithm::from_id(&raw.take(
        "experiment.algorithm",
        "asae".to_string(),
        |s| Ok(s.to_string()),
    )?)?;
    let seeds = raw.take("experiment.seeds", vec![0], |s| parse_u64_list(s))?;
    if seeds.is_empty() {
        return Err(Error::config("experiment.seeds", "at least one seed required"));
    }
    let iterations = raw.take("experiment.iterations", 200, parse_usize)?;
    let out_dir = PathBuf::from(raw.take("experiment.out_dir", "runs/out".to_string(), |s| {
        Ok(s.to_string())
    })?);
    let checkpoint_every = raw.take("experiment.checkpoint_every", 0, parse_usize)?;

    let env = parse_env(&mut raw)?;

    // Baseline presets; explicit [train] keys override them below.
    let mut t = TrainConfig::default();
    match algorithm {
        Algorithm::Asae => {}
        Algorithm::IndependentPpo => {
            t.estimator = EstimatorVariant::TdResidualDiscountedSum;
        }
        Algorithm::ComaAsync => {
            t.estimator = EstimatorVariant::McQ;
            t.m = 1;
            t.kl_early_stop = false;
        }
    }

    t.m = raw.take("train.m", t.m, parse_usize)?;
    t.clip_range = raw.take("train.clip_range", t.clip_range, parse_f64)?;
    t.delta2 = raw.take("train.delta2", t.delta2, parse_f64)?;
    t.gamma = raw.take("train.gamma", t.gamma, parse_f64)?;
    t.batch_episodes = raw.take("train.batch_episodes", t.batch_episodes, parse_usize)?;
    t.actor_epochs = raw.take("train.actor_epochs", t.actor_epochs, parse_usize)?;
    t.critic_epochs = raw.take("train.critic_epochs", t.critic_epochs, parse_usize)?;
    t.critic_minibatch = raw.take("train.critic_minibatch", t.critic_minibatch, parse_usize)?;
    t.lr_actor = raw.take("train.lr_actor", t.lr_actor, parse_f64)?;
    t.lr_critic = raw.take("train.lr_critic", t.lr_critic, parse_f64)?;
    t.actor_hidden = raw.take("train.actor_hidden", t.actor_hidden, parse_usize_list)?;
    t.critic_hidden = raw.take("train.critic_hidden", t.critic_hidden, parse_usize_list)?;
    t.activation = raw.take("train.activation", t.activation, |s| match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(format!("unknown activation `{other}` (known: tanh, relu)")),
    })?;
    t.estimator = raw.take("train.estimator", t.estimator, |s| {
        EstimatorVariant::from_id(s).map_err(|e| e.to_string())
    })?;
    t.surrogate = raw.take("train.surrogate", t.surrogate, |s| {
        SurrogateForm::from_id(s).map_err(|e| e.to_string())
    })?;
    t.kl_early_stop = raw.take("train.kl_early_stop", t.kl_early_stop, parse_bool)?;
    t.entropy_coef = raw.take("train.entropy_coef", t.entropy_coef, parse_f64)?;
    t.target_sync = raw.take("train.target_sync", t.target_sync, parse_usize)?;
    t.td_lambda = raw.take("train.td_lambda", t.td_lambda, |s| parse_f64(s).map(Some))?;
    t.critic_warm_start = raw.take("train.critic_warm_start", t.critic_warm_start, parse_bool)?;
    raw.finish()?;

    // Documented ranges.
    if t.m == 0 {
        return Err(Error::config("train.m", "m must be >= 1"));
    }
    in_range("train.clip_range", t.clip_range, 0.0, 1.0, true, true)?;
    in_range("train.delta2", t.delta2, 0.0, f64::INFINITY, true, true)?;
    in_range("train.gamma", t.gamma, 0.0, 1.0, false, true)?;
    in_range("train.lr_actor", t.lr_actor, 0.0, f64::INFINITY, true, true)?;
    in_range("train.lr_critic", t.lr_critic, 0.0, f64::INFINITY, true, true)?;
    in_range("train.entropy_coef", t.entropy_coef, 0.0, f64::INFINITY, false, true)?;
    if let Some(l) = t.td_lambda {
        in_range("train.td_lambda", l, 0.0, 1.0, false, false)?;
    }
    if t.batch_episodes == 0 {
        return Err(Error::config("train.batch_episodes", "must be >= 1"));
    }
    if t.actor_epochs == 0 {
        return Err(Error::config("train.actor_epochs", "must be >= 1"));
    }
    if t.actor_hidden.is_empty() || t.critic_hidden.is_empty() {
        return Err(Error::config("train.actor_hidden", "need at least one hidden layer"));
    }
    if t.estimator == EstimatorVariant::Exact {
        match &env {
            EnvConfig::Matrix(spec) if spec.horizon == 1 => {}
            _ => {
                return Err(Error::config(
                    "train.estimator",
                    "exact estimator needs a one-step matrix game",
                ));
            }
        }
    }

    let out_dir = match std::env::var_os("ASAE_OUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => out_dir,
    };

    Ok(ExperimentConfig {
        algorithm,
        seeds,
        iterations,
        out_dir,
        checkpoint_every,
        env,
        train: t,
    })
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(
            path.display().to_string(),
            format!("cannot read config file: {e}"),
        )
    })?;
    parse_config(&text, overrides)
}
