//! Versioned binary checkpoints.
//!
//! Layout: magic bytes `ASAE`, format version u32 LE, then a sequence of
//! length-prefixed named f64 arrays until EOF:
//!
//! ```text
//! [u32 name_len][name bytes][u64 value_count][f64 LE * value_count]
//! ```
//!
//! Stored arrays: `env.kind` plus the environment parameters, `meta`
//! (agents, actions, obs/state dims, activation code), per-actor layer
//! sizes and `w{l}`/`b{l}` matrices, and the critic likewise. The
//! environment is embedded so `eval` can rebuild it from the checkpoint
//! alone.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffmath::{Activation, DenseLayer, MlpParams, Tensor};
use crate::envs::{GridBattleSpec, MatrixGameSpec, OpponentPolicy};
use crate::error::{Error, Result};
use crate::harness::config::EnvConfig;

pub const MAGIC: &[u8; 4] = b"ASAE";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub env: EnvConfig,
    pub actors: Vec<MlpParams>,
    pub critic: MlpParams,
    pub obs_dim: usize,
    pub state_dim: usize,
}

fn write_array(out: &mut impl Write, name: &str, values: &[f64]) -> Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn activation_code(a: Activation) -> f64 {
    match a {
        Activation::Tanh => 0.0,
        Activation::Relu => 1.0,
    }
}

fn activation_from_code(c: f64) -> Result<Activation> {
    match c as i64 {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Relu),
        other => Err(Error::Checkpoint(format!("unknown activation code {other}"))),
    }
}

fn env_arrays(env: &EnvConfig) -> Vec<(String, Vec<f64>)> {
    match env {
        EnvConfig::Matrix(m) => {
            let mut v = vec![
                m.n_agents as f64,
                m.n_actions as f64,
                m.horizon as f64,
            ];
            v.extend_from_slice(&m.payoff);
            vec![("env.kind".into(), vec![0.0]), ("env.matrix".into(), v)]
        }
        EnvConfig::GridBattle(g) => {
            let v = vec![
                g.width as f64,
                g.height as f64,
                g.allies as f64,
                g.enemies as f64,
                g.unit_hp as f64,
                g.attack_range as f64,
                g.attack_damage as f64,
                g.sight_radius as f64,
                g.max_steps as f64,
                match g.opponent {
                    OpponentPolicy::NearestAttacker => 0.0,
                },
            ];
            vec![("env.kind".into(), vec![1.0]), ("env.grid".into(), v)]
        }
    }
}

fn env_from_arrays(arrays: &BTreeMap<String, Vec<f64>>) -> Result<EnvConfig> {
    let kind = arrays
        .get("env.kind")
        .and_then(|v| v.first())
        .ok_or_else(|| Error::Checkpoint("missing env.kind".into()))?;
    match *kind as i64 {
        0 => {
            let v = arrays
                .get("env.matrix")
                .ok_or_else(|| Error::Checkpoint("missing env.matrix".into()))?;
            if v.len() < 3 {
                return Err(Error::Checkpoint("malformed env.matrix".into()));
            }
            let spec = MatrixGameSpec::new(
                v[0] as usize,
                v[1] as usize,
                v[3..].to_vec(),
                v[2] as usize,
            )
            .map_err(|e| Error::Checkpoint(format!("bad matrix env in checkpoint: {e}")))?;
            Ok(EnvConfig::Matrix(spec))
        }
        1 => {
            let v = arrays
                .get("env.grid")
                .ok_or_else(|| Error::Checkpoint("missing env.grid".into()))?;
            if v.len() != 10 {
                return Err(Error::Checkpoint("malformed env.grid".into()));
            }
            let spec = GridBattleSpec {
                width: v[0] as usize,
                height: v[1] as usize,
                allies: v[2] as usize,
                enemies: v[3] as usize,
                unit_hp: v[4] as i32,
                attack_range: v[5] as i32,
                attack_damage: v[6] as i32,
                sight_radius: v[7] as i32,
                max_steps: v[8] as usize,
                opponent: match v[9] as i64 {
                    0 => OpponentPolicy::NearestAttacker,
                    other => {
                        return Err(Error::Checkpoint(format!(
                            "unknown opponent code {other}"
                        )))
                    }
                },
            };
            spec.validate()
                .map_err(|e| Error::Checkpoint(format!("bad grid env in checkpoint: {e}")))?;
            Ok(EnvConfig::GridBattle(spec))
        }
        other => Err(Error::Checkpoint(format!("unknown env kind {other}"))),
    }
}

fn mlp_arrays(prefix: &str, params: &MlpParams, out: &mut Vec<(String, Vec<f64>)>) {
    let sizes: Vec<f64> = params.layer_sizes().iter().map(|&s| s as f64).collect();
    out.push((format!("{prefix}.sizes"), sizes));
    for (l, layer) in params.layers.iter().enumerate() {
        out.push((format!("{prefix}.w{l}"), layer.weight.data.clone()));
        out.push((format!("{prefix}.b{l}"), layer.bias.data.clone()));
    }
}

fn mlp_from_arrays(
    prefix: &str,
    arrays: &BTreeMap<String, Vec<f64>>,
    activation: Activation,
) -> Result<MlpParams> {
    let sizes_f = arrays
        .get(&format!("{prefix}.sizes"))
        .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.sizes")))?;
    let sizes: Vec<usize> = sizes_f.iter().map(|&s| s as usize).collect();
    if sizes.len() < 2 {
        return Err(Error::Checkpoint(format!("malformed {prefix}.sizes")));
    }
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for (l, w) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weight = arrays
            .get(&format!("{prefix}.w{l}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.w{l}")))?;
        let bias = arrays
            .get(&format!("{prefix}.b{l}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.b{l}")))?;
        if weight.len() != fan_in * fan_out || bias.len() != fan_out {
            return Err(Error::Checkpoint(format!(
                "array sizes for {prefix} layer {l} disagree with {prefix}.sizes"
            )));
        }
        layers.push(DenseLayer {
            weight: Tensor::matrix(fan_out, fan_in, weight.clone()),
            bias: Tensor::vector(bias.clone()),
        });
    }
    Ok(MlpParams { layers, activation })
}

pub fn save_checkpoint(
    path: &Path,
    env: &EnvConfig,
    actors: &[MlpParams],
    critic: &MlpParams,
    obs_dim: usize,
    state_dim: usize,
) -> Result<()> {
    let mut arrays: Vec<(String, Vec<f64>)> = env_arrays(env);
    arrays.push((
        "meta".into(),
        vec![
            actors.len() as f64,
            actors[0].out_dim() as f64,
            obs_dim as f64,
            state_dim as f64,
            activation_code(actors[0].activation),
        ],
    ));
    for (i, actor) in actors.iter().enumerate() {
        mlp_arrays(&format!("actor{i}"), actor, &mut arrays);
    }
    mlp_arrays("critic", critic, &mut arrays);

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, values) in &arrays {
        write_array(&mut out, name, values)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
    }
    let mut version = [0u8; 4];
    file.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let mut arrays: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    loop {
        let mut len4 = [0u8; 4];
        match file.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("array name is not utf-8".into()))?;
        let mut len8 = [0u8; 8];
        file.read_exact(&mut len8)?;
        let count = u64::from_le_bytes(len8) as usize;
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            file.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        arrays.insert(name, values);
    }

    let meta = arrays
        .get("meta")
        .ok_or_else(|| Error::Checkpoint("missing meta array".into()))?;
    if meta.len() != 5 {
        return Err(Error::Checkpoint("malformed meta array".into()));
    }
    let n_agents = meta[0] as usize;
    let n_actions = meta[1] as usize;
    let obs_dim = meta[2] as usize;
    let state_dim = meta[3] as usize;
    let activation = activation_from_code(meta[4])?;

    let env = env_from_arrays(&arrays)?;
    let mut actors = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let actor = mlp_from_arrays(&format!("actor{i}"), &arrays, activation)?;
        if actor.out_dim() != n_actions || actor.in_dim() != obs_dim {
            return Err(Error::Checkpoint(format!(
                "actor {i} is {}x{} but meta says {obs_dim}x{n_actions}",
                actor.in_dim(),
                actor.out_dim()
            )));
        }
        actors.push(actor);
    }
    let critic = mlp_from_arrays("critic", &arrays, activation)?;
    Ok(Checkpoint {
        env,
        actors,
        critic,
        obs_dim,
        state_dim,
    })
}
