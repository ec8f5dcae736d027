//! Adam optimizer over `MlpParams`.

use crate::diffmath::mlp::MlpParams;
use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment state, one pair of tensors per layer (weight, bias).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<(Tensor, Tensor)>,
    v: Vec<(Tensor, Tensor)>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        let zeros = |p: &MlpParams| {
            p.layers
                .iter()
                .map(|l| {
                    (
                        Tensor::zeros(l.weight.shape.clone()),
                        Tensor::zeros(l.bias.shape.clone()),
                    )
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Second-moment estimate for layer `li` (weight part), for tests.
    pub fn second_moment_weight(&self, li: usize) -> &Tensor {
        &self.v[li].0
    }
}

fn update_slice(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    bias1: f64,
    bias2: f64,
    path: &str,
) -> Result<()> {
    for i in 0..param.len() {
        let g = grad[i];
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at {path}[{i}]"
            )));
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// One Adam step. `grads` must be aligned with `params.layers`. NaN gradients
/// abort with a training error naming the parameter path.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &[(Tensor, Tensor)],
    state: &mut AdamState,
) -> Result<()> {
    if grads.len() != params.layers.len() {
        return Err(Error::Dimension(format!(
            "adam_step expects {} layer gradients, got {}",
            params.layers.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let bias1 = 1.0 - state.config.beta1.powi(state.step as i32);
    let bias2 = 1.0 - state.config.beta2.powi(state.step as i32);
    let cfg = state.config.clone();
    for (li, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads[li];
        if gw.shape != layer.weight.shape || gb.shape != layer.bias.shape {
            return Err(Error::Dimension(format!(
                "adam_step gradient shape mismatch at layer {li}"
            )));
        }
        update_slice(
            &mut layer.weight.data,
            &gw.data,
            &mut state.m[li].0.data,
            &mut state.v[li].0.data,
            &cfg,
            bias1,
            bias2,
            &format!("layer{li}.weight"),
        )?;
        update_slice(
            &mut layer.bias.data,
            &gb.data,
            &mut state.m[li].1.data,
            &mut state.v[li].1.data,
            &cfg,
            bias1,
            bias2,
            &format!("layer{li}.bias"),
        )?;
    }
    Ok(())
}
