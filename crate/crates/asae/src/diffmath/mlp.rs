//! Dense feed-forward networks over the tape.

use rand::Rng;

use crate::diffmath::graph::{ComputationGraph, Gradients, NodeId};
use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Row-major [out, in].
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of a feed-forward MLP with a fixed hidden activation and a
/// linear output layer.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl MlpParams {
    /// Scaled uniform init: weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)],
    /// biases zero.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(DenseLayer {
                weight: Tensor::matrix(fan_out, fan_in, weight),
                bias: Tensor::vector(vec![0.0; fan_out]),
            });
        }
        MlpParams { layers, activation }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weight: Tensor::zeros(vec![w[1], w[0]]),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        MlpParams { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("mlp has layers").in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("mlp has layers").out_dim()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.in_dim()];
        sizes.extend(self.layers.iter().map(|l| l.out_dim()));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    /// Flat view of every parameter, weights before bias per layer.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight.data);
            out.extend_from_slice(&l.bias.data);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        for l in &mut self.layers {
            let wl = l.weight.len();
            l.weight.data.copy_from_slice(&flat[pos..pos + wl]);
            pos += wl;
            let bl = l.bias.len();
            l.bias.data.copy_from_slice(&flat[pos..pos + bl]);
            pos += bl;
        }
    }
}

fn apply_activation(act: Activation, v: &mut [f64]) {
    match act {
        Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
    }
}

fn check_input(params: &MlpParams, input: &Tensor) -> Result<()> {
    if input.cols() != params.in_dim() {
        return Err(Error::Dimension(format!(
            "mlp layer 0 expects input width {}, got {}",
            params.in_dim(),
            input.cols()
        )));
    }
    Ok(())
}

/// Inference-only forward pass (no tape). Input is a vector or a [rows, in]
/// matrix; the output matches with the last layer's width.
pub fn forward_mlp(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    check_input(params, input)?;
    let rows = input.rows();
    let mut cur = input.data.clone();
    let mut cur_cols = input.cols();
    let n_layers = params.layers.len();
    for (li, layer) in params.layers.iter().enumerate() {
        if cur_cols != layer.in_dim() {
            return Err(Error::Dimension(format!(
                "mlp layer {li} expects input width {}, got {cur_cols}",
                layer.in_dim()
            )));
        }
        let out_dim = layer.out_dim();
        let mut next = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let row = &cur[r * cur_cols..(r + 1) * cur_cols];
            for o in 0..out_dim {
                let wrow = layer.weight.row(o);
                let mut acc = layer.bias.data[o];
                for p in 0..cur_cols {
                    acc += row[p] * wrow[p];
                }
                next[r * out_dim + o] = acc;
            }
        }
        if li + 1 < n_layers {
            apply_activation(params.activation, &mut next);
        }
        cur = next;
        cur_cols = out_dim;
    }
    let out = if input.shape.len() == 2 {
        Tensor::matrix(rows, cur_cols, cur)
    } else {
        Tensor::vector(cur)
    };
    Ok(out)
}

/// Tape handles for one MLP's parameters, aligned with `MlpParams::layers`.
pub struct MlpTapeParams {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl MlpTapeParams {
    /// Load parameters onto the tape as differentiable leaves.
    pub fn load(graph: &mut ComputationGraph, params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| (graph.leaf(l.weight.clone()), graph.leaf(l.bias.clone())))
            .collect();
        MlpTapeParams { layers }
    }

    /// Extract per-layer gradients aligned with `MlpParams::layers`.
    pub fn gradients(&self, grads: &Gradients) -> Vec<(Tensor, Tensor)> {
        self.layers
            .iter()
            .map(|(w, b)| (grads.grad(*w).clone(), grads.grad(*b).clone()))
            .collect()
    }
}

/// Differentiable forward pass on the tape: returns the logits node.
pub fn forward_on_tape(
    graph: &mut ComputationGraph,
    params: &MlpParams,
    tape_params: &MlpTapeParams,
    input: NodeId,
) -> Result<NodeId> {
    check_input(params, graph.value(input))?;
    let mut cur = input;
    let n_layers = tape_params.layers.len();
    for (li, (w, b)) in tape_params.layers.iter().enumerate() {
        let lin = graph.matmul_t(cur, *w);
        cur = graph.add_row(lin, *b);
        if li + 1 < n_layers {
            cur = match params.activation {
                Activation::Tanh => graph.tanh(cur),
                Activation::Relu => graph.relu(cur),
            };
        }
    }
    Ok(cur)
}

/// Probability vector via the exp-normalize trick. Shift-invariant; output is
/// nonnegative and sums to 1 within 1e-12.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Argument("log_softmax of an empty vector".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|x| x - lse).collect())
}

/// Entropy of a categorical distribution in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
