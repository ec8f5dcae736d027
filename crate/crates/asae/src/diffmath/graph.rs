//! Tape-based reverse-mode automatic differentiation.
//!
//! A `ComputationGraph` records tensor operations in creation order; parents
//! always precede children, so the node list is already topologically sorted
//! and `backward` is a single reverse sweep. Graphs are rebuilt per forward
//! pass and are cheap at the sizes used here.
//!
//! Shape mismatches between op inputs are programmer error and panic via
//! `assert!`; the public module surface validates dimensions before building
//! a graph.

use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    /// input [r,k] x weight [o,k] -> [r,o]; weight stored row-major by output.
    MatMulT(NodeId, NodeId),
    /// mat [r,c] + bias [c] broadcast over rows.
    AddRow(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// Row-wise log-softmax of a [r,c] matrix.
    LogSoftmaxRows(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulScalar(NodeId, f64),
    Clamp(NodeId, f64, f64),
    /// Elementwise minimum; ties route the gradient to the first input.
    MinElem(NodeId, NodeId),
    /// out[r] = mat[r][idx[r]]
    GatherRows(NodeId, Vec<usize>),
    /// Row sums of a [r,c] matrix -> [r].
    RowSum(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Neg(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients aligned with graph node ids, produced by `backward`.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }
}

#[derive(Default)]
pub struct ComputationGraph {
    nodes: Vec<Node>,
}

impl ComputationGraph {
    pub fn new() -> Self {
        ComputationGraph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// A differentiable leaf (parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: true }, value)
    }

    /// A non-differentiable leaf (input data, frozen quantity).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: false }, value)
    }

    /// input [r,k] x weight [o,k] -> [r,o]
    pub fn matmul_t(&mut self, input: NodeId, weight: NodeId) -> NodeId {
        let a = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        assert_eq!(a.cols(), w.cols(), "matmul_t inner dimensions must match");
        let (r, k, o) = (a.rows(), a.cols(), w.rows());
        let mut out = vec![0.0; r * o];
        for i in 0..r {
            let row = a.row(i);
            for j in 0..o {
                let wrow = w.row(j);
                let mut acc = 0.0;
                for p in 0..k {
                    acc += row[p] * wrow[p];
                }
                out[i * o + j] = acc;
            }
        }
        self.push(Op::MatMulT(input, weight), Tensor::matrix(r, o, out))
    }

    pub fn add_row(&mut self, mat: NodeId, bias: NodeId) -> NodeId {
        let m = &self.nodes[mat.0].value;
        let b = &self.nodes[bias.0].value;
        assert_eq!(m.cols(), b.len(), "add_row bias length must match columns");
        let (r, c) = (m.rows(), m.cols());
        let mut out = m.data.clone();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += b.data[j];
            }
        }
        self.push(Op::AddRow(mat, bias), Tensor::matrix(r, c, out))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a.tanh()).collect());
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a.max(0.0)).collect());
        self.push(Op::Relu(x), out)
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = v.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        self.push(Op::LogSoftmaxRows(x), Tensor::matrix(r, c, out))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a.exp()).collect());
        self.push(Op::Exp(x), out)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a.ln()).collect());
        self.push(Op::Ln(x), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, "add", |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, "sub", |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, "mul", |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a * c).collect());
        self.push(Op::MulScalar(x, c), out)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(
            v.shape.clone(),
            v.data.iter().map(|a| a.clamp(lo, hi)).collect(),
        );
        self.push(Op::Clamp(x, lo, hi), out)
    }

    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, "min_elem", f64::min);
        self.push(Op::MinElem(a, b), out)
    }

    pub fn gather_rows(&mut self, mat: NodeId, indices: Vec<usize>) -> NodeId {
        let m = &self.nodes[mat.0].value;
        let (r, c) = (m.rows(), m.cols());
        assert_eq!(indices.len(), r, "gather_rows needs one index per row");
        let out: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < c, "gather_rows index out of range");
                m.data[i * c + j]
            })
            .collect();
        self.push(Op::GatherRows(mat, indices), Tensor::vector(out))
    }

    pub fn row_sum(&mut self, mat: NodeId) -> NodeId {
        let m = &self.nodes[mat.0].value;
        let (r, c) = (m.rows(), m.cols());
        let out: Vec<f64> = (0..r).map(|i| m.data[i * c..(i + 1) * c].iter().sum()).collect();
        self.push(Op::RowSum(mat), Tensor::vector(out))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| -a).collect());
        self.push(Op::Neg(x), out)
    }

    /// Whether gradient should be accumulated into a node; false only for
    /// constant leaves, whose gradients nobody reads.
    fn wants_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Leaf { requires_grad: false })
    }

    fn zip(&self, a: NodeId, b: NodeId, op: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let x = &self.nodes[a.0].value;
        let y = &self.nodes[b.0].value;
        assert_eq!(x.len(), y.len(), "{op} operands must have equal length");
        Tensor::new(
            x.shape.clone(),
            x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect(),
        )
    }

    /// Reverse sweep from a scalar loss node. Returns gradients for every
    /// node; nodes with no path to the loss have exactly-zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_val = &self.nodes[loss.0].value;
        if !loss_val.is_scalar() {
            return Err(Error::Argument(format!(
                "backward requires a scalar loss node, got shape {:?}",
                loss_val.shape
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape.clone()))
            .collect();
        grads[loss.0].data[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if grads[i].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[i].clone();
            match &self.nodes[i].op {
                Op::Leaf { .. } => {}
                Op::MatMulT(a, w) => {
                    let av = &self.nodes[a.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (r, k, o) = (av.rows(), av.cols(), wv.rows());
                    if self.wants_grad(*a) {
                        let da = &mut grads[a.0];
                        for ri in 0..r {
                            for oi in 0..o {
                                let go = g.data[ri * o + oi];
                                if go == 0.0 {
                                    continue;
                                }
                                let wrow = wv.row(oi);
                                let drow = &mut da.data[ri * k..(ri + 1) * k];
                                for p in 0..k {
                                    drow[p] += go * wrow[p];
                                }
                            }
                        }
                    }
                    if self.wants_grad(*w) {
                        let dw = &mut grads[w.0];
                        for ri in 0..r {
                            let arow = av.row(ri);
                            for oi in 0..o {
                                let go = g.data[ri * o + oi];
                                if go == 0.0 {
                                    continue;
                                }
                                let wrow = &mut dw.data[oi * k..(oi + 1) * k];
                                for p in 0..k {
                                    wrow[p] += go * arow[p];
                                }
                            }
                        }
                    }
                }
                Op::AddRow(m, b) => {
                    let (r, c) = (self.nodes[m.0].value.rows(), self.nodes[m.0].value.cols());
                    for (dst, src) in grads[m.0].data.iter_mut().zip(&g.data) {
                        *dst += *src;
                    }
                    let db = &mut grads[b.0];
                    for ri in 0..r {
                        for ci in 0..c {
                            db.data[ci] += g.data[ri * c + ci];
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    let dx = &mut grads[x.0];
                    for j in 0..y.len() {
                        dx.data[j] += g.data[j] * (1.0 - y.data[j] * y.data[j]);
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = &mut grads[x.0];
                    for j in 0..xv.len() {
                        if xv.data[j] > 0.0 {
                            dx.data[j] += g.data[j];
                        }
                    }
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &self.nodes[i].value;
                    let (r, c) = (y.rows(), y.cols());
                    let dx = &mut grads[x.0];
                    for ri in 0..r {
                        let gsum: f64 = g.data[ri * c..(ri + 1) * c].iter().sum();
                        for ci in 0..c {
                            let p = y.data[ri * c + ci].exp();
                            dx.data[ri * c + ci] += g.data[ri * c + ci] - p * gsum;
                        }
                    }
                }
                Op::Exp(x) => {
                    let y = &self.nodes[i].value;
                    let dx = &mut grads[x.0];
                    for j in 0..y.len() {
                        dx.data[j] += g.data[j] * y.data[j];
                    }
                }
                Op::Ln(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = &mut grads[x.0];
                    for j in 0..xv.len() {
                        dx.data[j] += g.data[j] / xv.data[j];
                    }
                }
                Op::Add(a, b) => {
                    for (dst, src) in grads[a.0].data.iter_mut().zip(&g.data) {
                        *dst += *src;
                    }
                    for (dst, src) in grads[b.0].data.iter_mut().zip(&g.data) {
                        *dst += *src;
                    }
                }
                Op::Sub(a, b) => {
                    for (dst, src) in grads[a.0].data.iter_mut().zip(&g.data) {
                        *dst += *src;
                    }
                    for (dst, src) in grads[b.0].data.iter_mut().zip(&g.data) {
                        *dst -= *src;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.clone(), self.nodes[b.0].value.clone());
                    for j in 0..g.len() {
                        grads[a.0].data[j] += g.data[j] * bv.data[j];
                    }
                    for j in 0..g.len() {
                        grads[b.0].data[j] += g.data[j] * av.data[j];
                    }
                }
                Op::MulScalar(x, c) => {
                    for (dst, src) in grads[x.0].data.iter_mut().zip(&g.data) {
                        *dst += *src * c;
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = &mut grads[x.0];
                    for j in 0..xv.len() {
                        if xv.data[j] >= *lo && xv.data[j] <= *hi {
                            dx.data[j] += g.data[j];
                        }
                    }
                }
                Op::MinElem(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.clone(), self.nodes[b.0].value.clone());
                    for j in 0..g.len() {
                        if av.data[j] <= bv.data[j] {
                            grads[a.0].data[j] += g.data[j];
                        } else {
                            grads[b.0].data[j] += g.data[j];
                        }
                    }
                }
                Op::GatherRows(m, indices) => {
                    let c = self.nodes[m.0].value.cols();
                    let dm = &mut grads[m.0];
                    for (ri, &ci) in indices.iter().enumerate() {
                        dm.data[ri * c + ci] += g.data[ri];
                    }
                }
                Op::RowSum(m) => {
                    let c = self.nodes[m.0].value.cols();
                    let dm = &mut grads[m.0];
                    for (ri, &gr) in g.data.iter().enumerate() {
                        for ci in 0..c {
                            dm.data[ri * c + ci] += gr;
                        }
                    }
                }
                Op::Sum(x) => {
                    for dst in grads[x.0].data.iter_mut() {
                        *dst += g.data[0];
                    }
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len() as f64;
                    for dst in grads[x.0].data.iter_mut() {
                        *dst += g.data[0] / n;
                    }
                }
                Op::Neg(x) => {
                    for (dst, src) in grads[x.0].data.iter_mut().zip(&g.data) {
                        *dst -= *src;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
