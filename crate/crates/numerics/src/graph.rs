//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape itself is a
//! topological order and the backward pass is a single reverse sweep.

use crate::kernels::{
    gelu, log_sigmoid, log_softmax_in_place, normalise_row, sigmoid, softmax_in_place, GELU_A, GELU_C,
};
use crate::tensor::{matmul_a_bt_into, matmul_at_b_into};
use crate::{NumericsError, Result, Tensor};

/// Value filled into masked (future) attention positions.
pub const MASK_VALUE: f64 = -1e30;


/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CausalMask(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Slice {
        x: Var,
        row0: usize,
        col0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a node, `None` when the node does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, out, op, &[a])
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    /// `a[m,n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let n = x.cols();
        if b.len() != n {
            return Err(mismatch("add_row", x, b));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.map("scale", a, |v| v * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, |v| v + c, Op::AddScalar(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln σ(x)`, evaluated without forming σ(x).
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("log_sigmoid", a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map(
            "gelu",
            a,
            gelu,
            Op::Gelu(a),
        )
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(NumericsError::Invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.map("clamp", a, |v| v.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (_, n) = as_matrix(x);
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("softmax", out, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax, stable for large logits.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (_, n) = as_matrix(x);
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            log_softmax_in_place(row);
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (x, g, b) = (self.value(a), self.value(gain), self.value(bias));
        let (m, n) = as_matrix(x);
        if g.len() != n || b.len() != n {
            return Err(mismatch("layer_norm", x, g));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x.data()[i * n..(i + 1) * n];
            let xh = &mut xhat[i * n..(i + 1) * n];
            rstd[i] = normalise_row(row, xh);
            for j in 0..n {
                out[i * n + j] = xh[j] * g.data()[j] + b.data()[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[a, gain, bias],
        )
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (m, n) = as_matrix(t);
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(NumericsError::Invalid(format!(
                    "gather index {id} out of range for {m} rows"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), n], data)?;
        self.push(
            "gather",
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Replaces entries above the diagonal (column > row) with [`MASK_VALUE`].
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = as_matrix(x);
        let mut data = x.data().to_vec();
        for i in 0..m {
            for j in (i + 1)..n {
                data[i * n + j] = MASK_VALUE;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("causal_mask", out, Op::CausalMask(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(NumericsError::Invalid("mean of empty tensor".into()));
        }
        let out = Tensor::scalar(x.sum() / x.len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Sum over the last dimension: `[m,n] -> [m]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (_, n) = as_matrix(x);
        let data = x.data().chunks(n).map(|r| r.iter().sum()).collect();
        let out = Tensor::vector(data);
        self.push("row_sum", out, Op::RowSum(a), &[a])
    }

    /// Sub-block `[row0..row0+rows, col0..col0+cols]` of a matrix.
    pub fn slice(&mut self, a: Var, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = as_matrix(x);
        if row0 + rows > m || col0 + cols > n {
            return Err(NumericsError::Invalid(format!(
                "slice [{row0}+{rows}, {col0}+{cols}] out of bounds for {m}x{n}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in row0..row0 + rows {
            data.extend_from_slice(&x.data()[i * n + col0..i * n + col0 + cols]);
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push("slice", out, Op::Slice { x: a, row0, col0 }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| NumericsError::Invalid("concat of zero parts".into()))?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| NumericsError::Invalid("concat of zero parts".into()))?;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            m += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![m, n], data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// One element per row: `out[i] = x[i, idx[i]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = as_matrix(x);
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(NumericsError::Invalid(format!(
                "pick needs {m} indices below {n}"
            )));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| x.at(i, j)).collect();
        let out = Tensor::vector(data);
        self.push(
            "pick",
            out,
            Op::Pick {
                x: a,
                idx: idx.to_vec(),
            },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Reverse sweep from a scalar loss. Every node that requires a gradient
    /// gets one (zero when unreachable from the loss).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(NumericsError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backward_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let shape = node.value.shape().to_vec();
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                    Tensor::new(shape, data).expect("gradient matches node shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        // Returns the accumulator for `v`, or None if it needs no gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        let y = &node.value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = as_matrix(ta);
                let n = tb.cols();
                if let Some(ga) = acc!(*a) {
                    matmul_a_bt_into(gy, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = acc!(*b) {
                    matmul_at_b_into(ta.data(), gy, gb, m, k, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = as_matrix(val(*a));
                if let Some(ga) = acc!(*a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += gy[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = acc!(v) {
                        g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = acc!(*a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = acc!(*b) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data().to_vec(), val(*b).data().to_vec());
                if let Some(g) = acc!(*a) {
                    for ((g, d), q) in g.iter_mut().zip(gy).zip(&tb) {
                        *g += d * q;
                    }
                }
                if let Some(g) = acc!(*b) {
                    for ((g, d), p) in g.iter_mut().zip(gy).zip(&ta) {
                        *g += d * p;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (val(*a).data().to_vec(), val(*b).data().to_vec());
                if let Some(g) = acc!(*a) {
                    for i in 0..g.len() {
                        if ta[i] <= tb[i] {
                            g[i] += gy[i];
                        }
                    }
                }
                if let Some(g) = acc!(*b) {
                    for i in 0..g.len() {
                        if tb[i] < ta[i] {
                            g[i] += gy[i];
                        }
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(g) = acc!(*a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                let n = val(*bias).len();
                if let Some(g) = acc!(*bias) {
                    for row in gy.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(g) = acc!(*a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d * f);
                }
            }
            Op::AddScalar(a) => {
                if let Some(g) = acc!(*a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
            }
            Op::Softmax(a) => {
                let n = y.cols();
                if let Some(g) = acc!(*a) {
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.data().chunks(n)).zip(gy.chunks(n)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for j in 0..n {
                            gr[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = y.cols();
                if let Some(g) = acc!(*a) {
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.data().chunks(n)).zip(gy.chunks(n)) {
                        let total: f64 = dr.iter().sum();
                        for j in 0..n {
                            gr[j] += dr[j] - yr[j].exp() * total;
                        }
                    }
                }
            }
            Op::Log(a) => {
                let x = val(*a).data().to_vec();
                if let Some(g) = acc!(*a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] / x[i];
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(g) = acc!(*a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * y.data()[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(g) = acc!(*a) {
                    for i in 0..g.len() {
                        let s = y.data()[i];
                        g[i] += gy[i] * s * (1.0 - s);
                    }
                }
            }
            Op::LogSigmoid(a) => {
                let x = val(*a).data().to_vec();
                if let Some(g) = acc!(*a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * sigmoid(-x[i]);
                    }
                }
            }
            Op::Gelu(a) => {
                let x = val(*a).data().to_vec();
                if let Some(g) = acc!(*a) {
                    for i in 0..g.len() {
                        let v = x[i];
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        g[i] += gy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = val(*gain).len();
                let gv = val(*gain).data().to_vec();
                if let Some(g) = acc!(*x) {
                    for (i, r) in rstd.iter().enumerate() {
                        let dy = &gy[i * n..(i + 1) * n];
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let d = dy[j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            let d = dy[j] * gv[j];
                            g[i * n + j] += r * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                if let Some(g) = acc!(*gain) {
                    for (dy, xh) in gy.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            g[j] += dy[j] * xh[j];
                        }
                    }
                }
                if let Some(g) = acc!(*bias) {
                    for dy in gy.chunks(n) {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let n = val(*table).cols();
                if let Some(g) = acc!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            g[id * n + j] += gy[r * n + j];
                        }
                    }
                }
            }
            Op::CausalMask(a) => {
                let (m, n) = as_matrix(y);
                if let Some(g) = acc!(*a) {
                    for i in 0..m {
                        for j in 0..=i.min(n.saturating_sub(1)) {
                            g[i * n + j] += gy[i * n + j];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = acc!(*a) {
                    g.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Mean(a) => {
                let len = val(*a).len() as f64;
                if let Some(g) = acc!(*a) {
                    g.iter_mut().for_each(|g| *g += gy[0] / len);
                }
            }
            Op::RowSum(a) => {
                let n = val(*a).cols();
                if let Some(g) = acc!(*a) {
                    for (row, d) in g.chunks_mut(n).zip(gy) {
                        row.iter_mut().for_each(|g| *g += d);
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x).data().to_vec();
                if let Some(g) = acc!(*x) {
                    for i in 0..g.len() {
                        if xv[i] > *lo && xv[i] < *hi {
                            g[i] += gy[i];
                        }
                    }
                }
            }
            Op::Slice { x, row0, col0 } => {
                let n = val(*x).cols();
                let (rows, cols) = as_matrix(y);
                if let Some(g) = acc!(*x) {
                    for i in 0..rows {
                        let dst = (row0 + i) * n + col0;
                        for j in 0..cols {
                            g[dst + j] += gy[i * cols + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = as_matrix(y);
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if let Some(g) = acc!(p) {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += gy[i * n + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if let Some(g) = acc!(p) {
                        g.iter_mut()
                            .zip(&gy[offset..offset + len])
                            .for_each(|(g, d)| *g += d);
                    }
                    offset += len;
                }
            }
            Op::Pick { x, idx } => {
                let n = val(*x).cols();
                if let Some(g) = acc!(*x) {
                    for (i, &j) in idx.iter().enumerate() {
                        g[i * n + j] += gy[i];
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(g) = acc!(*a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn disconnected_leaf_gets_exact_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.leaf(Tensor::vector(vec![5.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_have_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.leaf(Tensor::scalar(1.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NumericsError::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_uniform_and_normalised() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let s = g.softmax(z).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = g.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 30.0, 0.5, 0.5, 7.0]).unwrap());
        let s = g.softmax(z).unwrap();
        for row in g.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_stable_for_huge_logits() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![1000.0, 0.0, -1000.0]));
        let ls = g.log_softmax(z).unwrap();
        assert!(g.value(ls).is_finite());
        assert!(g.value(ls).data()[0].abs() < 1e-12);
    }

    #[test]
    fn clamp_value_and_subgradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.2, 0.3, -0.1, 0.6]));
        let c = g.clamp(x, 0.0, 0.6).unwrap();
        assert_eq!(g.value(c).data(), &[0.6, 0.3, 0.0, 0.6]);
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        // Inside the interval 1, outside 0, boundary 0.
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_results_trip_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0]));
        assert!(matches!(g.log(x), Err(NumericsError::NonFinite { op: "log" })));
        let y = g.constant(Tensor::vector(vec![1000.0]));
        assert!(g.exp(y).is_err());
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(NumericsError::ShapeMismatch { .. })));
        assert!(g.matmul(a, b).is_ok());
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn causal_mask_blocks_future() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 3]));
        let m = g.causal_mask(x).unwrap();
        let s = g.softmax(m).unwrap();
        let v = g.value(s);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert!((v.at(2, 2) - 1.0 / 3.0).abs() < 1e-15);
    }
}
