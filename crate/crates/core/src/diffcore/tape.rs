//! Reverse-mode differentiation over dense tensors.
//!
//! Primitives are recorded on a [`Tape`] as they execute. [`Tape::backward`]
//! walks the record once in reverse, propagating vector-Jacobian products,
//! and accumulates the gradients of trainable parameters into a
//! [`ParamStore`]. Nodes that cannot reach a trainable parameter or a
//! differentiable leaf are skipped entirely.

use super::tensor::{matmul_raw, transpose_raw};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms in [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    MeanRows(Var),
    BlockMeanRows(Var, usize),
    ExprTokens(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
        mask: Option<Tensor>,
    },
    Bce {
        prob: Var,
        labels: Tensor,
    },
    BceLogits {
        logits: Var,
        labels: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::raw(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input that is not a parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter. Frozen parameters enter the
    /// tape as constants for gradient purposes.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.tensor.clone(),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = check_matrix("matmul", ta)?;
        let (k2, n) = check_matrix("matmul", tb)?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let out = Tensor::raw(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n));
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// Adds a bias vector of length `n` to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = check_matrix("add_bias", tx)?;
        if tb.len() != n || tb.rows() != 1 {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, b) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push("add_bias", Tensor::raw(vec![m, n], data), Op::AddBias(x, bias), rg)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        Ok(Tensor::raw(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v * factor);
        let rg = self.rg(&[x]);
        self.push("scale", out, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push("relu", out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), sigmoid);
        let rg = self.rg(&[x]);
        self.push("sigmoid", out, Op::Sigmoid(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), softplus);
        let rg = self.rg(&[x]);
        self.push("softplus", out, Op::Softplus(x), rg)
    }

    /// Arithmetic mean over the first axis: `[L×d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (l, d) = check_matrix("mean_rows", t)?;
        let mut out = vec![0.0; d];
        for i in 0..l {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= l as f64);
        let rg = self.rg(&[x]);
        self.push("mean_rows", Tensor::raw(vec![d], out), Op::MeanRows(x), rg)
    }

    /// Row means of `blocks` stacked `[L×d]` blocks: `[(B·L)×d] -> [B×d]`.
    pub fn block_mean_rows(&mut self, x: Var, blocks: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, d) = check_matrix("block_mean_rows", t)?;
        if blocks == 0 || rows % blocks != 0 {
            return Err(Error::shape("block_mean_rows", t.shape(), &[blocks]));
        }
        let l = rows / blocks;
        let mut out = vec![0.0; blocks * d];
        for b in 0..blocks {
            let acc = &mut out[b * d..(b + 1) * d];
            for i in 0..l {
                for (o, v) in acc.iter_mut().zip(t.row(b * l + i)) {
                    *o += v;
                }
            }
            acc.iter_mut().for_each(|o| *o /= l as f64);
        }
        let rg = self.rg(&[x]);
        self.push(
            "block_mean_rows",
            Tensor::raw(vec![blocks, d], out),
            Op::BlockMeanRows(x, blocks),
            rg,
        )
    }

    /// Gene tokens: row `b·G + g` of the output is `expr[b, g] · emb[g, :]`.
    pub fn expr_tokens(&mut self, expr: Var, emb: Var) -> Result<Var> {
        let (te, tm) = (self.value(expr), self.value(emb));
        let (b, g) = check_matrix("expr_tokens", te)?;
        let (g2, d) = check_matrix("expr_tokens", tm)?;
        if g != g2 {
            return Err(Error::shape("expr_tokens", te.shape(), tm.shape()));
        }
        let mut out = vec![0.0; b * g * d];
        for s in 0..b {
            for gi in 0..g {
                let x = te.data()[s * g + gi];
                if x == 0.0 {
                    continue;
                }
                let dst = &mut out[(s * g + gi) * d..(s * g + gi + 1) * d];
                for (o, e) in dst.iter_mut().zip(tm.row(gi)) {
                    *o = x * e;
                }
            }
        }
        let rg = self.rg(&[expr, emb]);
        self.push(
            "expr_tokens",
            Tensor::raw(vec![b * g, d], out),
            Op::ExprTokens(expr, emb),
            rg,
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = check_matrix("transpose", t)?;
        let out = Tensor::raw(vec![c, r], transpose_raw(t.data(), r, c));
        let rg = self.rg(&[x]);
        self.push("transpose", out, Op::Transpose(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = check_matrix("softmax_rows", t)?;
        let mut out = t.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(&[x]);
        self.push("softmax_rows", Tensor::raw(vec![r, c], out), Op::SoftmaxRows(x), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = check_matrix("slice_rows", t)?;
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", t.shape(), &[start, len]));
        }
        let out = Tensor::raw(vec![len, c], t.data()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(&[x]);
        self.push("slice_rows", out, Op::SliceRows(x, start), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows needs at least one input".into()))?;
        let c = check_matrix("concat_rows", self.value(*first))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            let (r, c2) = check_matrix("concat_rows", t)?;
            if c2 != c {
                return Err(Error::shape("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        self.push(
            "concat_rows",
            Tensor::raw(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push("reshape", out, Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push("sum", Tensor::raw(vec![1], vec![s]), Op::Sum(x), rg)
    }

    /// `(1/B) Σ_i Σ_j mask_ij (pred_ij - target_ij)^2`, where `B` is the
    /// number of rows of `pred`. A fully zero mask yields 0 with zero
    /// gradient.
    pub fn mse(&mut self, pred: Var, target: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::shape("mse", tp.shape(), tt.shape()));
        }
        if let Some(m) = mask {
            if m.shape() != tp.shape() {
                return Err(Error::shape("mse", tp.shape(), m.shape()));
            }
        }
        let batch = tp.rows() as f64;
        let mut total = 0.0;
        for (i, (p, t)) in tp.data().iter().zip(tt.data()).enumerate() {
            let w = mask.map_or(1.0, |m| m.data()[i]);
            if w != 0.0 {
                total += w * (p - t) * (p - t);
            }
        }
        let rg = self.rg(&[pred, target]);
        self.push(
            "mse",
            Tensor::raw(vec![1], vec![total / batch]),
            Op::Mse {
                pred,
                target,
                mask: mask.cloned(),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy on probabilities clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, prob: Var, labels: &Tensor) -> Result<Var> {
        let tp = self.value(prob);
        check_labels(tp, labels, "bce")?;
        let n = tp.len() as f64;
        let mut total = 0.0;
        for (&p, &y) in tp.data().iter().zip(labels.data()) {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let rg = self.rg(&[prob]);
        self.push(
            "bce",
            Tensor::raw(vec![1], vec![total / n]),
            Op::Bce {
                prob,
                labels: labels.clone(),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy computed from logits, stable for large
    /// magnitudes.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Tensor) -> Result<Var> {
        let tz = self.value(logits);
        check_labels(tz, labels, "bce_with_logits")?;
        let n = tz.len() as f64;
        let total: f64 = tz
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        let rg = self.rg(&[logits]);
        self.push(
            "bce_with_logits",
            Tensor::raw(vec![1], vec![total / n]),
            Op::BceLogits {
                logits,
                labels: labels.clone(),
            },
            rg,
        )
    }

    /// Propagates gradients from the scalar `loss` and accumulates them into
    /// the trainable parameters of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for node_grad in grads.grads.iter().zip(&self.nodes) {
            if let (Some(g), Node { op: Op::Param(id), .. }) = node_grad {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::raw(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let send = |grads: &mut [Option<Tensor>], v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if needs(*a) {
                    let bt = transpose_raw(tb.data(), k, n);
                    send(grads, *a, Tensor::raw(vec![m, k], matmul_raw(g.data(), &bt, m, n, k)));
                }
                if needs(*b) {
                    let at = transpose_raw(ta.data(), m, k);
                    send(grads, *b, Tensor::raw(vec![k, n], matmul_raw(&at, g.data(), k, m, n)));
                }
            }
            Op::AddBias(x, b) => {
                send(grads, *x, g.clone());
                if needs(*b) {
                    let (m, n) = (g.shape()[0], g.shape()[1]);
                    let mut col = vec![0.0; n];
                    for i in 0..m {
                        for (c, v) in col.iter_mut().zip(g.row(i)) {
                            *c += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    send(grads, *b, Tensor::raw(shape, col));
                }
            }
            Op::Add(a, b) => {
                send(grads, *a, g.clone());
                send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                send(grads, *a, g.clone());
                if needs(*b) {
                    send(grads, *b, map(g, |v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    send(grads, *a, hadamard(g, tb));
                }
                if needs(*b) {
                    send(grads, *b, hadamard(g, ta));
                }
            }
            Op::Scale(x, f) => send(grads, *x, map(g, |v| v * f)),
            Op::Relu(x) => {
                let tx = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                send(grads, *x, Tensor::raw(g.shape().to_vec(), data));
            }
            Op::Sigmoid(x) => {
                let s = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(s.data())
                    .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                    .collect();
                send(grads, *x, Tensor::raw(g.shape().to_vec(), data));
            }
            Op::Softplus(x) => {
                let tx = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&gv, &xv)| gv * sigmoid(xv))
                    .collect();
                send(grads, *x, Tensor::raw(g.shape().to_vec(), data));
            }
            Op::MeanRows(x) => {
                let shape = self.value(*x).shape().to_vec();
                let l = shape[0];
                let row: Vec<f64> = g.data().iter().map(|v| v / l as f64).collect();
                send(grads, *x, Tensor::raw(shape, row.repeat(l)));
            }
            Op::BlockMeanRows(x, blocks) => {
                let shape = self.value(*x).shape().to_vec();
                let (rows, d) = (shape[0], shape[1]);
                let l = rows / blocks;
                let mut data = Vec::with_capacity(rows * d);
                for b in 0..*blocks {
                    let scaled: Vec<f64> = g.row(b).iter().map(|v| v / l as f64).collect();
                    for _ in 0..l {
                        data.extend_from_slice(&scaled);
                    }
                }
                send(grads, *x, Tensor::raw(shape, data));
            }
            Op::ExprTokens(expr, emb) => {
                let (te, tm) = (self.value(*expr), self.value(*emb));
                let (b, gn) = (te.shape()[0], te.shape()[1]);
                let d = tm.shape()[1];
                if needs(*expr) {
                    let mut de = vec![0.0; b * gn];
                    for s in 0..b {
                        for gi in 0..gn {
                            let row = g.row(s * gn + gi);
                            de[s * gn + gi] = row.iter().zip(tm.row(gi)).map(|(a, c)| a * c).sum();
                        }
                    }
                    send(grads, *expr, Tensor::raw(vec![b, gn], de));
                }
                if needs(*emb) {
                    let mut dm = vec![0.0; gn * d];
                    for s in 0..b {
                        for gi in 0..gn {
                            let x = te.data()[s * gn + gi];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, v) in dm[gi * d..(gi + 1) * d].iter_mut().zip(g.row(s * gn + gi)) {
                                *o += x * v;
                            }
                        }
                    }
                    send(grads, *emb, Tensor::raw(vec![gn, d], dm));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                send(grads, *x, Tensor::raw(vec![c, r], transpose_raw(g.data(), r, c)));
            }
            Op::SoftmaxRows(x) => {
                let s = &node.value;
                let (r, c) = (s.shape()[0], s.shape()[1]);
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let (srow, grow) = (s.row(i), g.row(i));
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        data[i * c + j] = srow[j] * (grow[j] - dot);
                    }
                }
                send(grads, *x, Tensor::raw(vec![r, c], data));
            }
            Op::SliceRows(x, start) => {
                let shape = self.value(*x).shape().to_vec();
                let c = shape[1];
                let mut data = vec![0.0; shape[0] * c];
                data[start * c..start * c + g.len()].copy_from_slice(g.data());
                send(grads, *x, Tensor::raw(shape, data));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape().to_vec();
                    let n = shape[0] * shape[1];
                    if needs(*p) {
                        send(grads, *p, Tensor::raw(shape, g.data()[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                send(grads, *x, Tensor::raw(shape, g.data().to_vec()));
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                let n = shape.iter().product();
                send(grads, *x, Tensor::raw(shape, vec![g.item(); n]));
            }
            Op::Mse { pred, target, mask } => {
                let (tp, tt) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * g.item() / tp.rows() as f64;
                let data: Vec<f64> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .enumerate()
                    .map(|(i, (p, t))| {
                        let w = mask.as_ref().map_or(1.0, |m| m.data()[i]);
                        scale * w * (p - t)
                    })
                    .collect();
                if needs(*target) {
                    send(grads, *target, Tensor::raw(tp.shape().to_vec(), data.iter().map(|v| -v).collect()));
                }
                send(grads, *pred, Tensor::raw(tp.shape().to_vec(), data));
            }
            Op::Bce { prob, labels } => {
                let tp = self.value(*prob);
                let scale = g.item() / tp.len() as f64;
                let data = tp
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&p, &y)| {
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            -scale * (y / p - (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                send(grads, *prob, Tensor::raw(tp.shape().to_vec(), data));
            }
            Op::BceLogits { logits, labels } => {
                let tz = self.value(*logits);
                let scale = g.item() / tz.len() as f64;
                let data = tz
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&z, &y)| scale * (sigmoid(z) - y))
                    .collect();
                send(grads, *logits, Tensor::raw(tz.shape().to_vec(), data));
            }
        }
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}

fn check_labels(pred: &Tensor, labels: &Tensor, op: &'static str) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(Error::shape(op, pred.shape(), labels.shape()));
    }
    if let Some(y) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation(format!("{op}: label {y} is not in {{0, 1}}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projection() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let a = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = tape.constant(m(&[vec![1.0, 0.0], vec![0.0, 0.0]]));
        let b = tape.constant(m(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
        let out = tape.matmul(p, b).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(&[vec![1.0, 2.0]]));
        let b = tape.constant(m(&[vec![3.0], vec![4.0]]));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        let grads = tape.gradients(s).unwrap();
        let g = grads.get(a).unwrap();
        // Frozen from central differences: ((1+h)*3+2*4 - (1-h)*3-2*4)/2h = 3, likewise 4.
        assert!((g.data()[0] - 3.0).abs() < 1e-12);
        assert!((g.data()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(v(&[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = tape.leaf(v(&[0.0]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        let total = tape.sum(s).unwrap();
        let grads = tape.gradients(total).unwrap();
        assert_eq!(grads.get(z).unwrap().item(), 0.25);

        let e = tape.constant(m(&[vec![1.0, 3.0], vec![3.0, 5.0]]));
        let mr = tape.mean_rows(e).unwrap();
        assert_eq!(tape.value(mr).data(), &[2.0, 4.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[0.0, 1.0]));
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.gradients(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(m(&[vec![1.0, 2.0]]));
        let l = tape.mse(p, p, None).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let p = tape.constant(m(&[vec![0.0, 0.0]]));
        let t = tape.constant(m(&[vec![1.0, 2.0]]));
        let l = tape.mse(p, t, None).unwrap();
        assert_eq!(tape.value(l).item(), 5.0);

        let p = tape.constant(m(&[vec![0.0], vec![0.0]]));
        let t = tape.constant(m(&[vec![2.0], vec![0.0]]));
        let l = tape.mse(p, t, None).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
    }

    #[test]
    fn mse_all_zero_mask_is_zero_with_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(m(&[vec![0.0, 3.0]]));
        let t = tape.constant(m(&[vec![1.0, 2.0]]));
        let mask = Tensor::zeros(&[1, 2]);
        let l = tape.mse(p, t, Some(&mask)).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let g = tape.gradients(l).unwrap();
        assert!(g.get(p).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bce_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(v(&[0.5]));
        let l = tape.bce(p, &v(&[1.0])).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let p = tape.constant(v(&[1.0 - BCE_EPS]));
        let l = tape.bce(p, &v(&[1.0])).unwrap();
        assert!((tape.value(l).item() - BCE_EPS).abs() < 1e-12);

        let p = tape.constant(v(&[0.8, 0.2]));
        let l = tape.bce(p, &v(&[1.0, 0.0])).unwrap();
        assert!((tape.value(l).item() - 0.223_143_551_314_209_7).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_non_binary_labels() {
        let mut tape = Tape::new();
        let p = tape.constant(v(&[0.5]));
        assert!(matches!(tape.bce(p, &v(&[2.0])), Err(Error::Validation(_))));
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[1.0, 2.0]));
        let mut store = ParamStore::new();
        assert!(matches!(tape.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", v(&[1.0, 2.0]));
        let mut tape = Tape::new();
        let _wv = tape.param(&store, w);
        let c = tape.constant(v(&[3.0]));
        let loss = tape.sum(c).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(w).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_parameter_receives_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", v(&[1.0, 2.0]));
        store.set_trainable(w, false);
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let loss = tape.sum(wv).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(w).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(v(&[1e308]));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }
}
