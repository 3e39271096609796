//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the handles of
//! its inputs. Nodes are only ever appended, so the tape order is a topological
//! order and `backward` is a single reverse sweep.

use super::tensor::{matmul_a_bt_into, matmul_at_b_into, softmax_in_place, Tensor};
use crate::error::{HgnError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    Unary(Unary, Var),
    Maximum(Var, Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    RowSums(Var),
    SumAll(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Var, Vec<bool>),
    Nll {
        probs: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single forward computation and its gradient tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any was propagated.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, op, rg)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(HgnError::shape(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.derived(value, Op::Transpose(a), &[a]))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = match kind {
            Binary::Add => va.zip_map(vb, "add", |x, y| x + y)?,
            Binary::Sub => va.zip_map(vb, "sub", |x, y| x - y)?,
            Binary::Mul => va.zip_map(vb, "mul", |x, y| x * y)?,
        };
        Ok(self.derived(value, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Sum of several same-shaped nodes, folded left to right.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| HgnError::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.derived(value, Op::Scale(a, s), &[a])
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
        };
        let value = self.value(a).map(f);
        self.derived(value, Op::Unary(kind, a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), "maximum", |x, y| if y > x { y } else { x })?;
        Ok(self.derived(value, Op::Maximum(a, b), &[a, b]))
    }

    /// `x[m×n] + bias[n]` with the bias repeated on every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims(x, "add_bias")?;
        let b = self.value(bias);
        if b.len() != n {
            return Err(HgnError::shape("add_bias", self.shape(x), b.shape()));
        }
        let mut value = self.value(x).clone();
        let bd = self.value(bias).data().to_vec();
        for row in value.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bd) {
                *v += b;
            }
        }
        Ok(self.derived(value, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x[m×n]` with row `i` multiplied by `w[i, 0]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "scale_rows")?;
        if self.shape(w) != [m, 1] {
            return Err(HgnError::shape("scale_rows", self.shape(x), self.shape(w)));
        }
        let wd = self.value(w).data().to_vec();
        let mut value = self.value(x).clone();
        for (row, s) in value.data_mut().chunks_mut(n).zip(wd) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.derived(value, Op::ScaleRows(x, w), &[x, w]))
    }

    /// `[m×n] -> [m×1]`.
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "row_sums")?;
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .map(|r| r.iter().sum())
            .collect();
        let value = Tensor::new(vec![m, 1], data)?;
        Ok(self.derived(value, Op::RowSums(x), &[x]))
    }

    /// Row-wise dot products of two `m×n` matrices, giving `m×1`.
    pub fn row_dots(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.row_sums(p)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.derived(value, Op::SumAll(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).softmax_rows()?;
        Ok(self.derived(value, Op::Softmax(x), &[x]))
    }

    /// Row softmax where columns with `keep[j] == false` get weight exactly 0.
    pub fn masked_softmax_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (_, n) = self.matrix_dims(x, "masked_softmax_rows")?;
        if keep.len() != n {
            return Err(HgnError::shape("masked_softmax_rows", self.shape(x), &[keep.len()]));
        }
        if !keep.iter().any(|&k| k) {
            return Err(HgnError::InvalidArgument(
                "masked softmax with every column masked".into(),
            ));
        }
        let src = self.value(x);
        src.ensure_finite("softmax input")?;
        let kept: Vec<usize> = (0..n).filter(|&j| keep[j]).collect();
        let mut value = Tensor::zeros(src.shape());
        let mut buf = vec![0.0; kept.len()];
        for (i, out) in value.data_mut().chunks_mut(n).enumerate() {
            let row = src.row(i);
            for (b, &j) in buf.iter_mut().zip(&kept) {
                *b = row[j];
            }
            softmax_in_place(&mut buf);
            for (&b, &j) in buf.iter().zip(&kept) {
                out[j] = b;
            }
        }
        Ok(self.derived(value, Op::Softmax(x), &[x]))
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "layer_norm_rows")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(HgnError::shape("layer_norm_rows", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Tensor::zeros(&[m, n]);
        let mut out = Tensor::zeros(&[m, n]);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(i);
            for j in 0..n {
                xr[j] = (row[j] - mean) * is;
            }
            let or = out.row_mut(i);
            for j in 0..n {
                or[j] = g[j] * xr[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.derived(out, op, &[x, gain, bias]))
    }

    /// Rows of `x` in the order given by `rows` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "gather_rows")?;
        if rows.is_empty() {
            return Err(HgnError::InvalidArgument("gather of zero rows".into()));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(HgnError::OutOfRange {
                    what: "row",
                    index: r,
                    limit: m,
                });
            }
            data.extend_from_slice(src.row(r));
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        Ok(self.derived(value, Op::GatherRows(x, rows.to_vec()), &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice_rows")?;
        if len == 0 || start + len > m {
            return Err(HgnError::OutOfRange {
                what: "row slice end",
                index: start + len,
                limit: m,
            });
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let value = Tensor::new(vec![len, n], data)?;
        Ok(self.derived(value, Op::SliceRows(x, start), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(HgnError::OutOfRange {
                what: "column slice end",
                index: start + len,
                limit: n,
            });
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let value = Tensor::new(vec![m, len], data)?;
        Ok(self.derived(value, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| HgnError::InvalidArgument("concat of nothing".into()))?;
        let (m, _) = self.matrix_dims(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_cols")?;
            if pm != m {
                return Err(HgnError::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.derived(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| HgnError::InvalidArgument("concat of nothing".into()))?;
        let (_, n) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_rows")?;
            if pn != n {
                return Err(HgnError::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.derived(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row `i` is copied from `new` where `take[i]`, else from `old`.
    pub fn select_rows(&mut self, new: Var, old: Var, take: &[bool]) -> Result<Var> {
        let (m, n) = self.matrix_dims(new, "select_rows")?;
        if self.shape(new) != self.shape(old) || take.len() != m {
            return Err(HgnError::shape("select_rows", self.shape(new), self.shape(old)));
        }
        let mut value = self.value(old).clone();
        let src = self.value(new);
        for (i, &t) in take.iter().enumerate() {
            if t {
                value.data_mut()[i * n..(i + 1) * n].copy_from_slice(src.row(i));
            }
        }
        Ok(self.derived(value, Op::SelectRows(new, old, take.to_vec()), &[new, old]))
    }

    /// Mean of `-ln p[target]` over rows with `mask[i] == true`.
    pub fn nll_loss(&mut self, probs: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (m, c) = self.matrix_dims(probs, "nll_loss")?;
        if targets.len() != m || mask.len() != m {
            return Err(HgnError::shape("nll_loss", self.shape(probs), &[targets.len()]));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..m {
            if !mask[i] {
                continue;
            }
            if targets[i] >= c {
                return Err(HgnError::OutOfRange {
                    what: "target class",
                    index: targets[i],
                    limit: c,
                });
            }
            let row = p.row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(HgnError::InvalidArgument(format!(
                    "nll_loss row {i} sums to {s}, expected a distribution"
                )));
            }
            total -= row[targets[i]].ln();
            count += 1;
        }
        if count == 0 {
            return Err(HgnError::InvalidArgument(
                "nll_loss with every position masked".into(),
            ));
        }
        let value = Tensor::scalar(total / count as f64);
        let op = Op::Nll {
            probs,
            targets: targets.to_vec(),
            mask: mask.to_vec(),
            count,
        };
        Ok(self.derived(value, op, &[probs]))
    }

    /// Propagates `d root / d node` into every reachable trainable leaf,
    /// adding to whatever gradient those leaves already hold.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(HgnError::InvalidArgument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let seed = Tensor::ones(self.shape(root));
        accumulate(&mut self.nodes[root.0], &seed);

        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = node.grad.take() else { continue };
            for (parent, contrib) in local_grads(before, node, &g)? {
                let target = &mut before[parent.0];
                if target.requires_grad {
                    accumulate(target, &contrib);
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(node: &mut Node, contrib: &Tensor) {
    match &mut node.grad {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        None => node.grad = Some(contrib.clone()),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

/// Vector-Jacobian products of one node with respect to each of its inputs.
fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
    let val = |v: Var| &nodes[v.0].value;
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            if wants(nodes, *a) {
                let mut ga = vec![0.0; m * k];
                matmul_a_bt_into(g.data(), vb.data(), &mut ga, m, k, n);
                out.push((*a, Tensor::new(vec![m, k], ga)?));
            }
            if wants(nodes, *b) {
                let mut gb = vec![0.0; k * n];
                matmul_at_b_into(va.data(), g.data(), &mut gb, m, k, n);
                out.push((*b, Tensor::new(vec![k, n], gb)?));
            }
        }
        Op::Transpose(a) => out.push((*a, g.transpose()?)),
        Op::Binary(kind, a, b) => match kind {
            Binary::Add => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Binary::Sub => {
                out.push((*a, g.clone()));
                out.push((*b, g.scale(-1.0)));
            }
            Binary::Mul => {
                if wants(nodes, *a) {
                    out.push((*a, g.mul(val(*b))?));
                }
                if wants(nodes, *b) {
                    out.push((*b, g.mul(val(*a))?));
                }
            }
        },
        Op::Scale(a, s) => out.push((*a, g.scale(*s))),
        Op::Unary(kind, a) => {
            let y = &node.value;
            let d = match kind {
                Unary::Tanh => g.zip_map(y, "tanh'", |gv, yv| gv * (1.0 - yv * yv))?,
                Unary::Sigmoid => g.zip_map(y, "sigmoid'", |gv, yv| gv * yv * (1.0 - yv))?,
                Unary::Relu => g.zip_map(val(*a), "relu'", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?,
            };
            out.push((*a, d));
        }
        Op::Maximum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let mut ga = Tensor::zeros(va.shape());
            let mut gb = Tensor::zeros(vb.shape());
            for (idx, &gv) in g.data().iter().enumerate() {
                if vb.data()[idx] > va.data()[idx] {
                    gb.data_mut()[idx] = gv;
                } else {
                    ga.data_mut()[idx] = gv;
                }
            }
            out.push((*a, ga));
            out.push((*b, gb));
        }
        Op::AddBias(x, bias) => {
            out.push((*x, g.clone()));
            if wants(nodes, *bias) {
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (a, b) in gb.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                out.push((*bias, Tensor::new(val(*bias).shape().to_vec(), gb)?));
            }
        }
        Op::ScaleRows(x, w) => {
            let (vx, vw) = (val(*x), val(*w));
            let n = vx.cols();
            if wants(nodes, *x) {
                let mut gx = g.clone();
                for (row, &s) in gx.data_mut().chunks_mut(n).zip(vw.data()) {
                    row.iter_mut().for_each(|v| *v *= s);
                }
                out.push((*x, gx));
            }
            if wants(nodes, *w) {
                let gw = g
                    .data()
                    .chunks(n)
                    .zip(vx.data().chunks(n))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                    .collect();
                out.push((*w, Tensor::new(vw.shape().to_vec(), gw)?));
            }
        }
        Op::RowSums(x) => {
            let vx = val(*x);
            let n = vx.cols();
            let mut gx = Tensor::zeros(vx.shape());
            for (row, &gv) in gx.data_mut().chunks_mut(n).zip(g.data()) {
                row.iter_mut().for_each(|v| *v = gv);
            }
            out.push((*x, gx));
        }
        Op::SumAll(x) => {
            out.push((*x, Tensor::full(val(*x).shape(), g.data()[0])));
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let n = y.cols();
            let mut gx = Tensor::zeros(y.shape());
            for ((gxr, yr), gr) in gx
                .data_mut()
                .chunks_mut(n)
                .zip(y.data().chunks(n))
                .zip(g.data().chunks(n))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    gxr[j] = yr[j] * (gr[j] - dot);
                }
            }
            out.push((*x, gx));
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let n = xhat.cols();
            let gd = val(*gain).data();
            if wants(nodes, *x) {
                let mut gx = Tensor::zeros(xhat.shape());
                for (i, &is) in inv_std.iter().enumerate() {
                    let gr = g.row(i);
                    let xr = xhat.row(i);
                    let dxhat: Vec<f64> = (0..n).map(|j| gr[j] * gd[j]).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    let row = gx.row_mut(i);
                    for j in 0..n {
                        row[j] = is * (dxhat[j] - mean_d - xr[j] * mean_dx);
                    }
                }
                out.push((*x, gx));
            }
            if wants(nodes, *gain) {
                let mut gg = vec![0.0; n];
                for (gr, xr) in g.data().chunks(n).zip(xhat.data().chunks(n)) {
                    for j in 0..n {
                        gg[j] += gr[j] * xr[j];
                    }
                }
                out.push((*gain, Tensor::new(val(*gain).shape().to_vec(), gg)?));
            }
            if wants(nodes, *bias) {
                let mut gb = vec![0.0; n];
                for gr in g.data().chunks(n) {
                    for j in 0..n {
                        gb[j] += gr[j];
                    }
                }
                out.push((*bias, Tensor::new(val(*bias).shape().to_vec(), gb)?));
            }
        }
        Op::GatherRows(x, rows) => {
            let mut gx = Tensor::zeros(val(*x).shape());
            for (k, &r) in rows.iter().enumerate() {
                for (a, b) in gx.row_mut(r).iter_mut().zip(g.row(k)) {
                    *a += b;
                }
            }
            out.push((*x, gx));
        }
        Op::SliceRows(x, start) => {
            let vx = val(*x);
            let n = vx.cols();
            let mut gx = Tensor::zeros(vx.shape());
            gx.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
            out.push((*x, gx));
        }
        Op::SliceCols(x, start) => {
            let vx = val(*x);
            let len = g.cols();
            let mut gx = Tensor::zeros(vx.shape());
            for i in 0..vx.rows() {
                gx.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
            }
            out.push((*x, gx));
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let vp = val(p);
                let w = vp.cols();
                if wants(nodes, p) {
                    let mut gp = Tensor::zeros(vp.shape());
                    for i in 0..vp.rows() {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    out.push((p, gp));
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let vp = val(p);
                if wants(nodes, p) {
                    let gp = g.data()[offset..offset + vp.len()].to_vec();
                    out.push((p, Tensor::new(vp.shape().to_vec(), gp)?));
                }
                offset += vp.len();
            }
        }
        Op::SelectRows(new, old, take) => {
            let n = g.cols();
            let mut gn = Tensor::zeros(g.shape());
            let mut go = Tensor::zeros(g.shape());
            for (i, &t) in take.iter().enumerate() {
                let dst = if t { &mut gn } else { &mut go };
                dst.data_mut()[i * n..(i + 1) * n].copy_from_slice(g.row(i));
            }
            out.push((*new, gn));
            out.push((*old, go));
        }
        Op::Nll {
            probs,
            targets,
            mask,
            count,
        } => {
            let p = val(*probs);
            let mut gp = Tensor::zeros(p.shape());
            let scale = g.data()[0] / *count as f64;
            let c = p.cols();
            for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                if m {
                    gp.data_mut()[i * c + t] = -scale / p.data()[i * c + t];
                }
            }
            out.push((*probs, gp));
        }
    }
    Ok(out)
}
