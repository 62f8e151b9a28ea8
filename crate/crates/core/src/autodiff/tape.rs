//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation whose inputs need gradients, in
//! execution order. Inputs always precede their consumers, so a single
//! reverse sweep in [`Tape::backward`] yields all gradients.

use std::rc::Rc;
use std::sync::Arc;

use super::tensor::{dot, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::graph::Csr;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    RowSoftmaxMasked(Var, Rc<[bool]>),
    Mul(Var, Var),
    RowL2Normalize(Var, f64),
    MeanRowsMasked(Var, Rc<[bool]>),
    Sum(Var),
    Scale(Var, f64),
    SpMM(Arc<Csr>, Var),
    EdgeLogits(Arc<Csr>, Var, Var),
    EdgeSoftmax(Arc<Csr>, Var),
    EdgeSpMM(Arc<Csr>, Var, Var),
    GatherRows(Var, Rc<[usize]>),
    BceMean(Var, Rc<[f64]>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::RowSoftmaxMasked(..) => "row_softmax_masked",
            Op::Mul(..) => "elementwise_mul",
            Op::RowL2Normalize(..) => "row_l2_normalize",
            Op::MeanRowsMasked(..) => "mean_rows_masked",
            Op::Sum(..) => "sum",
            Op::Scale(..) => "scale",
            Op::SpMM(..) => "sp_dense_matmul",
            Op::EdgeLogits(..) => "edge_logits",
            Op::EdgeSoftmax(..) => "edge_softmax",
            Op::EdgeSpMM(..) => "edge_spmm",
            Op::GatherRows(..) => "gather_rows",
            Op::BceMean(..) => "bce_mean",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::ConcatCols(v) => v.clone(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::EdgeLogits(_, a, b) | Op::EdgeSpMM(_, a, b) => vec![*a, *b],
            Op::SliceCols(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::RowSoftmaxMasked(a, _)
            | Op::RowL2Normalize(a, _)
            | Op::MeanRowsMasked(a, _)
            | Op::Sum(a)
            | Op::Scale(a, _)
            | Op::SpMM(_, a)
            | Op::EdgeSoftmax(_, a)
            | Op::GatherRows(a, _)
            | Op::BceMean(a, _) => vec![*a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Perturbs one backward rule by a constant factor. Exists so gradient
/// checkers can be shown to catch a broken rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardFault {
    pub op: &'static str,
    pub factor: f64,
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn check_column(op: &'static str, t: &Tensor, rows: usize) -> Result<()> {
    if t.shape() != (rows, 1) {
        return shape_err(op, format!("expected {rows}x1, got {:?}", t.shape()));
    }
    Ok(())
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

    /// Drops every recorded node; outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn set_fault(&mut self, fault: Option<BackwardFault>) {
        self.fault = fault;
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input; gradients flow back to it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `op` only when one of its inputs carries a gradient;
    /// otherwise the result is stored as a constant.
    fn record(&mut self, value: Tensor, op: Op) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        if rg {
            self.push(value, op, true)
        } else {
            self.push(value, Op::Leaf, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("add", x, y)?;
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.record(out, Op::Add(a, b)))
    }

    /// Adds a `1×k` row to every row of an `n×k` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            return shape_err("add_row", format!("{:?} + row {:?}", x.shape(), b.shape()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.record(out, Op::AddRow(a, row)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let n = self.value(first).rows();
        if let Some(p) = parts.iter().find(|p| self.value(**p).rows() != n) {
            return shape_err(
                "concat_cols",
                format!("row count {} vs {n}", self.value(*p).rows()),
            );
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.record(Tensor::raw(n, total, data), Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return shape_err(
                "slice_cols",
                format!("{start}..{} of {} columns", start + len, x.cols()),
            );
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let out = Tensor::raw(x.rows(), len, data);
        Ok(self.record(out, Op::SliceCols(a, start)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.record(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.record(out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.record(out, Op::Sigmoid(a))
    }

    /// Softmax over the entries of each row where `mask` is true; masked
    /// entries become exactly zero. `mask` is row-major with the input's shape.
    pub fn row_softmax_masked(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return shape_err(
                "row_softmax_masked",
                format!("mask of {} for {:?}", mask.len(), x.shape()),
            );
        }
        let (n, k) = x.shape();
        let mut out = Tensor::zeros(n, k);
        for r in 0..n {
            let m = &mask[r * k..(r + 1) * k];
            let row = x.row(r);
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &on)| on)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptySoftmaxRow { row: r });
            }
            let o = out.row_mut(r);
            let mut z = 0.0;
            for c in 0..k {
                if m[c] {
                    o[c] = (row[c] - max).exp();
                    z += o[c];
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.record(out, Op::RowSoftmaxMasked(a, mask)))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("elementwise_mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::raw(x.rows(), x.cols(), data);
        Ok(self.record(out, Op::Mul(a, b)))
    }

    /// Divides each row by its L2 norm; rows with norm below `eps` pass
    /// through unchanged.
    pub fn row_l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let norm = dot(x.row(r), x.row(r)).sqrt();
            if norm >= eps {
                out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
            }
        }
        self.record(out, Op::RowL2Normalize(a, eps))
    }

    /// Output row `i` is the mean of the input rows `j` with
    /// `mask[i * n_in + j]`; rows with no selected inputs are zero.
    pub fn mean_rows_masked(&mut self, a: Var, mask: Rc<[bool]>, n_out: usize) -> Result<Var> {
        let x = self.value(a);
        let n_in = x.rows();
        if mask.len() != n_out * n_in {
            return shape_err(
                "mean_rows_masked",
                format!("mask of {} for {n_out}x{n_in}", mask.len()),
            );
        }
        let mut out = Tensor::zeros(n_out, x.cols());
        for i in 0..n_out {
            let m = &mask[i * n_in..(i + 1) * n_in];
            let count = m.iter().filter(|&&b| b).count();
            if count == 0 {
                continue;
            }
            let o = out.row_mut(i);
            for (j, _) in m.iter().enumerate().filter(|(_, &b)| b) {
                for (ov, &xv) in o.iter_mut().zip(x.row(j)) {
                    *ov += xv;
                }
            }
            let inv = 1.0 / count as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.record(out, Op::MeanRowsMasked(a, mask)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.record(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.record(out, Op::Scale(a, factor))
    }

    /// `Σ x²` as a `1×1` value.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self
            .elementwise_mul(a, a)
            .expect("a tensor matches its own shape");
        self.sum(sq)
    }

    /// Constant sparse matrix times a recorded dense value.
    pub fn sp_matmul(&mut self, adj: Arc<Csr>, h: Var) -> Result<Var> {
        let out = adj.matmul_dense(self.value(h))?;
        Ok(self.record(out, Op::SpMM(adj, h)))
    }

    /// Per stored entry `p = (i, j)` of `adj`: `src[i] + dst[j]`, as an
    /// `nnz×1` column. `src` and `dst` are `n×1`.
    pub fn edge_logits(&mut self, adj: Arc<Csr>, src: Var, dst: Var) -> Result<Var> {
        let n = adj.n();
        check_column("edge_logits", self.value(src), n)?;
        check_column("edge_logits", self.value(dst), n)?;
        let (s, t) = (self.value(src).data(), self.value(dst).data());
        let mut data = Vec::with_capacity(adj.nnz());
        for i in 0..n {
            for &j in &adj.col_idx()[adj.row_range(i)] {
                data.push(s[i] + t[j]);
            }
        }
        let out = Tensor::raw(adj.nnz(), 1, data);
        Ok(self.record(out, Op::EdgeLogits(adj, src, dst)))
    }

    /// Softmax of an `nnz×1` edge column within each row of `adj`.
    pub fn edge_softmax(&mut self, adj: Arc<Csr>, scores: Var) -> Result<Var> {
        let e = self.value(scores);
        check_column("edge_softmax", e, adj.nnz())?;
        let e = e.data();
        let mut out = vec![0.0; adj.nnz()];
        for i in 0..adj.n() {
            let r = adj.row_range(i);
            if r.is_empty() {
                return Err(Error::EmptySoftmaxRow { row: i });
            }
            let max = e[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for p in r.clone() {
                out[p] = (e[p] - max).exp();
                z += out[p];
            }
            out[r].iter_mut().for_each(|v| *v /= z);
        }
        let out = Tensor::raw(adj.nnz(), 1, out);
        Ok(self.record(out, Op::EdgeSoftmax(adj, scores)))
    }

    /// Sparse product with per-edge weights taken from an `nnz×1` column:
    /// `out_i = Σ_p w_p · h_{col(p)}` over the entries `p` of row `i`.
    pub fn edge_spmm(&mut self, adj: Arc<Csr>, weights: Var, h: Var) -> Result<Var> {
        let w = self.value(weights);
        check_column("edge_spmm", w, adj.nnz())?;
        let x = self.value(h);
        if x.rows() != adj.n() {
            return shape_err(
                "edge_spmm",
                format!("{0}x{0} pattern x {1:?}", adj.n(), x.shape()),
            );
        }
        let mut out = Tensor::zeros(adj.n(), x.cols());
        for i in 0..adj.n() {
            let o = out.row_mut(i);
            for p in adj.row_range(i) {
                let wp = w.data()[p];
                for (ov, &xv) in o.iter_mut().zip(x.row(adj.col_idx()[p])) {
                    *ov += wp * xv;
                }
            }
        }
        Ok(self.record(out, Op::EdgeSpMM(adj, weights, h)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&i) = idx.iter().find(|&&i| i >= x.rows()) {
            return shape_err("gather_rows", format!("row {i} of {}", x.rows()));
        }
        let out = x.select_rows(idx);
        Ok(self.record(out, Op::GatherRows(a, idx.into())))
    }

    /// Mean binary cross-entropy of a `B×1` probability column against
    /// labels in `{0, 1}`.
    pub fn bce_mean(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        check_column("bce_mean", p, labels.len())?;
        if labels.is_empty() {
            return Err(Error::Empty("label batch"));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&pv, &y)| bce_term(pv, y))
            .sum();
        let out = Tensor::scalar(total / labels.len() as f64);
        Ok(self.record(out, Op::BceMean(probs, labels.into())))
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs = node.op.inputs();
            if let Some(bad) = inputs.iter().find(|v| v.0 >= id) {
                return Err(Error::TapeOrder(bad.0));
            }
            let mut local = self.local_grads(id, &g)?;
            if let Some(f) = self.fault.filter(|f| f.op == node.op.name()) {
                for t in local.iter_mut().flatten() {
                    *t = t.map(|v| v * f.factor);
                }
            }
            for (input, lg) in inputs.into_iter().zip(local) {
                let Some(lg) = lg else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&lg),
                    slot @ None => *slot = Some(lg),
                }
            }
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of node `id` with respect to each of its inputs, given the
    /// upstream gradient `g`. `None` for inputs that take no gradient.
    fn local_grads(&self, id: usize, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let node = &self.nodes[id];
        let y = &node.value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let ga = wants(a)
                    .then(|| g.matmul_nt(self.value(*b)))
                    .transpose()?;
                let gb = wants(b)
                    .then(|| self.value(*a).matmul_tn(g))
                    .transpose()?;
                vec![ga, gb]
            }
            Op::Add(..) => vec![Some(g.clone()), Some(g.clone())],
            Op::AddRow(..) => {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![Some(g.clone()), Some(gb)]
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                parts
                    .iter()
                    .map(|p| {
                        let w = self.value(*p).cols();
                        let mut data = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[start..start + w]);
                        }
                        start += w;
                        Some(Tensor::raw(g.rows(), w, data))
                    })
                    .collect()
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                vec![Some(gx)]
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                vec![Some(zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))]
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                vec![Some(zip_map(g, x, |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else {
                        slope * gv
                    }
                }))]
            }
            Op::Sigmoid(_) => vec![Some(zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv)))],
            Op::RowSoftmaxMasked(_, mask) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    let k = y.cols();
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        if mask[r * k + c] {
                            *o = yr[c] * (gr[c] - s);
                        }
                    }
                }
                vec![Some(gx)]
            }
            Op::Mul(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                vec![
                    Some(zip_map(g, z, |gv, zv| gv * zv)),
                    Some(zip_map(g, x, |gv, xv| gv * xv)),
                ]
            }
            Op::RowL2Normalize(a, eps) => {
                let x = self.value(*a);
                let mut gx = g.clone();
                for r in 0..x.rows() {
                    let norm = dot(x.row(r), x.row(r)).sqrt();
                    if norm < *eps {
                        continue;
                    }
                    let s = dot(y.row(r), g.row(r));
                    let yr = y.row(r);
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = (*o - yr[c] * s) / norm;
                    }
                }
                vec![Some(gx)]
            }
            Op::MeanRowsMasked(a, mask) => {
                let x = self.value(*a);
                let n_in = x.rows();
                let mut gx = Tensor::zeros(n_in, x.cols());
                for i in 0..y.rows() {
                    let m = &mask[i * n_in..(i + 1) * n_in];
                    let count = m.iter().filter(|&&b| b).count();
                    if count == 0 {
                        continue;
                    }
                    let inv = 1.0 / count as f64;
                    for (j, _) in m.iter().enumerate().filter(|(_, &b)| b) {
                        for (o, &gv) in gx.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += inv * gv;
                        }
                    }
                }
                vec![Some(gx)]
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                vec![Some(Tensor::filled(r, c, g.data()[0]))]
            }
            Op::Scale(_, f) => vec![Some(g.map(|v| v * f))],
            Op::SpMM(adj, _) => vec![Some(adj.matmul_dense_t(g)?)],
            Op::EdgeLogits(adj, _, _) => {
                let n = adj.n();
                let mut gs = vec![0.0; n];
                let mut gt = vec![0.0; n];
                for i in 0..n {
                    for p in adj.row_range(i) {
                        gs[i] += g.data()[p];
                        gt[adj.col_idx()[p]] += g.data()[p];
                    }
                }
                vec![Some(Tensor::raw(n, 1, gs)), Some(Tensor::raw(n, 1, gt))]
            }
            Op::EdgeSoftmax(adj, _) => {
                let (a, gd) = (y.data(), g.data());
                let mut ge = vec![0.0; adj.nnz()];
                for i in 0..adj.n() {
                    let r = adj.row_range(i);
                    let s: f64 = r.clone().map(|p| a[p] * gd[p]).sum();
                    for p in r {
                        ge[p] = a[p] * (gd[p] - s);
                    }
                }
                vec![Some(Tensor::raw(adj.nnz(), 1, ge))]
            }
            Op::EdgeSpMM(adj, w, h) => {
                let (wv, x) = (self.value(*w), self.value(*h));
                let gw = wants(w).then(|| {
                    let mut gw = vec![0.0; adj.nnz()];
                    for i in 0..adj.n() {
                        for p in adj.row_range(i) {
                            gw[p] = dot(g.row(i), x.row(adj.col_idx()[p]));
                        }
                    }
                    Tensor::raw(adj.nnz(), 1, gw)
                });
                let gh = wants(h).then(|| {
                    let mut gh = Tensor::zeros(x.rows(), x.cols());
                    for i in 0..adj.n() {
                        for p in adj.row_range(i) {
                            let wp = wv.data()[p];
                            for (o, &gv) in gh.row_mut(adj.col_idx()[p]).iter_mut().zip(g.row(i)) {
                                *o += wp * gv;
                            }
                        }
                    }
                    gh
                });
                vec![gw, gh]
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &gv) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                vec![Some(gx)]
            }
            Op::BceMean(a, labels) => {
                let p = self.value(*a);
                let scale = g.data()[0] / labels.len() as f64;
                let data = p
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&pv, &yv)| {
                        if pv <= BCE_CLAMP || pv >= 1.0 - BCE_CLAMP {
                            0.0
                        } else {
                            scale * (-yv / pv + (1.0 - yv) / (1.0 - pv))
                        }
                    })
                    .collect();
                vec![Some(Tensor::raw(p.rows(), 1, data))]
            }
        })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::raw(a.rows(), a.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One binary cross-entropy term with the probability clamped.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}
