//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse and accumulates
//! `∂loss/∂node` for every node that depends on a gradient-tracking leaf.
//! Tapes are rebuilt for each forward pass, so graphs may change shape from
//! one cloud to the next.
//!
//! ```
//! use reps_core::autodiff::Tape;
//! use reps_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
//! let n = tape.l2_norm_rows(x).unwrap();
//! let loss = tape.sum(n).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! let g = grads.wrt(&tape, x);
//! assert!((g.get(0, 0) - 0.6).abs() < 1e-12 && (g.get(0, 1) - 0.8).abs() < 1e-12);
//! ```

mod container;
mod gradcheck;
mod params;

pub use container::{read_params, write_params, MAGIC, VERSION};
pub use gradcheck::{gradient_check, gradient_check_params, GradCheckReport};
pub use params::{Activation, Bound, Linear, Mlp, ParamId, ParamStore};

use crate::error::{invalid_arg, invalid_state, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    SegmentMax { src: Var, argmax: Vec<usize> },
    SegmentMean { src: Var, group: usize },
    SegmentSum { src: Var, group: usize },
    Sum(Var),
    L2NormRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { src: Var, indices: Vec<usize> },
    Reshape(Var),
    SelfAttention { src: Var, group: usize, weights: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `∂loss/∂node` for every node reached by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let [r, c] = tape.value(v).shape();
            Tensor::zeros(r, c)
        })
    }

    /// Parameter gradients in store order.
    pub fn for_params(&self, tape: &Tape, bound: &Bound) -> Vec<Tensor> {
        bound.vars().iter().map(|&v| self.wrt(tape, v)).collect()
    }
}

fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax without a tape.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_row_in_place(out.row_mut(r));
    }
    out
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return invalid_arg(format!("{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return invalid_state(format!("non-finite value produced by {}", op_name(&op)));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A gradient-tracking input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Places every parameter of `store` on the tape as a tracked leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Result<Bound> {
        let vars = store
            .tensors()
            .iter()
            .map(|t| self.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound::new(vars))
    }

    /// Places every parameter on the tape as a constant, for inference.
    pub fn bind_frozen(&mut self, store: &ParamStore) -> Result<Bound> {
        let vars = store
            .tensors()
            .iter()
            .map(|t| self.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound::new(vars))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return invalid_arg(format!(
                "matmul shape mismatch: {:?} · {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        gemm(av, false, bv, false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(what, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a `1×c` row to every row of an `n×c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return invalid_arg(format!(
                "add_row: cannot broadcast {:?} over {:?}",
                rv.shape(),
                av.shape()
            ));
        }
        let mut out = av.clone();
        let r = rv.data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.scale_in_place(factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.cols() == 0 {
            return invalid_arg("softmax over empty rows");
        }
        let out = softmax_rows(av);
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    fn check_group(&self, a: Var, group: usize, what: &str) -> Result<(usize, usize)> {
        let [rows, cols] = self.value(a).shape();
        if group == 0 || rows % group != 0 {
            return invalid_arg(format!("{what}: {rows} rows not divisible into groups of {group}"));
        }
        Ok((rows / group, cols))
    }

    /// Columnwise max over each consecutive block of `group` rows.
    pub fn segment_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let (groups, cols) = self.check_group(a, group, "segment_max")?;
        let av = self.value(a);
        let mut out = Tensor::filled(groups, cols, f64::NEG_INFINITY);
        let mut argmax = vec![0usize; groups * cols];
        for g in 0..groups {
            for r in g * group..(g + 1) * group {
                let row = av.row(r);
                let orow = out.row_mut(g);
                for c in 0..cols {
                    // Strict: the first maximal row wins.
                    if row[c] > orow[c] {
                        orow[c] = row[c];
                        argmax[g * cols + c] = r;
                    }
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SegmentMax { src: a, argmax }, rg)
    }

    /// Columnwise max over all rows, `n×c → 1×c`.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        self.segment_max(a, rows)
    }

    pub fn segment_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let (groups, cols) = self.check_group(a, group, "segment_mean")?;
        let out = segment_reduce(self.value(a), groups, group, cols, 1.0 / group as f64);
        let rg = self.rg(a);
        self.push(out, Op::SegmentMean { src: a, group }, rg)
    }

    pub fn mean_pool_rows(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        self.segment_mean(a, rows)
    }

    pub fn segment_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let (groups, cols) = self.check_group(a, group, "segment_sum")?;
        let out = segment_reduce(self.value(a), groups, group, cols, 1.0);
        let rg = self.rg(a);
        self.push(out, Op::SegmentSum { src: a, group }, rg)
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Euclidean norm of each row, `n×c → n×1`.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_vec(av.rows(), 1, data)?;
        let rg = self.rg(a);
        self.push(out, Op::L2NormRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return invalid_arg("concat of zero tensors");
        };
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return invalid_arg("concat_cols: row counts differ");
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return invalid_arg("concat of zero tensors");
        };
        let cols = self.value(first).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return invalid_arg("concat_rows: column counts differ");
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Rows of `a` at `indices` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.rows()) {
            return invalid_arg(format!("gather index {bad} out of range for {} rows", av.rows()));
        }
        let out = av.select_rows(indices);
        let rg = self.rg(a);
        self.push(out, Op::GatherRows { src: a, indices: indices.to_vec() }, rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    /// `softmax(X Xᵀ / √d) X` over the whole `n×d` input.
    pub fn self_attention(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        self.grouped_self_attention(a, rows)
    }

    /// Independent self-attention within each consecutive block of `group`
    /// rows. No learned projections: queries, keys and values are the input.
    pub fn grouped_self_attention(&mut self, a: Var, group: usize) -> Result<Var> {
        let (groups, d) = self.check_group(a, group, "self_attention")?;
        if d == 0 {
            return invalid_arg("self_attention needs feature width d >= 1");
        }
        let av = self.value(a);
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Tensor::zeros(av.rows(), d);
        let mut weights = vec![0.0; groups * group * group];
        let mut block_out = Tensor::zeros(group, d);
        for g in 0..groups {
            let x = Tensor::from_vec(group, d, av.data()[g * group * d..(g + 1) * group * d].to_vec())?;
            let mut s = Tensor::zeros(group, group);
            gemm(&x, false, &x, true, &mut s, false);
            s.scale_in_place(scale);
            let attn = softmax_rows(&s);
            gemm(&attn, false, &x, false, &mut block_out, false);
            out.data_mut()[g * group * d..(g + 1) * group * d].copy_from_slice(block_out.data());
            weights[g * group * group..(g + 1) * group * group].copy_from_slice(attn.data());
        }
        let rg = self.rg(a);
        self.push(out, Op::SelfAttention { src: a, group, weights }, rg)
    }

    /// Mean negative log-likelihood of `labels` under row-softmaxed logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() {
            return invalid_arg(format!(
                "cross_entropy: {} label(s) for {} row(s)",
                labels.len(),
                lv.rows()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return invalid_arg(format!("label {bad} out of range for {} classes", lv.cols()));
        }
        if labels.is_empty() {
            return invalid_arg("cross_entropy over zero rows");
        }
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            // log-sum-exp form keeps tiny probabilities finite.
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= labels.len() as f64;
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
        )
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != [1, 1] {
            return invalid_arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter().enumerate() {
            if g.as_ref().is_some_and(|g| !g.is_finite()) {
                return invalid_state(format!("non-finite gradient at node {id}"));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let tape = self;
        let mut acc = |v: Var, delta: Tensor| {
            if !tape.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut ga, false);
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut gb, false);
                    acc(*b, gb);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let mut neg = g.clone();
                neg.scale_in_place(-1.0);
                acc(*b, neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, elementwise(g, bv, |x, y| x * y));
                acc(*b, elementwise(g, av, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                acc(*row, gr);
            }
            Op::Scale(a, f) => {
                let mut ga = g.clone();
                ga.scale_in_place(*f);
                acc(*a, ga);
            }
            Op::Relu(a) => {
                acc(*a, elementwise(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::SegmentMax { src, argmax } => {
                let [rows, cols] = self.value(*src).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for (slot, &r) in argmax.iter().enumerate() {
                    let c = slot % cols;
                    let gi = slot / cols;
                    let v = ga.get(r, c) + g.get(gi, c);
                    ga.set(r, c, v);
                }
                acc(*src, ga);
            }
            Op::SegmentMean { src, group } | Op::SegmentSum { src, group } => {
                let factor = match node.op {
                    Op::SegmentMean { .. } => 1.0 / *group as f64,
                    _ => 1.0,
                };
                let [rows, cols] = self.value(*src).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(r / group)) {
                        *o = v * factor;
                    }
                }
                acc(*src, ga);
            }
            Op::Sum(a) => {
                let [r, c] = self.value(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::L2NormRows(a) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let norm = node.value.get(r, 0);
                    // The norm is not differentiable at 0; use the zero subgradient.
                    if norm > 0.0 {
                        let k = g.get(r, 0) / norm;
                        for (o, x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o = k * x;
                        }
                    }
                }
                acc(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [rows, cols] = self.value(p).shape();
                    let mut gp = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [rows, cols] = self.value(p).shape();
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    acc(p, Tensor::from_vec(rows, cols, data).expect("shape checked in forward"));
                }
            }
            Op::GatherRows { src, indices } => {
                let [rows, cols] = self.value(*src).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*src, ga);
            }
            Op::Reshape(a) => {
                let [r, c] = self.value(*a).shape();
                acc(*a, g.clone().reshaped(r, c).expect("sizes equal"));
            }
            Op::SelfAttention { src, group, weights } => {
                acc(*src, attention_backward(self.value(*src), *group, weights, g));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let mut gl = probs.clone();
                let n = labels.len() as f64;
                for (r, &l) in labels.iter().enumerate() {
                    let v = gl.get(r, l) - 1.0;
                    gl.set(r, l, v);
                }
                gl.scale_in_place(g.item() / n);
                acc(*logits, gl);
            }
        }
    }
}

fn segment_reduce(a: &Tensor, groups: usize, group: usize, cols: usize, factor: f64) -> Tensor {
    let mut out = Tensor::zeros(groups, cols);
    for r in 0..a.rows() {
        for (o, v) in out.row_mut(r / group).iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    if factor != 1.0 {
        out.scale_in_place(factor);
    }
    out
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes equal")
}

/// Gradient of `Y = A X` with `A = softmax(X Xᵀ / √d)`, per block.
fn attention_backward(x_all: &Tensor, group: usize, weights: &[f64], g_all: &Tensor) -> Tensor {
    let d = x_all.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let groups = x_all.rows() / group;
    let mut out = Tensor::zeros(x_all.rows(), d);
    let block = |t: &Tensor, g: usize| {
        Tensor::from_vec(group, d, t.data()[g * group * d..(g + 1) * group * d].to_vec())
            .expect("block in range")
    };
    for gi in 0..groups {
        let x = block(x_all, gi);
        let gy = block(g_all, gi);
        let attn = Tensor::from_vec(
            group,
            group,
            weights[gi * group * group..(gi + 1) * group * group].to_vec(),
        )
        .expect("block in range");
        // dA = dY Xᵀ
        let mut ga = Tensor::zeros(group, group);
        gemm(&gy, false, &x, true, &mut ga, false);
        // dS = A ⊙ (dA − rowsum(dA ⊙ A))
        let mut gs = Tensor::zeros(group, group);
        for r in 0..group {
            let dot: f64 = ga.row(r).iter().zip(attn.row(r)).map(|(a, b)| a * b).sum();
            for c in 0..group {
                gs.set(r, c, attn.get(r, c) * (ga.get(r, c) - dot) * scale);
            }
        }
        // dX = Aᵀ dY + (dS + dSᵀ) X
        let mut gx = Tensor::zeros(group, d);
        gemm(&attn, true, &gy, false, &mut gx, false);
        gemm(&gs, false, &x, false, &mut gx, true);
        gemm(&gs, true, &x, false, &mut gx, true);
        out.data_mut()[gi * group * d..(gi + 1) * group * d].copy_from_slice(gx.data());
    }
    out
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::SoftmaxRows(_) => "softmax",
        Op::SegmentMax { .. } => "max_pool",
        Op::SegmentMean { .. } => "mean_pool",
        Op::SegmentSum { .. } => "segment_sum",
        Op::Sum(_) => "sum",
        Op::L2NormRows(_) => "l2_norm",
        Op::ConcatCols(_) => "concat_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::Reshape(_) => "reshape",
        Op::SelfAttention { .. } => "self_attention",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}
