//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`];
//! [`Tape::backward`] then sweeps the tape in reverse. Trainable values live in
//! a [`ParamStore`] outside the tape so that one store can be reused by many
//! tapes (one per epoch); [`Tape::param`] snapshots a parameter onto the tape
//! and [`Gradients::accumulate_into`] adds the resulting gradients back.
//!
//! Only the operations the model needs are provided.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use crate::coarsen::GroupingMatrix;
use crate::error::{Error, Result};
use crate::matrix::{gemm, softmax_in_place, Matrix, Trans};
use crate::sparse::CsrMatrix;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Owned trainable matrices with gradient accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    SpMM(Arc<CsrMatrix>, Var),
    MatMul(Var, Var),
    Relu(Var),
    Concat(Var, Var),
    SliceRows(Var, usize),
    Add(Var, Var),
    WeightedSum(Vec<Var>, Vec<Var>),
    ChannelMix(Var, Var),
    Dropout(Var, Vec<f64>),
    PoolRows(Var, Arc<GroupingMatrix>),
    ExpandRows(Var, Arc<GroupingMatrix>),
    GatherRows(Var, Arc<Vec<usize>>),
    SoftmaxCrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
        probs: Matrix,
    },
    L2(Vec<Var>, f64),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Argument(format!("{op}: {detail}"))
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free differentiable input not backed by a [`ParamStore`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Snapshots a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `s * t` with a constant sparse left operand.
    pub fn spmm(&mut self, s: Arc<CsrMatrix>, t: Var) -> Result<Var> {
        let value = s
            .mul_dense(self.value(t))
            .map_err(|e| shape_err("spmm", e.to_string()))?;
        let rg = self.rg(t);
        Ok(self.push(value, Op::SpMM(s, t), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut value = Matrix::zeros(va.rows(), vb.cols());
        gemm(1.0, va, Trans::No, vb, Trans::No, 0.0, &mut value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(shape_err(
                "concat_cols",
                format!("row counts {} and {}", va.rows(), vb.rows()),
            ));
        }
        let (n, ca, cb) = (va.rows(), va.cols(), vb.cols());
        let mut value = Matrix::zeros(n, ca + cb);
        for r in 0..n {
            let row = value.row_mut(r);
            row[..ca].copy_from_slice(va.row(r));
            row[ca..].copy_from_slice(vb.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Rows `range` of `x`.
    pub fn slice_rows(&mut self, x: Var, range: Range<usize>) -> Result<Var> {
        let vx = self.value(x);
        if range.start > range.end || range.end > vx.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("{range:?} of a {}-row matrix", vx.rows()),
            ));
        }
        let c = vx.cols();
        let data = vx.as_slice()[range.start * c..range.end * c].to_vec();
        let value = Matrix::from_vec(range.len(), c, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceRows(x, range.start), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// `Σ w_j t_j` where every `w_j` is a 1x1 value.
    pub fn weighted_sum(&mut self, ts: &[Var], ws: &[Var]) -> Result<Var> {
        if ts.is_empty() || ts.len() != ws.len() {
            return Err(shape_err(
                "weighted_sum",
                format!("{} tensors with {} weights", ts.len(), ws.len()),
            ));
        }
        let shape = self.shape(ts[0]);
        if let Some(t) = ts.iter().find(|&&t| self.shape(t) != shape) {
            return Err(shape_err(
                "weighted_sum",
                format!("{:?} next to {:?}", self.shape(*t), shape),
            ));
        }
        if let Some(w) = ws.iter().find(|&&w| self.shape(w) != (1, 1)) {
            return Err(shape_err(
                "weighted_sum",
                format!("weight of shape {:?}", self.shape(*w)),
            ));
        }
        let mut value = Matrix::zeros(shape.0, shape.1);
        for (&t, &w) in ts.iter().zip(ws) {
            value.add_scaled(self.value(w).item(), self.value(t));
        }
        let rg = ts.iter().chain(ws).any(|&v| self.rg(v));
        Ok(self.push(value, Op::WeightedSum(ts.to_vec(), ws.to_vec()), rg))
    }

    /// `Σ_j w_j ReLU(h_j)` where `h = [h_1 | … | h_c]` splits into `c` equal
    /// column blocks and `w` is `1 x c`.
    pub fn channel_mix(&mut self, h: Var, w: Var) -> Result<Var> {
        let (rows, cols) = self.shape(h);
        let (wr, c) = self.shape(w);
        if wr != 1 || c == 0 || cols % c != 0 {
            return Err(shape_err(
                "channel_mix",
                format!("{rows}x{cols} input with {wr}x{c} channel weights"),
            ));
        }
        let d = cols / c;
        let (vh, vw) = (self.value(h), self.value(w).as_slice());
        let mut value = Matrix::zeros(rows, d);
        for r in 0..rows {
            let src = vh.row(r);
            let dst = value.row_mut(r);
            for (j, &wj) in vw.iter().enumerate() {
                for (o, &x) in dst.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                    *o += wj * x.max(0.0);
                }
            }
        }
        let rg = self.rg(h) || self.rg(w);
        Ok(self.push(value, Op::ChannelMix(h, w), rg))
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`;
    /// otherwise the input passes through unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        check_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let len = self.value(x).as_slice().len();
        let mask = dropout_mask(len, rate, rng);
        let mut value = self.value(x).clone();
        for (v, m) in value.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    /// `Mᵀ x`: sums the rows of every group.
    pub fn pool_rows(&mut self, x: Var, m: Arc<GroupingMatrix>) -> Result<Var> {
        let value = crate::coarsen::coarsen_features(&m, self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::PoolRows(x, m), rg))
    }

    /// `M x`: copies each group's row back to its members.
    pub fn expand_rows(&mut self, x: Var, m: Arc<GroupingMatrix>) -> Result<Var> {
        let value = crate::coarsen::refine_features(&m, self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ExpandRows(x, m), rg))
    }

    /// Row `i` of the result is row `idx[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let vt = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vt.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} of a {}-row table", vt.rows()),
            ));
        }
        let mut value = Matrix::zeros(idx.len(), vt.cols());
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).copy_from_slice(vt.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(value, Op::GatherRows(table, idx), rg))
    }

    /// Mean over `mask` of `-log softmax(logits[v])[label(v)]`.
    pub fn masked_softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[Option<usize>],
        mask: &[usize],
    ) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::Argument("cross-entropy over an empty mask".into()));
        }
        let vl = self.value(logits);
        if labels.len() != vl.rows() {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), vl.rows()),
            ));
        }
        let mut targets = Vec::with_capacity(mask.len());
        let mut probs = Matrix::zeros(mask.len(), vl.cols());
        let mut loss = 0.0;
        for (i, &v) in mask.iter().enumerate() {
            let y = match labels.get(v).copied().flatten() {
                Some(y) if y < vl.cols() => y,
                _ => {
                    return Err(shape_err(
                        "cross_entropy",
                        format!("masked node {v} has no valid label"),
                    ))
                }
            };
            let row = vl.row(v);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            let p = probs.row_mut(i);
            p.copy_from_slice(row);
            softmax_in_place(p);
            targets.push(y);
        }
        let value = Matrix::scalar(loss / mask.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                rows: mask.to_vec(),
                labels: targets,
                probs,
            },
            rg,
        ))
    }

    /// `λ Σ ‖θ‖²_F`.
    pub fn l2_penalty(&mut self, params: &[Var], lambda: f64) -> Result<Var> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::Argument(format!("l2 factor must be >= 0, got {lambda}")));
        }
        let total: f64 = params.iter().map(|&p| self.value(p).squared_norm()).sum();
        let rg = params.iter().any(|&p| self.rg(p));
        Ok(self.push(Matrix::scalar(lambda * total), Op::L2(params.to_vec(), lambda), rg))
    }

    /// Sum of all entries as a 1x1 value.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Argument(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut Matrix)| {
                if self.rg(v) {
                    let (r, c) = self.shape(v);
                    f(lower[v.0].get_or_insert_with(|| Matrix::zeros(r, c)));
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::SpMM(s, t) => acc(*t, &mut |gt| s.tr_mul_dense_into(g, gt)),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, &mut |ga| gemm(1.0, g, Trans::No, vb, Trans::Yes, 1.0, ga));
                    acc(*b, &mut |gb| gemm(1.0, va, Trans::Yes, g, Trans::No, 1.0, gb));
                }
                Op::Relu(x) => {
                    let vx = self.value(*x);
                    acc(*x, &mut |gx| {
                        for ((d, &s), &inp) in gx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vx.as_slice()) {
                            if inp > 0.0 {
                                *d += s;
                            }
                        }
                    });
                }
                Op::Concat(a, b) => {
                    let ca = self.shape(*a).1;
                    acc(*a, &mut |ga| {
                        for r in 0..ga.rows() {
                            for (d, s) in ga.row_mut(r).iter_mut().zip(&g.row(r)[..ca]) {
                                *d += s;
                            }
                        }
                    });
                    acc(*b, &mut |gb| {
                        for r in 0..gb.rows() {
                            for (d, s) in gb.row_mut(r).iter_mut().zip(&g.row(r)[ca..]) {
                                *d += s;
                            }
                        }
                    });
                }
                Op::SliceRows(x, start) => acc(*x, &mut |gx| {
                    for r in 0..g.rows() {
                        for (d, s) in gx.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }),
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| ga.add_assign(g));
                    acc(*b, &mut |gb| gb.add_assign(g));
                }
                Op::WeightedSum(ts, ws) => {
                    for (&t, &w) in ts.iter().zip(ws) {
                        let wv = self.value(w).item();
                        acc(t, &mut |gt| gt.add_scaled(wv, g));
                        let dot = g.dot(self.value(t));
                        acc(w, &mut |gw| gw.as_mut_slice()[0] += dot);
                    }
                }
                Op::ChannelMix(h, w) => {
                    let (vh, vw) = (self.value(*h), self.value(*w).as_slice());
                    let d = g.cols();
                    acc(*h, &mut |gh| {
                        for r in 0..g.rows() {
                            let (src, gr) = (vh.row(r), g.row(r));
                            let dst = gh.row_mut(r);
                            for (j, &wj) in vw.iter().enumerate() {
                                let span = j * d..(j + 1) * d;
                                for ((o, &x), &s) in dst[span.clone()].iter_mut().zip(&src[span]).zip(gr) {
                                    if x > 0.0 {
                                        *o += wj * s;
                                    }
                                }
                            }
                        }
                    });
                    acc(*w, &mut |gw| {
                        let gw = gw.as_mut_slice();
                        for r in 0..g.rows() {
                            let (src, gr) = (vh.row(r), g.row(r));
                            for (j, slot) in gw.iter_mut().enumerate() {
                                *slot += src[j * d..(j + 1) * d]
                                    .iter()
                                    .zip(gr)
                                    .map(|(&x, &s)| x.max(0.0) * s)
                                    .sum::<f64>();
                            }
                        }
                    });
                }
                Op::Dropout(x, mask) => acc(*x, &mut |gx| {
                    for ((d, &s), &m) in gx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(mask) {
                        *d += s * m;
                    }
                }),
                Op::PoolRows(x, m) => acc(*x, &mut |gx| {
                    for (j, &k) in m.assignment().iter().enumerate() {
                        for (d, s) in gx.row_mut(j).iter_mut().zip(g.row(k)) {
                            *d += s;
                        }
                    }
                }),
                Op::ExpandRows(x, m) => acc(*x, &mut |gx| {
                    for (j, &k) in m.assignment().iter().enumerate() {
                        for (d, s) in gx.row_mut(k).iter_mut().zip(g.row(j)) {
                            *d += s;
                        }
                    }
                }),
                Op::GatherRows(t, idx) => acc(*t, &mut |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, s) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }),
                Op::SoftmaxCrossEntropy {
                    logits,
                    rows,
                    labels,
                    probs,
                } => {
                    let scale = g.item() / rows.len() as f64;
                    acc(*logits, &mut |gl| {
                        for (i, (&v, &y)) in rows.iter().zip(labels).enumerate() {
                            let dst = gl.row_mut(v);
                            for (c, (d, &p)) in dst.iter_mut().zip(probs.row(i)).enumerate() {
                                let onehot = if c == y { 1.0 } else { 0.0 };
                                *d += scale * (p - onehot);
                            }
                        }
                    });
                }
                Op::L2(params, lambda) => {
                    let scale = 2.0 * lambda * g.item();
                    for &p in params {
                        let vp = self.value(p);
                        acc(p, &mut |gp| gp.add_scaled(scale, vp));
                    }
                }
                Op::Sum(x) => {
                    let s = g.item();
                    acc(*x, &mut |gx| gx.as_mut_slice().iter_mut().for_each(|d| *d += s));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// [`Tape::backward`] followed by accumulation into the parameter store.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss)?.accumulate_into(self, store);
        Ok(())
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradient of every parameter snapshot into its store entry.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Argument(format!("dropout rate must lie in [0, 1), got {rate}")))
    }
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout on the stored entries of a constant sparse matrix.
/// Dropped entries are removed from the sparsity structure.
pub fn dropout_sparse<R: Rng + ?Sized>(x: &CsrMatrix, rate: f64, rng: &mut R) -> Result<CsrMatrix> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(x.scale_entries(|| if rng.random::<f64>() < rate { 0.0 } else { keep }))
}
