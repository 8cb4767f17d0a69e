//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every forward operation appends a node holding its output value and the
//! inputs it read. [`Tape::backward`] walks the nodes in reverse and applies
//! each node's backward rule, accumulating parameter gradients into the
//! [`ParamStore`] the parameters were read from.
//!
//! ```
//! use vargraph::autodiff::{ParamStore, Tape};
//! use vargraph::Tensor;
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::scalar(3.0));
//!
//! let mut tape = Tape::new();
//! let xv = tape.param(&store, x);
//! let loss = tape.mul(xv, xv).unwrap();
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(x).grad().data(), &[6.0]);
//! ```

use std::sync::Arc;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Default negative slope for [`Tape::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.2;

/// Prediction clamp used by [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Mul,
    Exp,
    LeakyRelu(f64),
    Sigmoid,
}

/// How the random-feature map picks the constant it subtracts inside `exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stabilizer {
    None,
    /// Maximum logit of each row.
    PerRow,
    /// Maximum logit over the whole matrix.
    Global,
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Scale(Var, f64),
    Exp(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Reciprocal(Var),
    Transpose(Var),
    SumAll(Var),
    MeanAll(Var),
    ColSum(Var),
    SoftmaxRows(Var),
    SegmentSoftmax { a: Var, offsets: Arc<Vec<usize>> },
    Gather { a: Var, idx: Arc<Vec<usize>> },
    ScatterAdd { a: Var, idx: Arc<Vec<usize>> },
    RowScale { a: Var, s: Var },
    ConcatCols(Vec<Var>),
    FavorMap { x: Var, omega: Arc<Tensor> },
    Bce { pred: Var, labels: Arc<Vec<f64>> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Constant)
    }

    /// Reads a parameter onto the tape; its gradient lands in the store on backward.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_unchecked(store.get(id).value().clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Dispatches a binary or unary elementwise kind.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || {
            b.ok_or_else(|| Error::Contract(format!("{kind:?} needs two operands")))
        };
        match kind {
            Elementwise::Add => self.add(a, need_b()?),
            Elementwise::Mul => self.mul(a, need_b()?),
            Elementwise::Exp => self.exp(a),
            Elementwise::LeakyRelu(slope) => self.leaky_relu(a, slope),
            Elementwise::Sigmoid => self.sigmoid(a),
        }
    }

    /// Returns whether `b` must be broadcast as a row over `a`.
    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if self.value(b).rows() == 1 && self.value(b).cols() == self.value(a).cols() {
            Ok(true)
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, name: &'static str) -> Result<(Tensor, bool)> {
        let broadcast = self.broadcast_kind(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let cols = va.cols();
        let data = if broadcast {
            va.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, vb.data()[i % cols]))
                .collect()
        } else {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok((Tensor::new(va.shape().to_vec(), data)?, broadcast))
    }

    /// `a + b`; `b` may be a `1 × n` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, broadcast) = self.binary(a, b, |x, y| x + y, "add")?;
        self.push(out, Op::Add { a, b, broadcast }, "add")
    }

    /// `a ∘ b`; `b` may be a `1 × n` row broadcast over the rows of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, broadcast) = self.binary(a, b, |x, y| x * y, "mul")?;
        self.push(out, Op::Mul { a, b, broadcast }, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 / x);
        self.push(out, Op::Reciprocal(a), "reciprocal")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::SumAll(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push(out, Op::MeanAll(a), "mean")
    }

    /// Column sums as a `1 × n` row.
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mut out = vec![0.0; v.cols()];
        for r in 0..v.rows() {
            for (o, x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        self.push(Tensor::row_vector(&out), Op::ColSum(a), "col_sum")
    }

    /// Row-wise softmax with max-subtraction.
    ///
    /// Masked entries (`false` in `mask`) come out as exactly zero. A row with
    /// every entry masked is an error.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let v = self.value(a);
        if let Some(m) = mask {
            if m.len() != v.len() {
                return Err(Error::dim("softmax_rows", v.shape(), &[m.len()]));
            }
        }
        let cols = v.cols();
        let mut out = Tensor::zeros(v.shape());
        for r in 0..v.rows() {
            let row = v.row(r);
            let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyNeighborhood { row: r });
            }
            let dst = out.row_mut(r);
            let mut total = 0.0;
            for j in (0..cols).filter(|&j| keep(j)) {
                dst[j] = (row[j] - max).exp();
                total += dst[j];
            }
            for x in dst.iter_mut() {
                *x /= total;
            }
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Softmax over contiguous segments of a column vector.
    ///
    /// Segment `s` covers rows `offsets[s]..offsets[s + 1]`; empty segments are
    /// allowed and contribute nothing. This is the sparse equivalent of
    /// [`Tape::softmax_rows`] with a mask, used for neighborhood attention.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<Vec<usize>>) -> Result<Var> {
        let v = self.value(a);
        if v.cols() != 1 || offsets.last().copied().unwrap_or(0) != v.rows() {
            return Err(Error::dim("segment_softmax", v.shape(), &[offsets.len()]));
        }
        let mut out = vec![0.0; v.rows()];
        for w in offsets.windows(2) {
            let seg = &v.data()[w[0]..w[1]];
            if seg.is_empty() {
                continue;
            }
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[w[0]..w[1]];
            let mut total = 0.0;
            for (d, &x) in dst.iter_mut().zip(seg) {
                *d = (x - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        self.push(Tensor::column(&out), Op::SegmentSoftmax { a, offsets }, "segment_softmax")
    }

    /// `out[r] = a[idx[r]]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let v = self.value(a);
        let cols = v.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            if i >= v.rows() {
                return Err(Error::Bounds {
                    what: "rows",
                    index: i,
                    len: v.rows(),
                });
            }
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        self.push(out, Op::Gather { a, idx }, "gather_rows")
    }

    /// `out[idx[r]] += a[r]` into a fresh `rows × n` matrix.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let v = self.value(a);
        if idx.len() != v.rows() {
            return Err(Error::dim("scatter_add_rows", v.shape(), &[idx.len()]));
        }
        let mut out = Tensor::zeros(&[rows, v.cols()]);
        for (r, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(Error::Bounds {
                    what: "rows",
                    index: i,
                    len: rows,
                });
            }
            for (o, x) in out.row_mut(i).iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::ScatterAdd { a, idx }, "scatter_add_rows")
    }

    /// Multiplies row `i` of `a` by the scalar `s[i]`, with `s` an `m × 1` column.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (va, vs) = (self.value(a), self.value(s));
        if vs.cols() != 1 || vs.rows() != va.rows() {
            return Err(Error::dim("row_scale", va.shape(), vs.shape()));
        }
        let mut out = va.clone();
        for r in 0..va.rows() {
            let k = vs.data()[r];
            for x in out.row_mut(r) {
                *x *= k;
            }
        }
        self.push(out, Op::RowScale { a, s }, "row_scale")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::dim("concat_cols", self.shape(*first), v.shape()));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Positive random features of the softmax kernel.
    ///
    /// Row `i` of the output is `exp(Ω x_i − ‖x_i‖²/2 − c) / √m`, where `m` is
    /// the number of rows of `omega` and `c` is chosen by `stabilizer`. The
    /// stabilizer is treated as a constant during differentiation; it cancels
    /// in normalized attention.
    pub fn favor_features(&mut self, x: Var, omega: Arc<Tensor>, stabilizer: Stabilizer) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = (vx.rows(), vx.cols());
        if omega.cols() != d {
            return Err(Error::dim("favor_features", vx.shape(), omega.shape()));
        }
        let m = omega.rows();
        let mut logits = vec![0.0; n * m];
        matmul_nt_into(vx.data(), omega.data(), &mut logits, n, d, m);
        for i in 0..n {
            let half_sq = 0.5 * vx.row(i).iter().map(|v| v * v).sum::<f64>();
            for l in &mut logits[i * m..(i + 1) * m] {
                *l -= half_sq;
            }
        }
        match stabilizer {
            Stabilizer::None => {}
            Stabilizer::PerRow => {
                for row in logits.chunks_mut(m.max(1)) {
                    let c = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.iter_mut().for_each(|l| *l -= c);
                }
            }
            Stabilizer::Global => {
                let c = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if c.is_finite() {
                    logits.iter_mut().for_each(|l| *l -= c);
                }
            }
        }
        let norm = 1.0 / (m as f64).sqrt();
        let data = logits.into_iter().map(|l| l.exp() * norm).collect();
        let out = Tensor::new(vec![n, m], data)?;
        self.push(out, Op::FavorMap { x, omega }, "favor_features")
    }

    /// Mean binary cross-entropy of predictions in `(0, 1)` against 0/1 labels.
    ///
    /// Predictions are clamped to `[1e-7, 1 − 1e-7]` before the log.
    pub fn bce(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let v = self.value(pred);
        if v.len() != labels.len() {
            return Err(Error::dim("bce", v.shape(), &[labels.len()]));
        }
        if v.is_empty() {
            return Err(Error::Contract("bce over an empty batch".into()));
        }
        if let Some(bad) = labels.iter().find(|&&c| c != 0.0 && c != 1.0) {
            return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
        }
        let total: f64 = v
            .data()
            .iter()
            .zip(labels)
            .map(|(&y, &c)| {
                let y = y.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(c * y.ln() + (1.0 - c) * (1.0 - y).ln())
            })
            .sum();
        let out = Tensor::scalar(total / labels.len() as f64);
        self.push(
            out,
            Op::Bce {
                pred,
                labels: Arc::new(labels.to_vec()),
            },
            "bce",
        )
    }

    /// Back-propagates from a scalar `loss`, adding `dloss/dparam` into each
    /// parameter's gradient. The tape cannot be replayed afterwards.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, found shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.get_mut(*id).accumulate(&g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(g.data(), vb.data(), &mut da, m, n, k);
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(va.data(), g.data(), &mut db, m, k, n);
                    accumulate(&mut grads, *a, Tensor::new(va.shape().to_vec(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(vb.shape().to_vec(), db)?);
                }
                Op::Add { a, b, broadcast } => {
                    let db = if *broadcast { col_sums(&g) } else { g.clone() };
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::Mul { a, b, broadcast } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let cols = va.cols();
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, gv)| gv * vb.data()[if *broadcast { j % cols } else { j }])
                        .collect();
                    let prod = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(va.data()).map(|(gv, x)| gv * x).collect(),
                    )?;
                    let db = if *broadcast { col_sums(&prod) } else { prod };
                    accumulate(&mut grads, *a, Tensor::new(va.shape().to_vec(), da)?);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Exp(a) => accumulate(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * yv)),
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let s = *slope;
                    accumulate(&mut grads, *a, zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { s * gv }));
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)))
                }
                Op::Reciprocal(a) => {
                    accumulate(&mut grads, *a, zip_map(&g, y, |gv, yv| -gv * yv * yv))
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SumAll(a) => {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.data()[0]));
                }
                Op::MeanAll(a) => {
                    let va = self.value(*a);
                    let k = g.data()[0] / va.len() as f64;
                    accumulate(&mut grads, *a, Tensor::full(va.shape(), k));
                }
                Op::ColSum(a) => {
                    let va = self.value(*a);
                    let mut da = Tensor::zeros(va.shape());
                    for r in 0..va.rows() {
                        da.row_mut(r).copy_from_slice(g.data());
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let mut da = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        softmax_backward(y.row(r), g.row(r), da.row_mut(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SegmentSoftmax { a, offsets } => {
                    let mut da = vec![0.0; y.len()];
                    for w in offsets.windows(2) {
                        let r = w[0]..w[1];
                        softmax_backward(&y.data()[r.clone()], &g.data()[r.clone()], &mut da[r]);
                    }
                    accumulate(&mut grads, *a, Tensor::column(&da));
                }
                Op::Gather { a, idx } => {
                    let va = self.value(*a);
                    let mut da = Tensor::zeros(va.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, gv) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ScatterAdd { a, idx } => {
                    let va = self.value(*a);
                    let mut data = Vec::with_capacity(va.len());
                    for &i in idx.iter() {
                        data.extend_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, Tensor::new(va.shape().to_vec(), data)?);
                }
                Op::RowScale { a, s } => {
                    let (va, vs) = (self.value(*a), self.value(*s));
                    let mut da = g.clone();
                    let mut ds = vec![0.0; vs.rows()];
                    for (r, slot) in ds.iter_mut().enumerate() {
                        let k = vs.data()[r];
                        *slot = g.row(r).iter().zip(va.row(r)).map(|(gv, x)| gv * x).sum();
                        da.row_mut(r).iter_mut().for_each(|d| *d *= k);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *s, Tensor::column(&ds));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(start, w));
                        start += w;
                    }
                }
                Op::FavorMap { x, omega } => {
                    // dφ_ij/dx_i = φ_ij (ω_j − x_i)
                    let vx = self.value(*x);
                    let (n, d, m) = (vx.rows(), vx.cols(), omega.rows());
                    let gphi = zip_map(&g, y, |gv, yv| gv * yv);
                    let mut dx = vec![0.0; n * d];
                    matmul_into(gphi.data(), omega.data(), &mut dx, n, m, d);
                    for i in 0..n {
                        let s: f64 = gphi.row(i).iter().sum();
                        for (dv, xv) in dx[i * d..(i + 1) * d].iter_mut().zip(vx.row(i)) {
                            *dv -= s * xv;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vx.shape().to_vec(), dx)?);
                }
                Op::Bce { pred, labels } => {
                    let vp = self.value(*pred);
                    let k = g.data()[0] / labels.len() as f64;
                    let data = vp
                        .data()
                        .iter()
                        .zip(labels.iter())
                        .map(|(&yv, &c)| {
                            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&yv) {
                                0.0
                            } else {
                                k * (yv - c) / (yv * (1.0 - yv))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::new(vp.shape().to_vec(), data)?);
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map of equal shapes")
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, x) in out.iter_mut().zip(t.row(r)) {
            *o += x;
        }
    }
    Tensor::row_vector(&out)
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o += yv * (gv - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tape(x: f64) -> (Tape, Var) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(x));
        (tape, v)
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
        let b = tape.constant(Tensor::from_rows(&[[5.0, 6.0], [7.0, 8.0]]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);

        let r = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]));
        let col = tape.constant(Tensor::from_rows(&[[3.0], [4.0]]));
        let d = tape.matmul(r, col).unwrap();
        assert_eq!(tape.value(d).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert_eq!(err.class(), "dimension");
    }

    #[test]
    fn elementwise_definitions() {
        let (mut tape, x) = scalar_tape(0.0);
        let s = tape.elementwise(Elementwise::Sigmoid, x, None).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let n = tape.constant(Tensor::scalar(-2.0));
        let l = tape.elementwise(Elementwise::LeakyRelu(0.2), n, None).unwrap();
        assert!((tape.value(l).data()[0] + 0.4).abs() < 1e-15);
        assert!(tape.elementwise(Elementwise::Add, x, None).is_err());
    }

    #[test]
    fn broadcasting_is_row_only() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 2]));
        let row = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]));
        let col = tape.constant(Tensor::zeros(&[3, 1]));
        let out = tape.add(a, row).unwrap();
        assert_eq!(tape.value(out).row(2), &[1.0, 2.0]);
        assert_eq!(tape.add(a, col).unwrap_err().class(), "dimension");
    }

    #[test]
    fn softmax_rows_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[[2.5, 2.5, 2.5], [1.0, 2.0, 3.0]]));
        let s = tape.softmax_rows(a, None).unwrap();
        for v in tape.value(s).row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
        for (j, v) in tape.value(s).row(1).iter().enumerate() {
            assert!((v - ((j + 1) as f64).exp() / z).abs() < 1e-12);
        }

        let big = tape.constant(Tensor::from_rows(&[[1000.0, 1000.0]]));
        let s = tape.softmax_rows(big, None).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_mask() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[[1.0, 5.0, 2.0], [0.0, 0.0, 0.0]]));
        let mask = [true, false, true, false, false, false];
        assert!(matches!(
            tape.softmax_rows(a, Some(&mask)),
            Err(Error::EmptyNeighborhood { row: 1 })
        ));
        let mask = [true, false, true, false, true, false];
        let s = tape.softmax_rows(a, Some(&mask)).unwrap();
        let v = tape.value(s);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.row(1), &[0.0, 1.0, 0.0]);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn segment_softmax_matches_masked_dense_softmax() {
        let mut tape = Tape::new();
        let logits = [0.3, -1.2, 2.0, 0.7, 0.1];
        let col = tape.constant(Tensor::column(&logits));
        let offsets = Arc::new(vec![0, 2, 2, 5]);
        let s = tape.segment_softmax(col, offsets).unwrap();

        let dense = tape.constant(Tensor::from_rows(&[
            [0.3, -1.2, 0.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 0.7, 0.1],
        ]));
        let mask = [true, true, false, false, false, false, false, true, true, true];
        let d = tape.softmax_rows(dense, Some(&mask)).unwrap();
        let expect: Vec<f64> = vec![
            tape.value(d).get(0, 0),
            tape.value(d).get(0, 1),
            tape.value(d).get(1, 2),
            tape.value(d).get(1, 3),
            tape.value(d).get(1, 4),
        ];
        assert!(tape.value(s).data().iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let y = tape.mul(xv, xv).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.get(x).grad().data(), &[6.0]);
    }

    #[test]
    fn constant_loss_leaves_gradients_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[[1.0, 2.0]]));
        let mut tape = Tape::new();
        let _ = tape.param(&store, w);
        let c = tape.constant(Tensor::scalar(4.0));
        let loss = tape.scale(c, 2.0).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[[1.0, 2.0]]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        assert_eq!(tape.backward(wv, &mut store).unwrap_err().class(), "contract");
        let s = tape.sum(wv).unwrap();
        tape.backward(s, &mut store).unwrap();
        assert!(matches!(tape.backward(s, &mut store), Err(Error::StaleTape)));
        tape.reset();
        let wv = tape.param(&store, w);
        let s = tape.sum(wv).unwrap();
        tape.backward(s, &mut store).unwrap();
        // accumulation is additive across backward passes
        assert_eq!(store.get(w).grad().data(), &[2.0, 2.0]);
    }

    #[test]
    fn bce_values_and_label_contract() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::column(&[1.0]));
        let l = tape.bce(one, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] + (1.0f64 - 1e-7).ln()).abs() < 1e-15);

        let half = tape.constant(Tensor::column(&[0.5]));
        let l = tape.bce(half, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let p = tape.constant(Tensor::column(&[0.9, 0.1]));
        let l = tape.bce(p, &[1.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.10536).abs() < 1e-5);

        assert_eq!(tape.bce(p, &[1.0, 2.0]).unwrap_err().class(), "contract");
    }

    #[test]
    fn favor_features_of_zero_vector() {
        let mut tape = Tape::new();
        let omega = Arc::new(Tensor::from_rows(&[[0.3, -1.0], [2.0, 0.5], [-0.7, 0.1]]));
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        for stab in [Stabilizer::None, Stabilizer::PerRow, Stabilizer::Global] {
            let phi = tape.favor_features(x, omega.clone(), stab).unwrap();
            let v = tape.value(phi);
            let dot: f64 = v.row(0).iter().zip(v.row(1)).map(|(a, b)| a * b).sum();
            assert!((dot - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let (mut tape, x) = scalar_tape(1000.0);
        assert!(matches!(tape.exp(x), Err(Error::NonFinite("exp"))));
    }
}
