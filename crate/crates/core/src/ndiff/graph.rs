//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Rows of a
//! tensor are frequently *packed*: many independent sequences share one
//! matrix and the row ranges (segments) passed to [`Graph::attention`],
//! [`Graph::conv1d`] and the pooling ops keep them from interacting.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::gemm::{gemm, gemm_strided, MatRef};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Abs(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, rstd: Vec<f64> },
    Attention(AttentionCache),
    Conv1d { x: Var, w: Var, b: Var, seq_len: usize, kernel: usize, cols: Tensor },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<Range<usize>>),
    SegmentNorm(Var, Vec<Range<usize>>),
    SumAll(Var),
    MeanAll(Var),
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_segs: Vec<Range<usize>>,
    k_segs: Vec<Range<usize>>,
    /// Softmax weights, per segment then per head, each `lq × lk` row-major.
    probs: Vec<f64>,
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    node_grads: Vec<Option<Tensor>>,
    param_nodes: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a parameter, if it was reachable.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        let var = self.param_nodes.get(id.0).copied().flatten()?;
        self.node_grads[var.0].as_ref()
    }

    /// Gradient with respect to a variable created by [`Graph::variable`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.node_grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Recording of one forward pass.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node>,
    track: bool,
    backward_done: bool,
}

impl<'p> Graph<'p> {
    /// Graph that records gradients for parameters and variables.
    pub fn new(params: &'p ParamStore) -> Self {
        Self::build(Some(params), true)
    }

    /// Graph for forward evaluation only; [`Graph::backward`] is an error.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self::build(Some(params), false)
    }

    fn build(params: Option<&'p ParamStore>, track: bool) -> Self {
        Self { params, param_nodes: Vec::new(), nodes: Vec::new(), track, backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param node without store").value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad: needs_grad && self.track });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn ng_any(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.ng(v))
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Node bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_nodes.get(id.0) {
            return *v;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param, needs_grad: self.track });
        let var = Var(self.nodes.len() - 1);
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        self.param_nodes[id.0] = Some(var);
        var
    }

    fn dim_err(layer: &'static str, detail: alloc::string::String) -> Error {
        Error::Dimension { layer, detail }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Self::dim_err("matmul", format!("{:?} @ {:?}", ta.shape(), tb.shape())));
        }
        let out = ta.matmul(tb)?;
        let ng = self.ng_any(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, layer: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::dim_err(layer, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng_any(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng_any(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng_any(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `x + row`, with `row` (`1 × cols`) broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(Self::dim_err("add_row", format!("{:?} + {:?}", tx.shape(), tr.shape())));
        }
        let mut out = tx.clone();
        let r = tr.data();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        let ng = self.ng_any(&[x, row]);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    /// `x * col`, with `col` (`rows × 1`) broadcast over every column of `x`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(col));
        if tc.cols() != 1 || tc.rows() != tx.rows() {
            return Err(Self::dim_err("mul_col", format!("{:?} * {:?}", tx.shape(), tc.shape())));
        }
        let mut out = tx.clone();
        for i in 0..out.rows() {
            let s = tc.data()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o *= s);
        }
        let ng = self.ng_any(&[x, col]);
        Ok(self.push(out, Op::MulCol(x, col), ng))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(out, Op::Affine(x, scale), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    // ---- pointwise ------------------------------------------------------

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()));
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let ng = self.ng(x);
        self.push(out, Op::Square(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        let ng = self.ng(x);
        self.push(out, Op::Abs(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        let ng = self.ng(x);
        self.push(out, Op::Exp(x), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.ng(x);
        self.push(out, Op::LogSoftmaxRows(x), ng)
    }

    // ---- normalization / attention / convolution ------------------------

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        if self.shape(gamma) != [1, cols] || self.shape(beta) != [1, cols] {
            return Err(Self::dim_err(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", tx.shape(), self.shape(gamma), self.shape(beta)),
            ));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = tx.clone();
        let mut out = tx.clone();
        let mut rstd = Vec::with_capacity(tx.rows());
        for i in 0..tx.rows() {
            let row = xhat.row_mut(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            rstd.push(r);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = xhat.get(i, j) * g[j] + b[j];
            }
        }
        let ng = self.ng_any(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng))
    }

    /// Multi-head scaled dot-product attention on pre-projected `q`, `k`, `v`.
    ///
    /// Query rows in `q_segs[i]` attend only to key rows in `k_segs[i]`.
    /// Query segments must be disjoint; key segments may be shared. Query
    /// rows outside every segment produce zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        q_segs: Vec<Range<usize>>,
        k_segs: Vec<Range<usize>>,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Self::dim_err("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(Self::dim_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", tq.shape(), tk.shape(), tv.shape()),
            ));
        }
        if q_segs.len() != k_segs.len() {
            return Err(Self::dim_err("attention", format!("{} query vs {} key segments", q_segs.len(), k_segs.len())));
        }
        for (qs, ks) in q_segs.iter().zip(&k_segs) {
            if qs.end > tq.rows() || ks.end > tk.rows() || qs.start > qs.end || ks.start > ks.end {
                return Err(Self::dim_err("attention", format!("segment {qs:?}/{ks:?} out of bounds")));
            }
        }
        let dk = d / heads;
        let inv = 1.0 / (dk as f64).sqrt();
        let mut out = Tensor::zeros(tq.rows(), d);
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for (qs, ks) in q_segs.iter().zip(&k_segs) {
            let (lq, lk) = (qs.len(), ks.len());
            if lq == 0 {
                continue;
            }
            let qd = &tq.data()[qs.start * d..];
            let kd = &tk.data()[ks.start * d..];
            let vd = &tv.data()[ks.start * d..];
            for h in 0..heads {
                if lk == 0 {
                    continue;
                }
                scores.clear();
                scores.resize(lq * lk, 0.0);
                gemm(
                    MatRef::column_block(qd, lq, d, h * dk, dk, false),
                    MatRef::column_block(kd, lk, d, h * dk, dk, true),
                    &mut scores,
                    0.0,
                );
                for row in scores.chunks_mut(lk) {
                    row.iter_mut().for_each(|s| *s *= inv);
                    softmax_in_place(row);
                }
                gemm_strided(
                    MatRef::new(&scores, lq, lk, false),
                    MatRef::column_block(vd, lk, d, h * dk, dk, false),
                    &mut out.data_mut()[qs.start * d..],
                    d,
                    h * dk,
                    0.0,
                );
                probs.extend_from_slice(&scores);
            }
        }
        let ng = self.ng_any(&[q, k, v]);
        let cache = AttentionCache { q, k, v, heads, q_segs, k_segs, probs: if ng { probs } else { Vec::new() } };
        Ok(self.push(out, Op::Attention(cache), ng))
    }

    /// Temporal 1-D convolution with zero "same" padding.
    ///
    /// `x` packs `rows / seq_len` sequences of `seq_len` steps; `w` is
    /// `(kernel * c_in) × c_out` with tap-major rows; `b` is `1 × c_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, seq_len: usize, kernel: usize) -> Result<Var> {
        let tx = self.value(x);
        let (n, cin) = (tx.rows(), tx.cols());
        let cout = self.shape(w)[1];
        if kernel % 2 == 0
            || seq_len == 0
            || n % seq_len != 0
            || self.shape(w)[0] != kernel * cin
            || self.shape(b) != [1, cout]
        {
            return Err(Self::dim_err(
                "conv1d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}, seq_len {seq_len}, kernel {kernel}",
                    tx.shape(),
                    self.shape(w),
                    self.shape(b)
                ),
            ));
        }
        let pad = kernel / 2;
        let mut cols = Tensor::zeros(n, kernel * cin);
        for r in 0..n {
            let pos = r % seq_len;
            for j in 0..kernel {
                let src = pos as isize + j as isize - pad as isize;
                if src < 0 || src >= seq_len as isize {
                    continue;
                }
                let src_row = r - pos + src as usize;
                cols.row_mut(r)[j * cin..(j + 1) * cin].copy_from_slice(tx.row(src_row));
            }
        }
        let mut out = cols.matmul(self.value(w))?;
        let bias = self.value(b).data();
        for r in 0..n {
            out.row_mut(r).iter_mut().zip(bias).for_each(|(o, bb)| *o += bb);
        }
        let ng = self.ng_any(&[x, w, b]);
        Ok(self.push(out, Op::Conv1d { x, w, b, seq_len, kernel, cols }, ng))
    }

    // ---- structural -----------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p)[1]).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Self::dim_err("concat_rows", format!("{} vs {} columns", t.cols(), cols)));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = self.ng_any(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p)[0]).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(Self::dim_err("concat_cols", format!("{} vs {} rows", s[0], rows)));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + t.cols()].copy_from_slice(t.row(r));
            }
            c0 += t.cols();
        }
        let ng = self.ng_any(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let t = self.value(x);
        if rows.end > t.rows() || rows.start > rows.end {
            return Err(Self::dim_err("slice_rows", format!("{rows:?} of {:?}", t.shape())));
        }
        let out = Tensor::from_vec(rows.len(), t.cols(), t.data()[rows.start * t.cols()..rows.end * t.cols()].to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceRows(x, rows.start), ng))
    }

    pub fn slice_cols(&mut self, x: Var, cols: Range<usize>) -> Result<Var> {
        let t = self.value(x);
        if cols.end > t.cols() || cols.start > cols.end {
            return Err(Self::dim_err("slice_cols", format!("{cols:?} of {:?}", t.shape())));
        }
        let out = Tensor::from_fn(t.rows(), cols.len(), |r, c| t.get(r, cols.start + c));
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols(x, cols.start), ng))
    }

    /// Row `i` of the result is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Self::dim_err("gather_rows", format!("row {bad} of {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in &idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(idx.len(), t.cols(), data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::GatherRows(x, idx), ng))
    }

    /// Mean of the rows of each segment; empty segments give zeros.
    pub fn segment_mean(&mut self, x: Var, segs: Vec<Range<usize>>) -> Result<Var> {
        let t = self.value(x);
        let mut out = Tensor::zeros(segs.len(), t.cols());
        for (s, seg) in segs.iter().enumerate() {
            if seg.end > t.rows() {
                return Err(Self::dim_err("segment_mean", format!("{seg:?} of {:?}", t.shape())));
            }
            if seg.is_empty() {
                continue;
            }
            let inv = 1.0 / seg.len() as f64;
            for r in seg.clone() {
                for (o, v) in out.row_mut(s).iter_mut().zip(t.row(r)) {
                    *o += v * inv;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::SegmentMean(x, segs), ng))
    }

    /// Euclidean norm over all entries of each row segment (`segments × 1`).
    pub fn segment_norm(&mut self, x: Var, segs: Vec<Range<usize>>) -> Result<Var> {
        let t = self.value(x);
        let mut out = Tensor::zeros(segs.len(), 1);
        for (s, seg) in segs.iter().enumerate() {
            if seg.end > t.rows() {
                return Err(Self::dim_err("segment_norm", format!("{seg:?} of {:?}", t.shape())));
            }
            let ss: f64 = t.data()[seg.start * t.cols()..seg.end * t.cols()].iter().map(|v| v * v).sum();
            out.set(s, 0, ss.sqrt());
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::SegmentNorm(x, segs), ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(out, Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let ng = self.ng(x);
        self.push(out, Op::MeanAll(x), ng)
    }

    // ---- backward -------------------------------------------------------

    /// Propagates d(loss)/d(node) to every reachable node.
    ///
    /// `loss` must be a finite `1 × 1` tensor. A graph can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.track {
            return Err(Error::Usage("backward on an inference graph".into()));
        }
        if self.backward_done {
            return Err(Error::Usage("backward called twice on the same graph".into()));
        }
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::Usage(format!("loss must be scalar, got {:?}", lt.shape())));
        }
        if !lt.item().is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lt.item())));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { node_grads: grads, param_nodes: self.param_nodes.clone() })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.value(Var(i));
        let mut acc = |v: Var, t: Tensor| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(
                        MatRef::new(g.data(), g.rows(), g.cols(), false),
                        MatRef::new(tb.data(), tb.rows(), tb.cols(), true),
                        da.data_mut(),
                        0.0,
                    );
                    acc(*a, da);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(
                        MatRef::new(ta.data(), ta.rows(), ta.cols(), true),
                        MatRef::new(g.data(), g.rows(), g.cols(), false),
                        db.data_mut(),
                        0.0,
                    );
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(tb, |x, y| x * y));
                acc(*b, g.zip_map(ta, |x, y| x * y));
            }
            Op::AddRow(x, r) => {
                acc(*x, g.clone());
                if self.ng(*r) {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for row in 0..g.rows() {
                        dr.data_mut().iter_mut().zip(g.row(row)).for_each(|(d, v)| *d += v);
                    }
                    acc(*r, dr);
                }
            }
            Op::MulCol(x, c) => {
                let (tx, tc) = (self.value(*x), self.value(*c));
                if self.ng(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let s = tc.data()[r];
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    acc(*x, dx);
                }
                if self.ng(*c) {
                    let dc = Tensor::from_fn(tc.rows(), 1, |r, _| {
                        g.row(r).iter().zip(tx.row(r)).map(|(a, b)| a * b).sum()
                    });
                    acc(*c, dc);
                }
            }
            Op::Affine(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Gelu(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, v| {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let th = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    gv * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                }));
            }
            Op::Sigmoid(x) => acc(*x, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |gv, v| if v > 0.0 { gv } else { 0.0 })),
            Op::Square(x) => acc(*x, g.zip_map(self.value(*x), |gv, v| 2.0 * v * gv)),
            Op::Abs(x) => acc(*x, g.zip_map(self.value(*x), |gv, v| gv * sign(v))),
            Op::Exp(x) => acc(*x, g.zip_map(out, |gv, y| gv * y)),
            Op::SoftmaxRows(x) => {
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let total: f64 = gr.iter().sum();
                    for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = gr[j] - yr[j].exp() * total;
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma).data();
                let cols = g.cols();
                if self.ng(*gamma) {
                    let mut dg = Tensor::zeros(1, cols);
                    for r in 0..g.rows() {
                        for j in 0..cols {
                            dg.data_mut()[j] += g.get(r, j) * xhat.get(r, j);
                        }
                    }
                    acc(*gamma, dg);
                }
                if self.ng(*beta) {
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..g.rows() {
                        db.data_mut().iter_mut().zip(g.row(r)).for_each(|(d, v)| *d += v);
                    }
                    acc(*beta, db);
                }
                if self.ng(*x) {
                    let mut dx = Tensor::zeros(g.rows(), cols);
                    let n = cols as f64;
                    for r in 0..g.rows() {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..cols {
                            let dxh = gr[j] * gam[j];
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 /= n;
                        m2 /= n;
                        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = rstd[r] * (gr[j] * gam[j] - m1 - xr[j] * m2);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Attention(c) => {
                let (dq, dk, dv) = self.attention_backward(c, g);
                if let Some(t) = dq {
                    acc(c.q, t);
                }
                if let Some(t) = dk {
                    acc(c.k, t);
                }
                if let Some(t) = dv {
                    acc(c.v, t);
                }
            }
            Op::Conv1d { x, w, b, seq_len, kernel, cols } => {
                let tw = self.value(*w);
                if self.ng(*w) {
                    let mut dw = Tensor::zeros(tw.rows(), tw.cols());
                    gemm(
                        MatRef::new(cols.data(), cols.rows(), cols.cols(), true),
                        MatRef::new(g.data(), g.rows(), g.cols(), false),
                        dw.data_mut(),
                        0.0,
                    );
                    acc(*w, dw);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        db.data_mut().iter_mut().zip(g.row(r)).for_each(|(d, v)| *d += v);
                    }
                    acc(*b, db);
                }
                if self.ng(*x) {
                    let tx = self.value(*x);
                    let cin = tx.cols();
                    let mut dcols = Tensor::zeros(cols.rows(), cols.cols());
                    gemm(
                        MatRef::new(g.data(), g.rows(), g.cols(), false),
                        MatRef::new(tw.data(), tw.rows(), tw.cols(), true),
                        dcols.data_mut(),
                        0.0,
                    );
                    let pad = kernel / 2;
                    let mut dx = Tensor::zeros(tx.rows(), cin);
                    for r in 0..tx.rows() {
                        let pos = r % seq_len;
                        for j in 0..*kernel {
                            let src = pos as isize + j as isize - pad as isize;
                            if src < 0 || src >= *seq_len as isize {
                                continue;
                            }
                            let src_row = r - pos + src as usize;
                            let from = &dcols.row(r)[j * cin..(j + 1) * cin];
                            dx.row_mut(src_row).iter_mut().zip(from).for_each(|(d, v)| *d += v);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let rows = self.shape(p)[0];
                    if self.ng(p) {
                        let data = g.data()[r0 * g.cols()..(r0 + rows) * g.cols()].to_vec();
                        acc(p, Tensor::from_vec(rows, g.cols(), data).expect("shape"));
                    }
                    r0 += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let cols = self.shape(p)[1];
                    if self.ng(p) {
                        acc(p, Tensor::from_fn(g.rows(), cols, |r, c| g.get(r, c0 + c)));
                    }
                    c0 += cols;
                }
            }
            Op::SliceRows(x, start) => {
                let [rows, cols] = self.shape(*x);
                let mut dx = Tensor::zeros(rows, cols);
                dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(*x, dx);
            }
            Op::SliceCols(x, start) => {
                let [rows, cols] = self.shape(*x);
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    dx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::GatherRows(x, idx) => {
                let [rows, cols] = self.shape(*x);
                let mut dx = Tensor::zeros(rows, cols);
                for (i, &src) in idx.iter().enumerate() {
                    dx.row_mut(src).iter_mut().zip(g.row(i)).for_each(|(d, v)| *d += v);
                }
                acc(*x, dx);
            }
            Op::SegmentMean(x, segs) => {
                let [rows, cols] = self.shape(*x);
                let mut dx = Tensor::zeros(rows, cols);
                for (s, seg) in segs.iter().enumerate() {
                    if seg.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / seg.len() as f64;
                    for r in seg.clone() {
                        dx.row_mut(r).iter_mut().zip(g.row(s)).for_each(|(d, v)| *d += v * inv);
                    }
                }
                acc(*x, dx);
            }
            Op::SegmentNorm(x, segs) => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let mut dx = Tensor::zeros(tx.rows(), cols);
                for (s, seg) in segs.iter().enumerate() {
                    let norm = out.get(s, 0);
                    if norm == 0.0 {
                        continue;
                    }
                    let k = g.get(s, 0) / norm;
                    let range = seg.start * cols..seg.end * cols;
                    dx.data_mut()[range.clone()]
                        .iter_mut()
                        .zip(&tx.data()[range])
                        .for_each(|(d, v)| *d += k * v);
                }
                acc(*x, dx);
            }
            Op::SumAll(x) => {
                let [r, c] = self.shape(*x);
                acc(*x, Tensor::filled(r, c, g.item()));
            }
            Op::MeanAll(x) => {
                let [r, c] = self.shape(*x);
                acc(*x, Tensor::filled(r, c, g.item() / (r * c).max(1) as f64));
            }
        }
    }

    fn attention_backward(&self, c: &AttentionCache, g: &Tensor) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
        let (tq, tk, tv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let d = tq.cols();
        let dk = d / c.heads;
        let inv = 1.0 / (dk as f64).sqrt();
        let mut dq = Tensor::zeros(tq.rows(), d);
        let mut dkt = Tensor::zeros(tk.rows(), d);
        let mut dvt = Tensor::zeros(tv.rows(), d);
        let mut offset = 0;
        let mut dp = Vec::new();
        for (qs, ks) in c.q_segs.iter().zip(&c.k_segs) {
            let (lq, lk) = (qs.len(), ks.len());
            if lq == 0 || lk == 0 {
                continue;
            }
            let qd = &tq.data()[qs.start * d..];
            let kd = &tk.data()[ks.start * d..];
            let vd = &tv.data()[ks.start * d..];
            let gd = &g.data()[qs.start * d..];
            for h in 0..c.heads {
                let p = &c.probs[offset..offset + lq * lk];
                offset += lq * lk;
                // dV_seg += P^T dO
                gemm_strided(
                    MatRef::new(p, lq, lk, true),
                    MatRef::column_block(gd, lq, d, h * dk, dk, false),
                    &mut dvt.data_mut()[ks.start * d..],
                    d,
                    h * dk,
                    1.0,
                );
                // dP = dO V^T
                dp.clear();
                dp.resize(lq * lk, 0.0);
                gemm(
                    MatRef::column_block(gd, lq, d, h * dk, dk, false),
                    MatRef::column_block(vd, lk, d, h * dk, dk, true),
                    &mut dp,
                    0.0,
                );
                // dS = P * (dP - rowsum(dP * P)), pre-scaled by 1/sqrt(dk)
                for (dpr, pr) in dp.chunks_mut(lk).zip(p.chunks(lk)) {
                    let dot: f64 = dpr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (x, &pp) in dpr.iter_mut().zip(pr) {
                        *x = pp * (*x - dot) * inv;
                    }
                }
                gemm_strided(
                    MatRef::new(&dp, lq, lk, false),
                    MatRef::column_block(kd, lk, d, h * dk, dk, false),
                    &mut dq.data_mut()[qs.start * d..],
                    d,
                    h * dk,
                    1.0,
                );
                gemm_strided(
                    MatRef::new(&dp, lq, lk, true),
                    MatRef::column_block(qd, lq, d, h * dk, dk, false),
                    &mut dkt.data_mut()[ks.start * d..],
                    d,
                    h * dk,
                    1.0,
                );
            }
        }
        (
            self.ng(c.q).then_some(dq),
            self.ng(c.k).then_some(dkt),
            self.ng(c.v).then_some(dvt),
        )
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
