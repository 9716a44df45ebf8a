//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Values are rank-2 [`Matrix`] buffers; vectors are stored as `n x 1`. Batched
//! sequences are folded into the column axis as `col = b * seq_len + t`, so a
//! batch of `B` sequences of length `T` with `C` channels is a `C x (B * T)`
//! matrix and ops that care about time take `seq_len` explicitly.
//!
//! A [`Graph`] is a tape: every op appends a node holding its output value, and
//! [`Graph::backward`] walks the tape in reverse. Parameters enter the graph
//! through [`Graph::param`], which remembers the [`ParamId`] so gradients can be
//! routed back to a [`ParamStore`].

mod checkpoint;
mod conv;
mod gemm;
pub mod gradcheck;
mod lstm;
mod optim;
mod params;

use thiserror::Error;

use crate::matrix::Matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Precision, CHECKPOINT_VERSION};
pub use gemm::gemm;
pub use optim::{clip_global_norm, lr_schedule, Adam, AdamState};
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("index {index} out of range for {op} with {len} entries")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> AutogradError {
    AutogradError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Square,
    Exp,
    /// `4 artanh(x)` with `x` clamped to `(-1 + 1e-6, 1 - 1e-6)`; zero gradient
    /// where the clamp is active.
    Atanh4,
}

/// Cross-entropy target that leaves its column out of the loss.
pub const IGNORE_TARGET: usize = usize::MAX;

const ATANH_CLAMP: f64 = 1.0 - 1e-6;

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Square => x * x,
            Unary::Exp => x.exp(),
            Unary::Atanh4 => 4.0 * x.clamp(-ATANH_CLAMP, ATANH_CLAMP).atanh(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Exp => y,
            Unary::Atanh4 => {
                if x.abs() >= ATANH_CLAMP {
                    0.0
                } else {
                    4.0 / (1.0 - x * x)
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Gated(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Shift { x: Var, offset: isize, seq_len: usize },
    Film { x: Var, gamma: Var, beta: Var, seq_len: usize },
    Gather { table: Var, ids: Vec<usize> },
    Lstm(Box<lstm::LstmNode>),
    DilatedConv { x: Var, w: Var, dilation: usize, seq_len: usize },
    TransposedConv(conv::TransposedConvNode),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), AutogradError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(shape_err(
            op,
            format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    Ok(())
}

fn check_seq(op: &'static str, cols: usize, seq_len: usize) -> Result<usize, AutogradError> {
    if seq_len == 0 || cols % seq_len != 0 {
        return Err(shape_err(op, format!("{cols} columns is not a multiple of sequence length {seq_len}")));
    }
    Ok(cols / seq_len)
}

/// Moves column blocks of length `seq_len` by `offset` steps; vacated steps are zero.
fn shift_cols(x: &Matrix, offset: isize, seq_len: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let batches = x.cols() / seq_len;
    let t = seq_len as isize;
    for r in 0..x.rows() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for b in 0..batches {
            let base = b * seq_len;
            let lo = offset.max(0);
            let hi = (t + offset).min(t);
            if lo < hi {
                let (lo, hi) = (lo as usize, hi as usize);
                let src_lo = (lo as isize - offset) as usize;
                dst[base + lo..base + hi].copy_from_slice(&src[base + src_lo..base + src_lo + (hi - lo)]);
            }
        }
    }
    out
}

fn add_into(acc: &mut Matrix, g: &Matrix) {
    for (a, &b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += b;
    }
}

fn row_sums(m: &Matrix) -> Matrix {
    Matrix::from_vec(m.rows(), 1, (0..m.rows()).map(|r| m.row(r).iter().sum()).collect())
}

fn matmul_values(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let n = if tb { b.rows() } else { b.cols() };
    let mut out = Matrix::zeros(m, n);
    gemm(m, k, n, a.as_slice(), ta, b.as_slice(), tb, out.as_mut_slice(), false);
    out
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are still computed for it.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copies a parameter's value into the graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{}x{} times {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let out = matmul_values(av, false, bv, false);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds an `m x 1` bias to every column of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutogradError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.cols() != 1 || bv.rows() != xv.rows() {
            return Err(shape_err(
                "add_bias",
                format!("bias {}x{} for {} rows", bv.rows(), bv.cols(), xv.rows()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let b = bv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// Time-distributed fully connected layer: `w * x + b` per column.
    pub fn linear(&mut self, w: Var, x: Var, bias: Var) -> Result<Var, AutogradError> {
        let y = self.matmul(w, x)?;
        self.add_bias(y, bias)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op, av, bv)?;
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Matrix::from_vec(av.rows(), av.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let out = self.value(x).map(|v| f.apply(v));
        self.push(out, Op::Unary(x, f))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    /// WaveNet gate: for `x = [a; b]` with `2R` rows, returns `tanh(a) * sigmoid(b)`.
    pub fn gated(&mut self, x: Var) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if xv.rows() % 2 != 0 {
            return Err(shape_err("gated", format!("{} rows is odd", xv.rows())));
        }
        let half = xv.rows() / 2;
        let n = xv.cols();
        let mut out = Matrix::zeros(half, n);
        {
            let src = xv.as_slice();
            let dst = out.as_mut_slice();
            for i in 0..half * n {
                dst[i] = src[i].tanh() * sigmoid(src[half * n + i]);
            }
        }
        Ok(self.push(out, Op::Gated(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).as_slice().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.as_slice().len().max(1) as f64;
        let s = v.as_slice().iter().sum::<f64>() / n;
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::MeanAll(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutogradError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        if mats.is_empty() {
            return Err(shape_err("concat_rows", "no inputs"));
        }
        let cols = mats[0].cols();
        if mats.iter().any(|m| m.cols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ"));
        }
        let out = Matrix::vstack(&mats);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {}", start + len, xv.rows())));
        }
        let out = xv.slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    /// Per-sequence time shift: `out[:, t] = x[:, t - offset]`, zero outside the sequence.
    pub fn shift(&mut self, x: Var, offset: isize, seq_len: usize) -> Result<Var, AutogradError> {
        check_seq("shift", self.value(x).cols(), seq_len)?;
        let out = shift_cols(self.value(x), offset, seq_len);
        Ok(self.push(out, Op::Shift { x, offset, seq_len }))
    }

    /// Feature-wise affine modulation `gamma[:, b] * x[:, b*T + t] + beta[:, b]`.
    ///
    /// `x` is `C x (B * seq_len)`, `gamma` and `beta` are `C x B`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var, seq_len: usize) -> Result<Var, AutogradError> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let batches = check_seq("film", xv.cols(), seq_len)?;
        same_shape("film", gv, bv)?;
        if gv.rows() != xv.rows() || gv.cols() != batches {
            return Err(shape_err(
                "film",
                format!(
                    "modulation {}x{} for features {}x{} with sequence length {seq_len}",
                    gv.rows(),
                    gv.cols(),
                    xv.rows(),
                    xv.cols()
                ),
            ));
        }
        let mut out = xv.clone();
        for c in 0..out.rows() {
            let row = out.row_mut(c);
            for b in 0..batches {
                let (g, s) = (gv.get(c, b), bv.get(c, b));
                row[b * seq_len..(b + 1) * seq_len].iter_mut().for_each(|v| *v = g * *v + s);
            }
        }
        Ok(self.push(out, Op::Film { x, gamma, beta, seq_len }))
    }

    /// Column `j` of the output is row `ids[j]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutogradError> {
        let tv = self.value(table);
        let width = tv.cols();
        let mut out = Matrix::zeros(width, ids.len());
        for (j, &id) in ids.iter().enumerate() {
            if id >= tv.rows() {
                return Err(AutogradError::Index {
                    op: "gather",
                    index: id,
                    len: tv.rows(),
                });
            }
            for (d, &v) in tv.row(id).iter().enumerate() {
                out.set(d, j, v);
            }
        }
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Single-direction LSTM over each sequence. Gate order in the stacked
    /// weights is input, forget, cell candidate, output. With `reverse` the
    /// sequence is processed from its last step and the output keeps the
    /// original time order.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        seq_len: usize,
        reverse: bool,
    ) -> Result<Var, AutogradError> {
        let (out, node) = lstm::forward(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(bias),
            [x, w_ih, w_hh, bias],
            seq_len,
            reverse,
        )?;
        Ok(self.push(out, Op::Lstm(Box::new(node))))
    }

    /// Kernel-2 causal convolution `y[:, t] = w0 x[:, t - d] + w1 x[:, t]` with
    /// left zero padding. `w = [w0; w1]` is `2 * C_out x C_in`.
    pub fn dilated_conv(&mut self, x: Var, w: Var, dilation: usize, seq_len: usize) -> Result<Var, AutogradError> {
        let (xv, wv) = (self.value(x), self.value(w));
        check_seq("dilated_conv", xv.cols(), seq_len)?;
        if wv.cols() != xv.rows() || wv.rows() % 2 != 0 || dilation == 0 {
            return Err(shape_err(
                "dilated_conv",
                format!("weights {}x{}, input {} rows, dilation {dilation}", wv.rows(), wv.cols(), xv.rows()),
            ));
        }
        let out = conv::dilated_forward(xv, wv, dilation, seq_len);
        Ok(self.push(out, Op::DilatedConv { x, w, dilation, seq_len }))
    }

    /// 1-D transposed convolution with `window = kernel`, cropped so each
    /// sequence of length `T` becomes exactly `T * stride`. `w` is
    /// `kernel * C_out x C_in` (row `k * C_out + c`), `bias` is `C_out x 1`.
    pub fn transposed_conv(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        kernel: usize,
        seq_len: usize,
    ) -> Result<Var, AutogradError> {
        let (out, node) = conv::transposed_forward(
            self.value(x),
            self.value(w),
            self.value(bias),
            [x, w, bias],
            stride,
            kernel,
            seq_len,
        )?;
        Ok(self.push(out, Op::TransposedConv(node)))
    }

    /// Mean softmax cross-entropy of `V x N` logits against `N` class targets,
    /// averaged over the columns whose target is not [`IGNORE_TARGET`].
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutogradError> {
        let lv = self.value(logits);
        if lv.cols() != targets.len() {
            return Err(shape_err("cross_entropy", format!("{} columns, {} targets", lv.cols(), targets.len())));
        }
        let (v, n) = (lv.rows(), lv.cols());
        let mut probs = Matrix::zeros(v, n);
        let mut total = 0.0;
        let mut scored = 0usize;
        let mut col = vec![0.0; v];
        for (j, &target) in targets.iter().enumerate() {
            if target == IGNORE_TARGET {
                continue;
            }
            scored += 1;
            if target >= v {
                return Err(AutogradError::Index {
                    op: "cross_entropy",
                    index: target,
                    len: v,
                });
            }
            for (r, c) in col.iter_mut().enumerate() {
                *c = lv.get(r, j);
            }
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|&c| (c - max).exp()).sum();
            let log_z = max + z.ln();
            total += log_z - col[target];
            for (r, &c) in col.iter().enumerate() {
                probs.set(r, j, (c - log_z).exp());
            }
        }
        let loss = total / scored.max(1) as f64;
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass seeded with `d root = 1` for a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut seed = Matrix::zeros(self.value(root).rows(), self.value(root).cols());
        seed.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        self.backward_with(root, seed)
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, root: Var, seed: Matrix) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => add_into(existing, &d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, matmul_values(g, false, bv, true));
                acc(*b, matmul_values(av, true, g, false));
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                acc(*b, row_sums(g));
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
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.as_slice().iter().zip(bv.as_slice()).map(|(&d, &y)| d * y).collect();
                let db = g.as_slice().iter().zip(av.as_slice()).map(|(&d, &x)| d * x).collect();
                acc(*a, Matrix::from_vec(g.rows(), g.cols(), da));
                acc(*b, Matrix::from_vec(g.rows(), g.cols(), db));
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Unary(x, f) => {
                let xv = self.value(*x);
                let d = g
                    .as_slice()
                    .iter()
                    .zip(xv.as_slice())
                    .zip(node.value.as_slice())
                    .map(|((&d, &xi), &yi)| d * f.derivative(xi, yi))
                    .collect();
                acc(*x, Matrix::from_vec(g.rows(), g.cols(), d));
            }
            Op::Gated(x) => {
                let xv = self.value(*x);
                let half = xv.rows() / 2;
                let n = xv.cols();
                let mut d = Matrix::zeros(xv.rows(), n);
                {
                    let src = xv.as_slice();
                    let gs = g.as_slice();
                    let ds = d.as_mut_slice();
                    for k in 0..half * n {
                        let t = src[k].tanh();
                        let s = sigmoid(src[half * n + k]);
                        ds[k] = gs[k] * s * (1.0 - t * t);
                        ds[half * n + k] = gs[k] * t * s * (1.0 - s);
                    }
                }
                acc(*x, d);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.get(0, 0)));
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let n = xv.as_slice().len().max(1) as f64;
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.get(0, 0) / n));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    acc(p, g.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*x, d);
            }
            Op::Shift { x, offset, seq_len } => acc(*x, shift_cols(g, -offset, *seq_len)),
            Op::Film { x, gamma, beta, seq_len } => {
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let batches = gv.cols();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                let mut dgamma = Matrix::zeros(gv.rows(), batches);
                let mut dbeta = Matrix::zeros(gv.rows(), batches);
                for c in 0..xv.rows() {
                    for b in 0..batches {
                        let range = b * seq_len..(b + 1) * seq_len;
                        let gam = gv.get(c, b);
                        let (mut sg, mut sb) = (0.0, 0.0);
                        for ((&d, &xi), dxi) in g.row(c)[range.clone()]
                            .iter()
                            .zip(&xv.row(c)[range.clone()])
                            .zip(&mut dx.row_mut(c)[range.clone()])
                        {
                            sg += d * xi;
                            sb += d;
                            *dxi = d * gam;
                        }
                        dgamma.set(c, b, sg);
                        dbeta.set(c, b, sb);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut d = Matrix::zeros(tv.rows(), tv.cols());
                for (j, &id) in ids.iter().enumerate() {
                    for r in 0..g.rows() {
                        let cur = d.get(id, r);
                        d.set(id, r, cur + g.get(r, j));
                    }
                }
                acc(*table, d);
            }
            Op::Lstm(node) => {
                let [x, w_ih, w_hh, bias] = node.inputs;
                let (dx, dw_ih, dw_hh, db) = lstm::backward(node, self.value(x), self.value(w_ih), self.value(w_hh), g);
                acc(x, dx);
                acc(w_ih, dw_ih);
                acc(w_hh, dw_hh);
                acc(bias, db);
            }
            Op::DilatedConv { x, w, dilation, seq_len } => {
                let (dx, dw) = conv::dilated_backward(self.value(*x), self.value(*w), g, *dilation, *seq_len);
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::TransposedConv(tc) => {
                let [x, w, bias] = tc.inputs;
                let (dx, dw, db) = conv::transposed_backward(tc, self.value(x), self.value(w), g);
                acc(x, dx);
                acc(w, dw);
                acc(bias, db);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.iter().filter(|&&t| t != IGNORE_TARGET).count().max(1) as f64;
                let scale = g.get(0, 0) / n;
                let mut d = probs.clone();
                for (j, &t) in targets.iter().enumerate() {
                    if t != IGNORE_TARGET {
                        d.set(t, j, d.get(t, j) - 1.0);
                    }
                }
                d.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
                acc(*logits, d);
            }
        }
    }

    /// Sums gradients of every parameter node, per parameter.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.grads[i] {
                    out.accumulate(id, g);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
