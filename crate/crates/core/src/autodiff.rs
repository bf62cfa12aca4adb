//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Everything is a 2-D matrix:
//! vectors are `1×n` rows and scalars are `1×1`.
//!
//! The op set is deliberately small. Attention, normalization and the loss
//! terms are all composed from these primitives so a single finite-difference
//! check covers every model variant.

use std::ops::{Deref, DerefMut};

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Elu1(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    CausalMask(Var),
    RowSum(Var),
    DivCol(Var, Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    RepeatRows(Var),
    BlockDot(Var, Var, usize),
    BlockMix(Var, Var, usize),
    Sum(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Scalar `elu(x) + 1`.
#[inline]
pub fn elu1(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise layer normalization; returns `(xhat, 1/std)` alongside the output.
pub fn layer_norm_rows(
    x: &Array2<f64>,
    gain: &Array2<f64>,
    bias: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let cols = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / cols;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / cols;
        *istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let r = *istd;
        row.mapv_inplace(|v| v * r);
    }
    let out = &xhat * gain + bias;
    (out, xhat, inv_std)
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn elu1(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(elu1);
        let rg = self.rg(a);
        self.push(value, Op::Elu1(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (value, xhat, inv_std) =
            layer_norm_rows(self.value(x), self.value(gain), self.value(bias));
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Zeroes entries strictly above the diagonal.
    pub fn causal_mask(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        mask_upper(&mut value);
        let rg = self.rg(a);
        self.push(value, Op::CausalMask(a), rg)
    }

    /// `n×m → n×1`
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Divides each row of `a` by the matching entry of the `n×1` column.
    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let value = self.value(a) / self.value(col);
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::DivCol(a, col), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let value = self
            .value(a)
            .slice(s![.., start..start + width])
            .to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row lookup; indices may repeat.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a);
        self.push(value, Op::Gather(a, rows.to_vec()), rg)
    }

    /// Stacks `times` copies of `a` vertically.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let v = self.value(a);
        let views: Vec<_> = (0..times).map(|_| v.view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("non-empty repeat");
        let rg = self.rg(a);
        self.push(value, Op::RepeatRows(a), rg)
    }

    /// Per-row dot products against a row-grouped memory.
    ///
    /// `q` is `T×d`, `k` is `(T·m)×d`; output `[t, i] = q_t · k_{t·m+i}`.
    pub fn block_dot(&mut self, q: Var, k: Var, m: usize) -> Var {
        let qv = self.value(q);
        let kv = self.value(k);
        let t = qv.nrows();
        debug_assert_eq!(kv.nrows(), t * m);
        let mut value = Array2::zeros((t, m));
        for ti in 0..t {
            let qr = qv.row(ti);
            for i in 0..m {
                value[[ti, i]] = qr.dot(&kv.row(ti * m + i));
            }
        }
        let rg = self.rg(q) || self.rg(k);
        self.push(value, Op::BlockDot(q, k, m), rg)
    }

    /// Per-row mixtures of a row-grouped memory.
    ///
    /// `w` is `T×m`, `v` is `(T·m)×d`; output row `t = Σ_i w[t,i] v_{t·m+i}`.
    pub fn block_mix(&mut self, w: Var, v: Var, m: usize) -> Var {
        let wv = self.value(w);
        let vv = self.value(v);
        let t = wv.nrows();
        debug_assert_eq!(vv.nrows(), t * m);
        let mut value = Array2::zeros((t, vv.ncols()));
        for ti in 0..t {
            let mut out = value.row_mut(ti);
            for i in 0..m {
                out.scaled_add(wv[[ti, i]], &vv.row(ti * m + i));
            }
        }
        let rg = self.rg(w) || self.rg(v);
        self.push(value, Op::BlockMix(w, v, m), rg)
    }

    /// Sum of all entries, as `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean of all entries, as `1×1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let total = self.sum(a);
        self.scale(total, 1.0 / n)
    }

    /// Adjoints of every node with respect to the scalar `output`.
    ///
    /// Entries for nodes that do not require gradients are `None`.
    pub fn backward(&self, output: Var) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    acc(*b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Elu1(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .and(&node.value)
                    .for_each(|d, &x, &y| {
                        if x <= 0.0 {
                            *d *= y;
                        }
                    });
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= gelu_grad(x));
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Square(a) => acc(*a, g * self.value(*a) * 2.0),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if self.rg(*gain) {
                    acc(*gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*bias) {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let dxhat = g * self.value(*gain);
                    let cols = dxhat.ncols() as f64;
                    let mut dx = Array2::zeros(dxhat.raw_dim());
                    for r in 0..dxhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_dh = dh.sum() / cols;
                        let mean_dh_xh = dh.dot(&xh) / cols;
                        let istd = inv_std[r];
                        let mut out = dx.row_mut(r);
                        for c in 0..dh.len() {
                            out[c] = istd * (dh[c] - mean_dh - xh[c] * mean_dh_xh);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g * y;
                let dots = d.sum_axis(Axis(1));
                for (mut row, (yr, dot)) in d.rows_mut().into_iter().zip(y.rows().into_iter().zip(dots.iter())) {
                    row.scaled_add(-dot, &yr);
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let sm = node.value.mapv(f64::exp);
                let gsum = g.sum_axis(Axis(1));
                let mut d = g.clone();
                for (mut row, (smr, gs)) in d.rows_mut().into_iter().zip(sm.rows().into_iter().zip(gsum.iter())) {
                    row.scaled_add(-gs, &smr);
                }
                acc(*a, d);
            }
            Op::CausalMask(a) => {
                let mut d = g.clone();
                mask_upper(&mut d);
                acc(*a, d);
            }
            Op::RowSum(a) => {
                let shape = self.value(*a).raw_dim();
                let d = g.broadcast(shape).expect("column broadcast").to_owned();
                acc(*a, d);
            }
            Op::DivCol(a, col) => {
                let c = self.value(*col);
                if self.rg(*a) {
                    acc(*a, g / c);
                }
                if self.rg(*col) {
                    let num = self.value(*a);
                    let mut dc = (g * num).sum_axis(Axis(1)).insert_axis(Axis(1));
                    Zip::from(&mut dc).and(c).for_each(|d, &cv| *d = -*d / (cv * cv));
                    acc(*col, dc);
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        acc(p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.rg(p) {
                        acc(p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::Gather(a, rows) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (gi, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(gi);
                }
                acc(*a, d);
            }
            Op::RepeatRows(a) => {
                let h = self.value(*a).nrows();
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for block in g.axis_chunks_iter(Axis(0), h) {
                    d += &block;
                }
                acc(*a, d);
            }
            Op::BlockDot(q, k, m) => {
                let m = *m;
                let qv = self.value(*q);
                let kv = self.value(*k);
                if self.rg(*q) {
                    let mut dq = Array2::zeros(qv.raw_dim());
                    for t in 0..qv.nrows() {
                        let mut row = dq.row_mut(t);
                        for i in 0..m {
                            row.scaled_add(g[[t, i]], &kv.row(t * m + i));
                        }
                    }
                    acc(*q, dq);
                }
                if self.rg(*k) {
                    let mut dk = Array2::zeros(kv.raw_dim());
                    for t in 0..qv.nrows() {
                        for i in 0..m {
                            dk.row_mut(t * m + i).scaled_add(g[[t, i]], &qv.row(t));
                        }
                    }
                    acc(*k, dk);
                }
            }
            Op::BlockMix(w, v, m) => {
                let m = *m;
                let wv = self.value(*w);
                let vv = self.value(*v);
                if self.rg(*w) {
                    let mut dw = Array2::zeros(wv.raw_dim());
                    for t in 0..wv.nrows() {
                        for i in 0..m {
                            dw[[t, i]] = g.row(t).dot(&vv.row(t * m + i));
                        }
                    }
                    acc(*w, dw);
                }
                if self.rg(*v) {
                    let mut dv = Array2::zeros(vv.raw_dim());
                    for t in 0..wv.nrows() {
                        for i in 0..m {
                            dv.row_mut(t * m + i).scaled_add(wv[[t, i]], &g.row(t));
                        }
                    }
                    acc(*v, dv);
                }
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                acc(*a, d);
            }
        }
    }
}

fn mask_upper(a: &mut Array2<f64>) {
    let cols = a.ncols();
    for (r, mut row) in a.rows_mut().into_iter().enumerate() {
        if r + 1 < cols {
            row.slice_mut(s![r + 1..]).fill(0.0);
        }
    }
}

/// A tape bound to a parameter store: parameters become leaves on first use.
pub struct Graph<'p> {
    tape: Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone());
        self.bound[id.index()] = Some(v);
        v
    }

    /// Gradient of `loss` with respect to every parameter; unused parameters get zeros.
    pub fn param_grads(&self, loss: Var) -> Vec<Array2<f64>> {
        let mut grads = self.tape.backward(loss);
        self.bound
            .iter()
            .enumerate()
            .map(|(i, b)| {
                b.and_then(|v| grads[v.0].take())
                    .unwrap_or_else(|| Array2::zeros(self.params.get(ParamId::new(i)).raw_dim()))
            })
            .collect()
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `build` with respect to every entry of every input.
    fn check(inputs: Vec<Array2<f64>>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let eval = |vals: &[Array2<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<_> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
            let out = build(&mut tape, &vars);
            (tape.scalar(out), tape, vars, out)
        };
        let (_, tape, vars, out) = eval(&inputs);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads[vars[i].0].clone().unwrap_or_else(|| Array2::zeros(input.raw_dim()));
            for idx in 0..input.len() {
                let (r, c) = (idx / input.ncols(), idx % input.ncols());
                let mut plus = inputs.clone();
                plus[i][[r, c]] += h;
                let mut minus = inputs.clone();
                minus[i][[r, c]] -= h;
                let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "input {i} entry ({r},{c}): analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    /// Weighted sum so every output entry has a distinct adjoint.
    fn reduce(tape: &mut Tape, v: Var) -> Var {
        let shape = tape.value(v).raw_dim();
        let w = Array2::from_shape_fn(shape, |(r, c)| 0.3 + 0.17 * r as f64 - 0.11 * c as f64);
        let w = tape.constant(w);
        let p = tape.mul(v, w);
        tape.sum(p)
    }

    #[test]
    fn matmul_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2)], |t, v| {
            let y = t.matmul(v[0], v[1]);
            reduce(t, y)
        });
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 5, 4)], |t, v| {
            let y = t.matmul_nt(v[0], v[1]);
            reduce(t, y)
        });
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);
        check(vec![a.clone(), b.clone(), row], |t, v| {
            let x = t.add(v[0], v[1]);
            let x = t.add_row(x, v[2]);
            let y = t.sub(x, v[1]);
            let y = t.mul(y, v[0]);
            let y = t.scale(y, 1.7);
            let y = t.add_scalar(y, 0.2);
            let e = t.elu1(y);
            let g = t.gelu(x);
            let ex = t.exp(v[1]);
            let sq = t.square(v[0]);
            let s1 = t.add(e, g);
            let s2 = t.add(ex, sq);
            let s = t.add(s1, s2);
            reduce(t, s)
        });
    }

    #[test]
    fn normalization_and_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(
            vec![random(&mut rng, 4, 5), random(&mut rng, 1, 5), random(&mut rng, 1, 5)],
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2]);
                reduce(t, y)
            },
        );
        check(vec![random(&mut rng, 3, 4)], |t, v| {
            let y = t.softmax_rows(v[0]);
            reduce(t, y)
        });
        check(vec![random(&mut rng, 3, 4)], |t, v| {
            let y = t.log_softmax_rows(v[0]);
            reduce(t, y)
        });
    }

    #[test]
    fn attention_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(vec![random(&mut rng, 4, 4), random(&mut rng, 4, 3)], |t, v| {
            let m = t.causal_mask(v[0]);
            let e = t.elu1(m);
            let den = t.row_sum(e);
            let den = t.add_scalar(den, 0.5);
            let num = t.matmul(e, v[1]);
            let y = t.div_col(num, den);
            reduce(t, y)
        });
        check(vec![random(&mut rng, 3, 2), random(&mut rng, 6, 2), random(&mut rng, 6, 3)], |t, v| {
            let s = t.block_dot(v[0], v[1], 2);
            let w = t.softmax_rows(s);
            let y = t.block_mix(w, v[2], 2);
            reduce(t, y)
        });
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 3, 2)], |t, v| {
            let a = t.slice_cols(v[0], 1, 2);
            let b = t.concat_cols(&[a, v[1], a]);
            let c = t.concat_rows(&[b, b]);
            let d = t.gather(c, &[0, 5, 5, 2]);
            let e = t.repeat_rows(d, 3);
            reduce(t, e)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(array![[1.0, 2.0]]);
        let x = tape.leaf(array![[3.0, 4.0]]);
        let y = tape.mul(c, x);
        let s = tape.sum(y);
        let grads = tape.backward(s);
        assert!(grads[0].is_none());
        assert_eq!(grads[1].as_ref().unwrap(), &array![[1.0, 2.0]]);
    }
}
