//! Reverse-mode differentiation over a small fixed set of batched ops.
//!
//! Every value is a row-major matrix whose rows are independent samples.
//! A [`Graph`] records each op as it is applied; [`Graph::backward`] walks the
//! record in reverse and returns gradients for every parameter that took part.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol { col: Var, x: Var },
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    Square(Var),
    RowNorm(Var),
    RowDot(Var, Var),
    RowSum(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SelectRows { x: Var, idx: Vec<usize> },
    Slice { x: Var, start: usize },
    Softmax(Var),
    LogSoftmax(Var),
    Gather { x: Var, idx: Vec<usize> },
    Reshape(Var),
    BatchedVecMat { v: Var, m: Var, n: usize, k: usize },
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation bound to one parameter store.
pub struct Graph<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Constant built from `f64` data.
    pub fn constant_f64(&mut self, shape: &[usize], data: &[f64]) -> Result<Var> {
        let t = Tensor::from_f64(shape, data)?;
        Ok(self.constant(t))
    }

    /// Node for a trainable parameter; repeated calls reuse the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `x · wᵀ + b` with `x: [R, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (r, inp) = (xt.rows(), xt.cols());
        let (out, win) = (wt.rows(), wt.cols());
        if inp != win {
            return dim_err("linear", xt.shape(), wt.shape());
        }
        let mut y = vec![S::zero(); r * out];
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != out {
                return dim_err("linear bias", wt.shape(), bt.shape());
            }
            for row in y.chunks_exact_mut(out) {
                row.copy_from_slice(bt.data());
            }
        }
        let (xd, wd) = (xt.data(), wt.data());
        for ri in 0..r {
            let xr = &xd[ri * inp..(ri + 1) * inp];
            let yr = &mut y[ri * out..(ri + 1) * out];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = &wd[o * inp..(o + 1) * inp];
                *yo += dot(xr, wr);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![r, out], y)?;
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rows() != bt.rows() || at.cols() != bt.cols() {
            return dim_err(op, at.shape(), bt.shape());
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(at.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(S) -> S) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Scales each row of `x: [R, C]` by `col: [R, 1]`.
    pub fn mul_col(&mut self, col: Var, x: Var) -> Result<Var> {
        let (ct, xt) = (self.value(col), self.value(x));
        if ct.cols() != 1 || ct.rows() != xt.rows() {
            return dim_err("mul_col", ct.shape(), xt.shape());
        }
        let c = xt.cols();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ct.data()[i / c])
            .collect();
        let t = Tensor::new(xt.shape().to_vec(), data)?;
        let ng = self.ng(col) || self.ng(x);
        Ok(self.push(t, Op::MulCol { col, x }, ng))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (a, c) = (S::of(scale), S::of(shift));
        self.map(x, Op::Affine { x, scale }, |v| a * v + c)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > S::zero() { v } else { S::zero() })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.map(x, Op::Elu(x), |v| if v > S::zero() { v } else { v.exp_m1() })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, Op::Abs(x), |v| v.abs())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, Op::Square(x), |v| v * v)
    }

    /// Euclidean norm of each row: `[R, C] -> [R, 1]`.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = (0..xt.rows())
            .map(|r| xt.row(r).iter().map(|&v| v * v).sum::<S>().sqrt())
            .collect();
        let t = Tensor::new(vec![xt.rows(), 1], data).expect("rows");
        let ng = self.ng(x);
        self.push(t, Op::RowNorm(x), ng)
    }

    /// Per-row dot product: `[R, C] × [R, C] -> [R, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = (0..at.rows()).map(|r| dot(at.row(r), bt.row(r))).collect();
        let t = Tensor::new(vec![at.rows(), 1], data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::RowDot(a, b), ng))
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = (0..xt.rows()).map(|r| xt.row(r).iter().copied().sum()).collect();
        let t = Tensor::new(vec![xt.rows(), 1], data).expect("rows");
        let ng = self.ng(x);
        self.push(t, Op::RowSum(x), ng)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return dim_err("concat", self.value(*first).shape(), self.value(*p).shape());
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, total], data)?;
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    /// Row-wise concatenation of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("stack of zero tensors".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        for p in parts {
            let pt = self.value(*p);
            if pt.cols() != cols {
                return dim_err("stack_rows", self.value(*first).shape(), pt.shape());
            }
            data.extend_from_slice(pt.data());
        }
        let t = Tensor::new(vec![data.len() / cols, cols], data)?;
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(t, Op::StackRows(parts.to_vec()), ng))
    }

    /// Rows `idx` of `x`, in that order (repeats allowed).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= xt.rows()) {
            return dim_err("select_rows", xt.shape(), &[idx.len()]);
        }
        let mut data = Vec::with_capacity(idx.len() * xt.cols());
        for &i in idx {
            data.extend_from_slice(xt.row(i));
        }
        let t = Tensor::new(vec![idx.len(), xt.cols()], data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::SelectRows { x, idx: idx.to_vec() }, ng))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        if len == 0 || start + len > c {
            return dim_err("slice_cols", xt.shape(), &[start, len]);
        }
        let mut data = Vec::with_capacity(xt.rows() * len);
        for r in 0..xt.rows() {
            data.extend_from_slice(&xt.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![xt.rows(), len], data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Slice { x, start }, ng))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let mut data = Vec::with_capacity(xt.len());
        for r in 0..xt.rows() {
            data.extend(softmax_row(xt.row(r)));
        }
        let t = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Softmax(x), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let mut data = Vec::with_capacity(xt.len());
        for r in 0..xt.rows() {
            data.extend(log_softmax_row(xt.row(r)));
        }
        let t = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::LogSoftmax(x), ng)
    }

    /// Picks column `idx[r]` from each row: `[R, C] -> [R, 1]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if idx.len() != xt.rows() || idx.iter().any(|&i| i >= xt.cols()) {
            return dim_err("gather", xt.shape(), &[idx.len()]);
        }
        let data = idx.iter().enumerate().map(|(r, &i)| xt.at(r, i)).collect();
        let t = Tensor::new(vec![idx.len(), 1], data)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Per-row vector–matrix product: `v: [R, n]`, `m: [R, n·k]` holding one
    /// row-major `n × k` matrix per row; result `[R, k]`.
    pub fn batched_vec_mat(&mut self, v: Var, m: Var, n: usize, k: usize) -> Result<Var> {
        let (vt, mt) = (self.value(v), self.value(m));
        if vt.cols() != n || mt.cols() != n * k || vt.rows() != mt.rows() {
            return dim_err("batched_vec_mat", vt.shape(), mt.shape());
        }
        let rows = vt.rows();
        let mut data = vec![S::zero(); rows * k];
        for r in 0..rows {
            let (vr, mr) = (vt.row(r), mt.row(r));
            let out = &mut data[r * k..(r + 1) * k];
            for (i, &vi) in vr.iter().enumerate() {
                for (o, &mij) in out.iter_mut().zip(&mr[i * k..(i + 1) * k]) {
                    *o += vi * mij;
                }
            }
        }
        let t = Tensor::new(vec![rows, k], data)?;
        let ng = self.ng(v) || self.ng(m);
        Ok(self.push(t, Op::BatchedVecMat { v, m, n, k }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let s: S = xt.data().iter().copied().sum::<S>() / S::of(xt.len() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Argument(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut out);
        }
        out.entries.sort_by_key(|(p, _)| *p);
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node<S>,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        out: &mut Gradients<S>,
    ) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.entries.push((*id, g.to_vec())),
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (r, inp, o) = (xt.rows(), xt.cols(), wt.rows());
                if self.ng(*x) {
                    let gx = self.slot(grads, *x);
                    for ri in 0..r {
                        let gr = &g[ri * o..(ri + 1) * o];
                        let gxr = &mut gx[ri * inp..(ri + 1) * inp];
                        for (oi, &go) in gr.iter().enumerate() {
                            axpy(go, &wt.data()[oi * inp..(oi + 1) * inp], gxr);
                        }
                    }
                }
                if self.ng(*w) {
                    let gw = self.slot(grads, *w);
                    for ri in 0..r {
                        let xr = &xt.data()[ri * inp..(ri + 1) * inp];
                        for (oi, &go) in g[ri * o..(ri + 1) * o].iter().enumerate() {
                            axpy(go, xr, &mut gw[oi * inp..(oi + 1) * inp]);
                        }
                    }
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let gb = self.slot(grads, *b);
                        for gr in g.chunks_exact(o) {
                            for (a, &v) in gb.iter_mut().zip(gr) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |gi| gi.iter_mut().zip(g).for_each(|(s, &v)| *s += v));
                self.acc(grads, *b, |gi| gi.iter_mut().zip(g).for_each(|(s, &v)| *s += v));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |gi| gi.iter_mut().zip(g).for_each(|(s, &v)| *s += v));
                self.acc(grads, *b, |gi| gi.iter_mut().zip(g).for_each(|(s, &v)| *s -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |gi| {
                    for ((s, &gv), &o) in gi.iter_mut().zip(g).zip(bv) {
                        *s += gv * o;
                    }
                });
                self.acc(grads, *b, |gi| {
                    for ((s, &gv), &o) in gi.iter_mut().zip(g).zip(av) {
                        *s += gv * o;
                    }
                });
            }
            Op::MulCol { col, x } => {
                let (cv, xt) = (self.value(*col).data(), self.value(*x));
                let c = xt.cols();
                self.acc(grads, *col, |gi| {
                    for (r, s) in gi.iter_mut().enumerate() {
                        *s += dot(&g[r * c..(r + 1) * c], xt.row(r));
                    }
                });
                self.acc(grads, *x, |gi| {
                    for (i, s) in gi.iter_mut().enumerate() {
                        *s += g[i] * cv[i / c];
                    }
                });
            }
            Op::Affine { x, scale } => {
                let a = S::of(*scale);
                self.acc(grads, *x, |gi| gi.iter_mut().zip(g).for_each(|(s, &v)| *s += a * v));
            }
            Op::Sigmoid(x) => self.acc(grads, *x, |gi| {
                for ((s, &gv), &yv) in gi.iter_mut().zip(g).zip(y) {
                    *s += gv * yv * (S::one() - yv);
                }
            }),
            Op::Tanh(x) => self.acc(grads, *x, |gi| {
                for ((s, &gv), &yv) in gi.iter_mut().zip(g).zip(y) {
                    *s += gv * (S::one() - yv * yv);
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gi| {
                    for ((s, &gv), &xi) in gi.iter_mut().zip(g).zip(xv) {
                        if xi > S::zero() {
                            *s += gv;
                        }
                    }
                })
            }
            Op::Elu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gi| {
                    for (((s, &gv), &xi), &yv) in gi.iter_mut().zip(g).zip(xv).zip(y) {
                        *s += if xi > S::zero() { gv } else { gv * (yv + S::one()) };
                    }
                })
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gi| {
                    for ((s, &gv), &xi) in gi.iter_mut().zip(g).zip(xv) {
                        if xi > S::zero() {
                            *s += gv;
                        } else if xi < S::zero() {
                            *s -= gv;
                        }
                    }
                })
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = S::of(2.0);
                self.acc(grads, *x, |gi| {
                    for ((s, &gv), &xi) in gi.iter_mut().zip(g).zip(xv) {
                        *s += two * gv * xi;
                    }
                })
            }
            Op::RowNorm(x) => {
                let xt = self.value(*x);
                let c = xt.cols();
                self.acc(grads, *x, |gi| {
                    for (r, &norm) in y.iter().enumerate() {
                        if norm > S::zero() {
                            let k = g[r] / norm;
                            axpy(k, xt.row(r), &mut gi[r * c..(r + 1) * c]);
                        }
                    }
                })
            }
            Op::RowDot(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let c = at.cols();
                self.acc(grads, *a, |gi| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, bt.row(r), &mut gi[r * c..(r + 1) * c]);
                    }
                });
                self.acc(grads, *b, |gi| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, at.row(r), &mut gi[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::RowSum(x) => {
                let c = self.value(*x).cols();
                self.acc(grads, *x, |gi| {
                    for (i, s) in gi.iter_mut().enumerate() {
                        *s += g[i / c];
                    }
                })
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    self.acc(grads, *p, |gi| {
                        for (r, dst) in gi.chunks_exact_mut(c).enumerate() {
                            let src = &g[r * total + off..r * total + off + c];
                            dst.iter_mut().zip(src).for_each(|(s, &v)| *s += v);
                        }
                    });
                    off += c;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc(grads, *p, |gi| {
                        gi.iter_mut().zip(&g[off..off + n]).for_each(|(s, &v)| *s += v);
                    });
                    off += n;
                }
            }
            Op::SelectRows { x, idx } => {
                let c = node.value.cols();
                self.acc(grads, *x, |gi| {
                    for (src, &i) in g.chunks_exact(c).zip(idx) {
                        let dst = &mut gi[i * c..(i + 1) * c];
                        dst.iter_mut().zip(src).for_each(|(s, &v)| *s += v);
                    }
                })
            }
            Op::Slice { x, start } => {
                let c = self.value(*x).cols();
                let len = node.value.cols();
                self.acc(grads, *x, |gi| {
                    for (r, src) in g.chunks_exact(len).enumerate() {
                        let dst = &mut gi[r * c + start..r * c + start + len];
                        dst.iter_mut().zip(src).for_each(|(s, &v)| *s += v);
                    }
                })
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                self.acc(grads, *x, |gi| {
                    for ((dst, gr), yr) in gi.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c)) {
                        let inner = dot(gr, yr);
                        for ((s, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                            *s += yv * (gv - inner);
                        }
                    }
                })
            }
            Op::LogSoftmax(x) => {
                let c = node.value.cols();
                self.acc(grads, *x, |gi| {
                    for ((dst, gr), yr) in gi.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c)) {
                        let total: S = gr.iter().copied().sum();
                        for ((s, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                            *s += gv - yv.exp() * total;
                        }
                    }
                })
            }
            Op::Gather { x, idx } => {
                let c = self.value(*x).cols();
                self.acc(grads, *x, |gi| {
                    for (r, &i) in idx.iter().enumerate() {
                        gi[r * c + i] += g[r];
                    }
                })
            }
            Op::Reshape(x) => {
                self.acc(grads, *x, |gi| gi.iter_mut().zip(g).for_each(|(s, &v)| *s += v))
            }
            Op::BatchedVecMat { v, m, n, k } => {
                let (n, k) = (*n, *k);
                let (vt, mt) = (self.value(*v), self.value(*m));
                self.acc(grads, *v, |gi| {
                    for r in 0..vt.rows() {
                        let gr = &g[r * k..(r + 1) * k];
                        let mr = mt.row(r);
                        for i in 0..n {
                            gi[r * n + i] += dot(gr, &mr[i * k..(i + 1) * k]);
                        }
                    }
                });
                self.acc(grads, *m, |gi| {
                    for r in 0..vt.rows() {
                        let gr = &g[r * k..(r + 1) * k];
                        for (i, &vi) in vt.row(r).iter().enumerate() {
                            let base = r * n * k + i * k;
                            axpy(vi, gr, &mut gi[base..base + k]);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.acc(grads, *x, |gi| gi.iter_mut().for_each(|s| *s += g0))
            }
            Op::Mean(x) => {
                let g0 = g[0] / S::of(self.value(*x).len() as f64);
                self.acc(grads, *x, |gi| gi.iter_mut().for_each(|s| *s += g0))
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> &'g mut Vec<S> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![S::zero(); n])
    }

    fn acc(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if self.ng(v) {
            f(self.slot(grads, v));
        }
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<S: Scalar>(a: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Max-shifted softmax of one row.
pub fn softmax_row<S: Scalar>(x: &[S]) -> Vec<S> {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Max-shifted log-softmax of one row.
pub fn log_softmax_row<S: Scalar>(x: &[S]) -> Vec<S> {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = m + x.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
    x.iter().map(|&v| v - lse).collect()
}
