//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and [`Graph::backward`] is a single reverse sweep.

use std::rc::Rc;

use crate::ad::params::{ParamId, ParamStore};
use crate::ad::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Affine(Var, Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MeanPool(Var, Rc<[usize]>),
    MaxPool(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    Pick(Var, Rc<[usize]>),
    Sum(Var),
    RowSum(Var),
    Min(Var, Var),
    Clamp(Var, T, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// influence the root through differentiable nodes.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients in tape order. A parameter bound twice appears twice.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().filter_map(move |&(id, n)| self.grads[n].as_ref().map(|g| (id, g)))
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err<T>(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<T> {
    Err(Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)))
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.first() != Some(&0)
        || offsets.last() != Some(&rows)
        || offsets.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Shape(format!("pool offsets do not partition {rows} rows")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Input leaf whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Binds a stored parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let trainable = !store.is_frozen(id);
        self.push(store.value(id).clone(), Op::Param(id), trainable)
    }

    /// Binds a stored parameter as a constant regardless of its frozen flag.
    pub fn param_const(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Input, false)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return shape_err(what, va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    /// `x · w + b` with `x: n×i`, `w: i×o`, `b: 1×o`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        if vx.cols() != vw.rows() {
            return shape_err("affine input", vx.shape(), vw.shape());
        }
        if vb.shape() != (1, vw.cols()) {
            return shape_err("affine bias", vb.shape(), (1, vw.cols()));
        }
        let mut out = Tensor::zeros(vx.rows(), vw.cols());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(vb.data());
        }
        gemm_nn(vx, vw, &mut out);
        let ng = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Affine(x, w, b), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols() != vb.rows() {
            return shape_err("matmul", va.shape(), vb.shape());
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm_nn(va, vb, &mut out);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "min", Op::Min(a, b), |x, y| if y < x { y } else { x })
    }

    /// Adds the `1×c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[r.0].value);
        if vr.shape() != (1, va.cols()) {
            return shape_err("add_row", va.shape(), vr.shape());
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(vr.data()) {
                *o += x;
            }
        }
        let ng = self.any_grad(&[a, r]);
        Ok(self.push(out, Op::AddRow(a, r), ng))
    }

    /// Multiplies each row of `a` by the matching entry of the `n×1` column `c`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (va, vc) = (&self.nodes[a.0].value, &self.nodes[c.0].value);
        if vc.shape() != (va.rows(), 1) {
            return shape_err("mul_col", va.shape(), vc.shape());
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            let s = vc.data()[i];
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        let ng = self.any_grad(&[a, c]);
        Ok(self.push(out, Op::MulCol(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Mean of each row group `offsets[g]..offsets[g+1]`; empty groups give zeros.
    pub fn mean_pool(&mut self, x: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        check_offsets(&offsets, vx.rows())?;
        let groups = offsets.len() - 1;
        let mut out = Tensor::zeros(groups, vx.cols());
        let mut col = Vec::new();
        for g in 0..groups {
            let (lo, hi) = (offsets[g], offsets[g + 1]);
            if hi == lo {
                continue;
            }
            let inv = T::one() / T::of((hi - lo) as f64);
            for j in 0..vx.cols() {
                // Summing in sorted order makes the result exactly invariant
                // to the order of rows within the group.
                col.clear();
                col.extend((lo..hi).map(|r| vx.get(r, j)));
                col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let s: T = col.iter().copied().sum();
                out.row_mut(g)[j] = s * inv;
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(out, Op::MeanPool(x, offsets), ng))
    }

    /// Column-wise max of each row group; empty groups give zeros.
    pub fn max_pool(&mut self, x: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        check_offsets(&offsets, vx.rows())?;
        let groups = offsets.len() - 1;
        let c = vx.cols();
        let mut out = Tensor::zeros(groups, c);
        let mut arg = vec![usize::MAX; groups * c];
        for g in 0..groups {
            for r in offsets[g]..offsets[g + 1] {
                for j in 0..c {
                    let v = vx.get(r, j);
                    if arg[g * c + j] == usize::MAX || v > out.get(g, j) {
                        out.row_mut(g)[j] = v;
                        arg[g * c + j] = r;
                    }
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(out, Op::MaxPool(x, arg), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.0 != rows {
                return shape_err("concat_cols", self.shape(parts[0]), s);
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[at..at + v.cols()].copy_from_slice(v.row(r));
            }
            at += v.cols();
        }
        let ng = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.cols() != cols {
                return shape_err("concat_rows", self.shape(parts[0]), v.shape());
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if start + len > va.cols() {
            return Err(Error::Shape(format!("slice {start}..{} of {} columns", start + len, va.cols())));
        }
        let mut out = Tensor::zeros(va.rows(), len);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    /// Rows of `a` at `idx` (repeats allowed; gradients scatter-add).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(Error::Shape(format!("gather row {bad} of {}", va.rows())));
        }
        let mut out = Tensor::zeros(idx.len(), va.cols());
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(va.row(i));
        }
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(out, Op::GatherRows(a, idx), ng))
    }

    /// Element `idx[r]` of each row `r`, as an `n×1` column.
    pub fn pick(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if idx.len() != va.rows() || idx.iter().any(|&i| i >= va.cols()) {
            return Err(Error::Shape(format!("pick {} indices from {}x{}", idx.len(), va.rows(), va.cols())));
        }
        let data = idx.iter().enumerate().map(|(r, &i)| va.get(r, i)).collect();
        let out = Tensor::from_vec(idx.len(), 1, data)?;
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(out, Op::Pick(a, idx), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().copied().sum();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of each row, as an `n×1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = (0..va.rows()).map(|r| va.row(r).iter().copied().sum()).collect();
        let out = Tensor::from_vec(va.rows(), 1, data).expect("row count");
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, Op::RowSum(a), ng)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rs = self.shape(root);
        if rs != (1, 1) {
            return Err(Error::Shape(format!("backward from a {}x{} root; expected a scalar", rs.0, rs.1)));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut params = Vec::new();
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::scalar(T::one()));
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                params.push((id, i));
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        // Accumulates `f`'s contribution into the gradient slot of `v`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor<T>)| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| {
                let (r, c) = self.nodes[v.0].value.shape();
                Tensor::zeros(r, c)
            });
            f(slot);
        };
        let ew = |gx: &mut Tensor<T>, f: &dyn Fn(usize) -> T| {
            for (k, o) in gx.data_mut().iter_mut().enumerate() {
                *o += f(k);
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Affine(x, w, b) => {
                acc(*x, &mut |gx| gemm_nt(g, val(*w), gx));
                acc(*w, &mut |gw| gemm_tn(val(*x), g, gw));
                acc(*b, &mut |gb| {
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                acc(*a, &mut |ga| gemm_nt(g, val(*b), ga));
                acc(*b, &mut |gb| gemm_tn(val(*a), g, gb));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.add_assign(g));
                acc(*b, &mut |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.add_assign(g));
                acc(*b, &mut |gb| ew(gb, &|k| -gd[k]));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| ew(ga, &|k| gd[k] * vb[k]));
                acc(*b, &mut |gb| ew(gb, &|k| gd[k] * va[k]));
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| ew(ga, &|k| if vb[k] < va[k] { T::zero() } else { gd[k] }));
                acc(*b, &mut |gb| ew(gb, &|k| if vb[k] < va[k] { gd[k] } else { T::zero() }));
            }
            Op::AddRow(a, r) => {
                acc(*a, &mut |ga| ga.add_assign(g));
                acc(*r, &mut |gr| {
                    for i in 0..g.rows() {
                        for (o, &v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (va, vc) = (val(*a), val(*c));
                let cols = va.cols();
                acc(*a, &mut |ga| ew(ga, &|k| gd[k] * vc.data()[k / cols]));
                acc(*c, &mut |gc| {
                    for r in 0..va.rows() {
                        gc.data_mut()[r] += dot(g.row(r), va.row(r));
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ew(ga, &|k| gd[k] * *c)),
            Op::Shift(a) => acc(*a, &mut |ga| ga.add_assign(g)),
            Op::Tanh(a) => {
                let yd = y.data();
                acc(*a, &mut |ga| ew(ga, &|k| gd[k] * (T::one() - yd[k] * yd[k])));
            }
            Op::Relu(a) => {
                let xd = val(*a).data();
                acc(*a, &mut |ga| ew(ga, &|k| if xd[k] > T::zero() { gd[k] } else { T::zero() }));
            }
            Op::Sigmoid(a) => {
                let yd = y.data();
                acc(*a, &mut |ga| ew(ga, &|k| gd[k] * yd[k] * (T::one() - yd[k])));
            }
            Op::Exp(a) => {
                let yd = y.data();
                acc(*a, &mut |ga| ew(ga, &|k| gd[k] * yd[k]));
            }
            Op::Log(a) => {
                let xd = val(*a).data();
                acc(*a, &mut |ga| ew(ga, &|k| gd[k] / xd[k]));
            }
            Op::Square(a) => {
                let xd = val(*a).data();
                let two = T::of(2.0);
                acc(*a, &mut |ga| ew(ga, &|k| two * gd[k] * xd[k]));
            }
            Op::Clamp(a, lo, hi) => {
                let xd = val(*a).data();
                acc(*a, &mut |ga| ew(ga, &|k| if xd[k] < *lo || xd[k] > *hi { T::zero() } else { gd[k] }));
            }
            Op::Softmax(a) => acc(*a, &mut |ga| {
                for r in 0..y.rows() {
                    let s = dot(g.row(r), y.row(r));
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o += yv * (gv - s);
                    }
                }
            }),
            Op::LogSoftmax(a) => acc(*a, &mut |ga| {
                for r in 0..y.rows() {
                    let s: T = g.row(r).iter().copied().sum();
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o += gv - yv.exp() * s;
                    }
                }
            }),
            Op::MeanPool(x, offsets) => acc(*x, &mut |gx| {
                for grp in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[grp], offsets[grp + 1]);
                    if hi == lo {
                        continue;
                    }
                    let inv = T::one() / T::of((hi - lo) as f64);
                    for r in lo..hi {
                        for (o, &v) in gx.row_mut(r).iter_mut().zip(g.row(grp)) {
                            *o += v * inv;
                        }
                    }
                }
            }),
            Op::MaxPool(x, arg) => acc(*x, &mut |gx| {
                let c = g.cols();
                for (k, &r) in arg.iter().enumerate() {
                    if r != usize::MAX {
                        gx.row_mut(r)[k % c] += gd[k];
                    }
                }
            }),
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let w = val(*p).cols();
                    acc(*p, &mut |gp| {
                        for r in 0..g.rows() {
                            for (o, &v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[at..at + w]) {
                                *o += v;
                            }
                        }
                    });
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |gp| ew(gp, &|k| gd[at + k]));
                    at += n;
                }
            }
            Op::SliceCols(a, start) => acc(*a, &mut |ga| {
                let w = g.cols();
                for r in 0..g.rows() {
                    for (o, &v) in ga.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }),
            Op::GatherRows(a, idx) => acc(*a, &mut |ga| {
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
            }),
            Op::Pick(a, idx) => acc(*a, &mut |ga| {
                for (r, &i) in idx.iter().enumerate() {
                    ga.row_mut(r)[i] += gd[r];
                }
            }),
            Op::Sum(a) => {
                let s = gd[0];
                acc(*a, &mut |ga| ew(ga, &|_| s));
            }
            Op::RowSum(a) => acc(*a, &mut |ga| {
                let cols = ga.cols();
                ew(ga, &|k| gd[k / cols]);
            }),
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}
