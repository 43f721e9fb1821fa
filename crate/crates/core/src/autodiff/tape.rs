//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs. Nodes are only ever appended, so tape order is a topological order
//! and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use spatial_qa::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", Tensor::row(vec![1.0, 2.0]));
//! let x = tape.constant(Tensor::row(vec![3.0, 4.0]));
//! let loss = tape.dot(w, x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).unwrap().data(), &[3.0, 4.0]);
//! ```

use std::collections::BTreeMap;
use std::ops::Range;

use crate::autodiff::tensor::{matmul_acc, matmul_acc_at, matmul_acc_bt, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate defects for testing the gradient checker itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    pub corrupt_tanh_backward: bool,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Sum(usize),
    Dot(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize, usize),
    SliceRows(usize, usize),
    GatherRows(usize, Vec<usize>),
    BroadcastRows(usize),
    Transpose(usize),
    GruStep(Box<GruCache>),
}

/// Operands and gate activations of a fused GRU step.
#[derive(Debug, Clone)]
struct GruCache {
    xp: usize,
    h: usize,
    u_zr: usize,
    u_h: usize,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
    faults: Faults,
}

/// Row-broadcast plan for elementwise binary ops.
#[derive(Clone, Copy)]
struct Bcast {
    rows: usize,
    cols: usize,
    a_row: bool,
    b_row: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_faults(faults: Faults) -> Self {
        Tape {
            faults,
            ..Tape::default()
        }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// A leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push((name.into(), v.0));
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ar, ac) = self.val(a.0).dims();
        let (br, bc) = self.val(b.0).dims();
        let err = || Error::Shape {
            op,
            lhs: self.val(a.0).shape().to_vec(),
            rhs: self.val(b.0).shape().to_vec(),
        };
        if ac != bc {
            return Err(err());
        }
        if ar == br {
            Ok(Bcast { rows: ar, cols: ac, a_row: false, b_row: false })
        } else if br == 1 {
            Ok(Bcast { rows: ar, cols: ac, a_row: false, b_row: true })
        } else if ar == 1 {
            Ok(Bcast { rows: br, cols: ac, a_row: true, b_row: false })
        } else {
            Err(err())
        }
    }

    fn binary(&mut self, plan: Bcast, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = self.val(a.0).data();
        let bv = self.val(b.0).data();
        let mut out = Vec::with_capacity(plan.rows * plan.cols);
        for r in 0..plan.rows {
            let ao = if plan.a_row { 0 } else { r * plan.cols };
            let bo = if plan.b_row { 0 } else { r * plan.cols };
            out.extend(
                av[ao..ao + plan.cols]
                    .iter()
                    .zip(&bv[bo..bo + plan.cols])
                    .map(|(x, y)| f(*x, *y)),
            );
        }
        self.push(Tensor::from_parts(plan.rows, plan.cols, out), op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.val(a.0);
        let (r, c) = t.dims();
        let out = t.data().iter().map(|x| f(*x)).collect();
        self.push(Tensor::from_parts(r, c, out), op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a.0).matmul(self.val(b.0))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    /// Elementwise sum; either side may be a single row broadcast over the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = self.bcast("add", a, b)?;
        Ok(self.binary(plan, a, b, |x, y| x + y, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = self.bcast("sub", a, b)?;
        Ok(self.binary(plan, a, b, |x, y| x - y, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product with the same row broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = self.bcast("mul", a, b)?;
        Ok(self.binary(plan, a, b, |x, y| x * y, Op::Mul(a.0, b.0)))
    }

    /// Scales each row of `a` (`n x k`) by the matching entry of `col` (`n x 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, k) = self.val(a.0).dims();
        if self.val(col.0).dims() != (n, 1) {
            return Err(Error::Shape {
                op: "mul_col",
                lhs: self.val(a.0).shape().to_vec(),
                rhs: self.val(col.0).shape().to_vec(),
            });
        }
        let av = self.val(a.0).data();
        let cv = self.val(col.0).data();
        let out = (0..n)
            .flat_map(|r| av[r * k..(r + 1) * k].iter().map(move |x| x * cv[r]))
            .collect();
        Ok(self.push(Tensor::from_parts(n, k, out), Op::MulCol(a.0, col.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    /// Softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.val(a.0);
        let (n, k) = t.dims();
        let mut out = Vec::with_capacity(n * k);
        for r in 0..n {
            let row = &t.data()[r * k..(r + 1) * k];
            out.extend(softmax(row));
        }
        self.push(Tensor::from_parts(n, k, out), Op::SoftmaxRows(a.0))
    }

    /// Sum of every element, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a.0).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.val(a.0).shape() != self.val(b.0).shape() {
            return Err(Error::Shape {
                op: "dot",
                lhs: self.val(a.0).shape().to_vec(),
                rhs: self.val(b.0).shape().to_vec(),
            });
        }
        let s = self
            .val(a.0)
            .data()
            .iter()
            .zip(self.val(b.0).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a.0, b.0)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape { op: "concat_cols", lhs: vec![], rhs: vec![] });
        };
        let n = self.val(first.0).rows();
        for p in parts {
            if self.val(p.0).rows() != n {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.val(first.0).shape().to_vec(),
                    rhs: self.val(p.0).shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| self.val(p.0).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for p in parts {
                let t = self.val(p.0);
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let idx = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::from_parts(n, total, out), Op::ConcatCols(idx)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape { op: "concat_rows", lhs: vec![], rhs: vec![] });
        };
        let k = self.val(first.0).cols();
        let mut out = Vec::new();
        let mut n = 0;
        for p in parts {
            let t = self.val(p.0);
            if t.cols() != k {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.val(first.0).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            n += t.rows();
            out.extend_from_slice(t.data());
        }
        let idx = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::from_parts(n, k, out), Op::ConcatRows(idx)))
    }

    pub fn slice_cols(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        let t = self.val(a.0);
        let (n, k) = t.dims();
        if range.start > range.end || range.end > k {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![range.start, range.end],
            });
        }
        let w = range.end - range.start;
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&t.data()[r * k + range.start..r * k + range.end]);
        }
        Ok(self.push(
            Tensor::from_parts(n, w, out),
            Op::SliceCols(a.0, range.start, range.end),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        let t = self.val(a.0);
        let (n, k) = t.dims();
        if range.start > range.end || range.end > n {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![range.start, range.end],
            });
        }
        let out = t.data()[range.start * k..range.end * k].to_vec();
        Ok(self.push(
            Tensor::from_parts(range.end - range.start, k, out),
            Op::SliceRows(a.0, range.start),
        ))
    }

    /// Rows of `table` selected by `indices` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.val(table.0);
        let (n, k) = t.dims();
        let mut out = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            if i >= n {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            out.extend_from_slice(&t.data()[i * k..(i + 1) * k]);
        }
        Ok(self.push(
            Tensor::from_parts(indices.len(), k, out),
            Op::GatherRows(table.0, indices.to_vec()),
        ))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.val(a.0);
        if t.rows() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![n],
            });
        }
        let k = t.cols();
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::from_parts(n, k, out), Op::BroadcastRows(a.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.val(a.0);
        let (n, k) = t.dims();
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            for c in 0..k {
                out[c * n + r] = t.data()[r * k + c];
            }
        }
        self.push(Tensor::from_parts(k, n, out), Op::Transpose(a.0))
    }

    /// Fused GRU update from a projected input `xp = x W + b` (`n x 3H`, gates
    /// in `z, r, h` order) and the previous state `h` (`n x H`). Either operand
    /// may be a single row shared by all rows of the other.
    ///
    /// z = σ(xp_z + h U_z), r = σ(xp_r + h U_r),
    /// h̃ = tanh(xp_h + (r ⊙ h) U_h), h' = h + z ⊙ (h̃ − h)
    pub fn gru_step(&mut self, xp: Var, h: Var, u_zr: Var, u_h: Var) -> Result<Var> {
        let (xr, xc) = self.val(xp.0).dims();
        let (hr, hd) = self.val(h.0).dims();
        let shape_err = |lhs: &Tensor, rhs: &Tensor| Error::Shape {
            op: "gru_step",
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        if xc != 3 * hd || !(xr == hr || xr == 1 || hr == 1) {
            return Err(shape_err(self.val(xp.0), self.val(h.0)));
        }
        if self.val(u_zr.0).dims() != (hd, 2 * hd) {
            return Err(shape_err(self.val(u_zr.0), self.val(h.0)));
        }
        if self.val(u_h.0).dims() != (hd, hd) {
            return Err(shape_err(self.val(u_h.0), self.val(h.0)));
        }
        let n = xr.max(hr);
        let hb = broadcast(self.val(h.0).data(), hr, n, hd);
        let xv = self.val(xp.0).data();

        let mut pre_zr = vec![0.0; n * 2 * hd];
        matmul_acc(&hb, self.val(u_zr.0).data(), &mut pre_zr, n, hd, 2 * hd);
        let mut z = vec![0.0; n * hd];
        let mut r = vec![0.0; n * hd];
        let mut rh = vec![0.0; n * hd];
        for i in 0..n {
            let xo = if xr == 1 { 0 } else { i * xc };
            for j in 0..hd {
                z[i * hd + j] = sigmoid(xv[xo + j] + pre_zr[i * 2 * hd + j]);
                let rv = sigmoid(xv[xo + hd + j] + pre_zr[i * 2 * hd + hd + j]);
                r[i * hd + j] = rv;
                rh[i * hd + j] = rv * hb[i * hd + j];
            }
        }
        let mut cand = vec![0.0; n * hd];
        matmul_acc(&rh, self.val(u_h.0).data(), &mut cand, n, hd, hd);
        let mut out = vec![0.0; n * hd];
        for i in 0..n {
            let xo = if xr == 1 { 0 } else { i * xc };
            for j in 0..hd {
                let k = i * hd + j;
                let c = (xv[xo + 2 * hd + j] + cand[k]).tanh();
                cand[k] = c;
                out[k] = hb[k] + z[k] * (c - hb[k]);
            }
        }
        let cache = GruCache {
            xp: xp.0,
            h: h.0,
            u_zr: u_zr.0,
            u_h: u_h.0,
            z,
            r,
            cand,
            rh,
        };
        Ok(self.push(Tensor::from_parts(n, hd, out), Op::GruStep(Box::new(cache))))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.val(loss.0);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: lv.shape().to_vec(),
                rhs: vec![1],
            });
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Vec::with_capacity(grads.len());
        for (i, g) in grads.into_iter().enumerate() {
            out.push(g.map(|d| {
                let (r, c) = self.val(i).dims();
                Tensor::from_parts(r, c, d)
            }));
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.val(*a).dims();
                let m = self.val(*b).cols();
                matmul_acc_bt(g, self.val(*b).data(), slot(grads, self, *a), n, k, m);
                matmul_acc_at(self.val(*a).data(), g, slot(grads, self, *b), n, k, m);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let cols = node.value.cols();
                reduce_into(slot(grads, self, *a), g, cols, 1.0);
                reduce_into(slot(grads, self, *b), g, cols, sign);
            }
            Op::Mul(a, b) => {
                let cols = node.value.cols();
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                let gb: Vec<f64> = (0..g.len())
                    .map(|j| g[j] * av[bcast_idx(j, cols, av.len())])
                    .collect();
                let ga: Vec<f64> = (0..g.len())
                    .map(|j| g[j] * bv[bcast_idx(j, cols, bv.len())])
                    .collect();
                reduce_into(slot(grads, self, *a), &ga, cols, 1.0);
                reduce_into(slot(grads, self, *b), &gb, cols, 1.0);
            }
            Op::MulCol(a, c) => {
                let k = node.value.cols();
                let av = self.val(*a).data();
                let cv = self.val(*c).data();
                {
                    let ga = slot(grads, self, *a);
                    for (j, gv) in g.iter().enumerate() {
                        ga[j] += gv * cv[j / k];
                    }
                }
                let gc = slot(grads, self, *c);
                for (j, gv) in g.iter().enumerate() {
                    gc[j / k] += gv * av[j];
                }
            }
            Op::Scale(a, s) => {
                for (d, gv) in slot(grads, self, *a).iter_mut().zip(g) {
                    *d += gv * s;
                }
            }
            Op::AddScalar(a) => {
                for (d, gv) in slot(grads, self, *a).iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Relu(a) => {
                let x = self.val(*a).data();
                for ((d, gv), xv) in slot(grads, self, *a).iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                let corrupt = self.faults.corrupt_tanh_backward;
                for ((d, gv), yv) in slot(grads, self, *a).iter_mut().zip(g).zip(y) {
                    *d += if corrupt { gv * (1.0 - yv) } else { gv * (1.0 - yv * yv) };
                }
            }
            Op::Sigmoid(a) => {
                for ((d, gv), yv) in slot(grads, self, *a).iter_mut().zip(g).zip(y) {
                    *d += gv * yv * (1.0 - yv);
                }
            }
            Op::SoftmaxRows(a) => {
                let k = node.value.cols();
                let da = slot(grads, self, *a);
                for r in 0..node.value.rows() {
                    let ys = &y[r * k..(r + 1) * k];
                    let gs = &g[r * k..(r + 1) * k];
                    let inner: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                    for c in 0..k {
                        da[r * k + c] += ys[c] * (gs[c] - inner);
                    }
                }
            }
            Op::Sum(a) => {
                for d in slot(grads, self, *a).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                for (d, x) in slot(grads, self, *a).iter_mut().zip(bv) {
                    *d += g[0] * x;
                }
                for (d, x) in slot(grads, self, *b).iter_mut().zip(av) {
                    *d += g[0] * x;
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = node.value.dims();
                let mut offset = 0;
                for &p in parts {
                    let c = self.val(p).cols();
                    let d = slot(grads, self, p);
                    for r in 0..n {
                        for j in 0..c {
                            d[r * c + j] += g[r * total + offset + j];
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.val(p).len();
                    for (d, gv) in slot(grads, self, p).iter_mut().zip(&g[offset..offset + len]) {
                        *d += gv;
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, s, e) => {
                let k = self.val(*a).cols();
                let w = e - s;
                let d = slot(grads, self, *a);
                for r in 0..node.value.rows() {
                    for j in 0..w {
                        d[r * k + s + j] += g[r * w + j];
                    }
                }
            }
            Op::SliceRows(a, s) => {
                let k = self.val(*a).cols();
                let d = slot(grads, self, *a);
                for (j, gv) in g.iter().enumerate() {
                    d[s * k + j] += gv;
                }
            }
            Op::GatherRows(t, idx) => {
                let k = self.val(*t).cols();
                let d = slot(grads, self, *t);
                for (r, &row) in idx.iter().enumerate() {
                    for j in 0..k {
                        d[row * k + j] += g[r * k + j];
                    }
                }
            }
            Op::BroadcastRows(a) => {
                let k = node.value.cols();
                reduce_into(slot(grads, self, *a), g, k, 1.0);
            }
            Op::GruStep(c) => self.backprop_gru(c, g, grads),
            Op::Transpose(a) => {
                let (k, n) = node.value.dims();
                let d = slot(grads, self, *a);
                for r in 0..n {
                    for c in 0..k {
                        d[r * k + c] += g[c * n + r];
                    }
                }
            }
        }
    }
}

impl Tape {
    fn backprop_gru(&self, c: &GruCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (xr, xc) = self.val(c.xp).dims();
        let (hr, hd) = self.val(c.h).dims();
        let n = xr.max(hr);
        let hb = broadcast(self.val(c.h).data(), hr, n, hd);
        let corrupt = self.faults.corrupt_tanh_backward;

        let mut dh = vec![0.0; n * hd];
        let mut d_pre_h = vec![0.0; n * hd];
        let mut d_zr = vec![0.0; n * 2 * hd];
        for k in 0..n * hd {
            let z = c.z[k];
            let cv = c.cand[k];
            dh[k] = g[k] * (1.0 - z);
            let dc = g[k] * z;
            d_pre_h[k] = if corrupt { dc * (1.0 - cv) } else { dc * (1.0 - cv * cv) };
            let dz = g[k] * (cv - hb[k]);
            let (i, j) = (k / hd, k % hd);
            d_zr[i * 2 * hd + j] = dz * z * (1.0 - z);
        }
        let mut d_rh = vec![0.0; n * hd];
        matmul_acc_bt(&d_pre_h, self.val(c.u_h).data(), &mut d_rh, n, hd, hd);
        for k in 0..n * hd {
            let r = c.r[k];
            dh[k] += d_rh[k] * r;
            let dr = d_rh[k] * hb[k];
            let (i, j) = (k / hd, k % hd);
            d_zr[i * 2 * hd + hd + j] = dr * r * (1.0 - r);
        }
        matmul_acc_bt(&d_zr, self.val(c.u_zr).data(), &mut dh, n, hd, 2 * hd);

        matmul_acc_at(&c.rh, &d_pre_h, slot(grads, self, c.u_h), n, hd, hd);
        matmul_acc_at(&hb, &d_zr, slot(grads, self, c.u_zr), n, hd, 2 * hd);

        {
            let dx = slot(grads, self, c.xp);
            for i in 0..n {
                let xo = if xr == 1 { 0 } else { i * xc };
                for j in 0..2 * hd {
                    dx[xo + j] += d_zr[i * 2 * hd + j];
                }
                for j in 0..hd {
                    dx[xo + 2 * hd + j] += d_pre_h[i * hd + j];
                }
            }
        }
        reduce_into(slot(grads, self, c.h), &dh, hd, 1.0);
    }
}

/// Repeats a `rows x cols` buffer to `n` rows when it holds a single row.
fn broadcast(data: &[f64], rows: usize, n: usize, cols: usize) -> Vec<f64> {
    if rows == n {
        data.to_vec()
    } else {
        let mut out = Vec::with_capacity(n * cols);
        for _ in 0..n {
            out.extend_from_slice(&data[..cols]);
        }
        out
    }
}

/// Index into an operand that may be a broadcast single row.
fn bcast_idx(j: usize, cols: usize, operand_len: usize) -> usize {
    if operand_len == cols {
        j % cols
    } else {
        j
    }
}

/// Adds `sign * g` into `dst`, summing over rows when `dst` is a single row.
fn reduce_into(dst: &mut [f64], g: &[f64], cols: usize, sign: f64) {
    if dst.len() == g.len() {
        for (d, gv) in dst.iter_mut().zip(g) {
            *d += sign * gv;
        }
    } else {
        for row in g.chunks_exact(cols) {
            for (d, gv) in dst.iter_mut().zip(row) {
                *d += sign * gv;
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], tape: &Tape, i: usize) -> &'a mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; tape.val(i).len()])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every named parameter on the tape. Parameters that do not
    /// reach the loss get zeros; a name bound twice accumulates.
    pub fn by_param(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, i) in &tape.params {
            let shape = tape.val(*i).shape();
            let entry = out
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(shape));
            if let Some(Some(g)) = self.grads.get(*i) {
                for (d, x) in entry.data_mut().iter_mut().zip(g.data()) {
                    *d += x;
                }
            }
        }
        out
    }
}
