//! Tape-based reverse-mode differentiation.
//!
//! Every builder method evaluates its node eagerly and appends it to the
//! tape, so node indices are already a topological order and the backward
//! pass is a single reverse sweep.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::conv::{conv2d_backward, conv2d_forward};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Result};

/// A fixed linear operator with its transpose.
pub trait LinearMap: Send + Sync {
    fn in_shape(&self) -> [usize; 3];
    fn out_shape(&self) -> [usize; 3];
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;
}

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Channel,
    Row,
}

impl Axis {
    fn dim(self) -> usize {
        match self {
            Axis::Channel => 0,
            Axis::Row => 1,
        }
    }
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { x: Var, scale: f64 },
    MulConst { x: Var, c: Arc<Tensor> },
    ScaleBy { x: Var, s: Var },
    Concat { parts: Vec<Var>, axis: Axis },
    Slice { x: Var, axis: Axis, start: usize },
    FlipRows(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Linear { x: Var, map: Arc<dyn LinearMap>, transpose: bool },
    Sum(Var),
    Dot(Var, Var),
    Abs(Var),
    Sqrt(Var),
    PowConst { x: Var, p: f64 },
    SoftThreshold { x: Var, thresholds: Arc<Vec<Option<f64>>> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to every node that needs one.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every bound, non-frozen parameter. A parameter bound once
    /// and used several times receives the sum over its uses.
    pub fn params(&self) -> BTreeMap<ParamId, Tensor> {
        self.params
            .iter()
            .filter_map(|(id, v)| self.by_node[v.0].clone().map(|g| (*id, g)))
            .collect()
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("shape preserved")
}

fn pooled_len(n: usize) -> usize {
    n.div_ceil(2)
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let entry = store.entry(id);
        let v = self.push(entry.value.clone(), Op::Leaf, !entry.frozen);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv2d { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), f);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `scale * x`.
    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        let out = self.value(x).map(|v| scale * v);
        let ng = self.needs(x);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    /// `x + c` for a constant tensor `c`.
    pub fn add_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let c = self.constant(c);
        self.add(x, c)
    }

    /// `x + s` for a constant scalar `s`.
    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let shape = self.value(x).shape();
        let c = self.constant(Tensor::filled(shape, s));
        self.add(x, c).expect("same shape")
    }

    /// Elementwise `x * c` for a constant tensor `c`.
    pub fn mul_const(&mut self, x: Var, c: Arc<Tensor>) -> Result<Var> {
        same_shape(self.value(x), &c)?;
        let out = zip_map(self.value(x), &c, |a, b| a * b);
        let ng = self.needs(x);
        Ok(self.push(out, Op::MulConst { x, c }, ng))
    }

    /// Tensor `x` times the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(dim_err([1, 1, 1], self.value(s).shape()));
        }
        let k = self.value(s).item();
        let out = self.value(x).map(|v| k * v);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(out, Op::ScaleBy { x, s }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(param_err("concat of zero tensors"));
        }
        let first = self.value(parts[0]).shape();
        let d = axis.dim();
        let mut shape = first;
        shape[d] = 0;
        for &p in parts {
            let s = self.value(p).shape();
            for k in 0..3 {
                if k != d && s[k] != first[k] {
                    return Err(dim_err(first, s));
                }
            }
            shape[d] += s[d];
        }
        let mut out = Tensor::zeros(shape);
        match axis {
            Axis::Channel => {
                let mut off = 0;
                for &p in parts {
                    let v = self.value(p).data();
                    out.data_mut()[off..off + v.len()].copy_from_slice(v);
                    off += v.len();
                }
            }
            Axis::Row => {
                let w = shape[2];
                for c in 0..shape[0] {
                    let mut row = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let rows = t.shape()[1];
                        let src = t.plane(c);
                        let dst = out.plane_mut(c);
                        dst[row * w..(row + rows) * w].copy_from_slice(src);
                        row += rows;
                    }
                }
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let s = self.value(x).shape();
        let d = axis.dim();
        if start + len > s[d] {
            return Err(param_err(format!("slice {start}..{} out of range {}", start + len, s[d])));
        }
        let mut shape = s;
        shape[d] = len;
        let mut out = Tensor::zeros(shape);
        let src = self.value(x);
        match axis {
            Axis::Channel => {
                let n = s[1] * s[2];
                out.data_mut()
                    .copy_from_slice(&src.data()[start * n..(start + len) * n]);
            }
            Axis::Row => {
                let w = s[2];
                for c in 0..s[0] {
                    let p = &src.plane(c)[start * w..(start + len) * w];
                    out.plane_mut(c).copy_from_slice(p);
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, ng))
    }

    /// Reverses the row order.
    pub fn flip_rows(&mut self, x: Var) -> Var {
        let out = flip_rows(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::FlipRows(x), ng)
    }

    /// 2x2 mean pooling; odd edges average the available pixels.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let out = avg_pool2(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::AvgPool2(x), ng)
    }

    /// Nearest-neighbor upsampling to `(h, w)` with `h <= 2 * rows`.
    pub fn upsample2(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.value(x).shape();
        if pooled_len(h) != s[1] || pooled_len(w) != s[2] {
            return Err(dim_err([s[0], pooled_len(h), pooled_len(w)], s));
        }
        let mut out = Tensor::zeros([s[0], h, w]);
        let src = self.value(x);
        for c in 0..s[0] {
            let p = src.plane(c);
            let o = out.plane_mut(c);
            for i in 0..h {
                for j in 0..w {
                    o[i * w + j] = p[(i / 2) * s[2] + j / 2];
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::Upsample2(x), ng))
    }

    pub fn linear(&mut self, x: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        let out = map.apply(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(
            out,
            Op::Linear {
                x,
                map,
                transpose: false,
            },
            ng,
        ))
    }

    pub fn linear_transpose(&mut self, x: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        let out = map.adjoint(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(
            out,
            Op::Linear {
                x,
                map,
                transpose: true,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b))?;
        let d = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b), ng))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        let ng = self.needs(x);
        self.push(out, Op::Abs(x), ng)
    }

    /// Elementwise square root of non-negative values; the derivative at 0 is
    /// taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0).sqrt());
        let ng = self.needs(x);
        self.push(out, Op::Sqrt(x), ng)
    }

    /// `max(x, 0)^p`.
    pub fn pow_const(&mut self, x: Var, p: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v.powf(p) } else { 0.0 });
        let ng = self.needs(x);
        self.push(out, Op::PowConst { x, p }, ng)
    }

    /// Per-channel soft-thresholding; channels with `None` pass through.
    pub fn soft_threshold(&mut self, x: Var, thresholds: Arc<Vec<Option<f64>>>) -> Result<Var> {
        let s = self.value(x).shape();
        if thresholds.len() != s[0] {
            return Err(dim_err(s[0], thresholds.len()));
        }
        let mut out = self.value(x).clone();
        for (c, t) in thresholds.iter().enumerate() {
            if let Some(t) = *t {
                for v in out.plane_mut(c) {
                    *v = crate::framelet::shrink(*v, t);
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::SoftThreshold { x, thresholds }, ng))
    }

    /// `sum |x|`.
    pub fn l1(&mut self, x: Var) -> Var {
        let a = self.abs(x);
        self.sum(a)
    }

    /// Euclidean norm `sqrt(sum x^2)`.
    pub fn l2(&mut self, x: Var) -> Var {
        let d = self.dot(x, x).expect("same shape");
        self.sqrt(d)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(param_err("loss node does not belong to this graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(dim_err([1, 1, 1], self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let (gx, gw, gb) = conv2d_backward(self.value(*x), self.value(*w), g)?;
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::Relu(x) => acc(*x, zip_map(g, self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 })),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, zip_map(g, self.value(*b), |d, v| d * v));
                acc(*b, zip_map(g, self.value(*a), |d, v| d * v));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, zip_map(g, bv, |d, v| d / v));
                let q = zip_map(&node.value, bv, |o, v| o / v);
                acc(*b, zip_map(g, &q, |d, v| -d * v));
            }
            Op::Affine { x, scale } => acc(*x, g.map(|v| scale * v)),
            Op::MulConst { x, c } => acc(*x, zip_map(g, c, |d, v| d * v)),
            Op::ScaleBy { x, s } => {
                let k = self.value(*s).item();
                acc(*x, g.map(|v| k * v));
                acc(*s, Tensor::scalar(g.dot(self.value(*x))));
            }
            Op::Concat { parts, axis } => {
                let mut off = 0;
                for &p in parts {
                    let s = self.value(p).shape();
                    let d = axis.dim();
                    acc(p, slice_tensor(g, *axis, off, s[d]));
                    off += s[d];
                }
            }
            Op::Slice { x, axis, start } => {
                let mut full = Tensor::zeros(self.value(*x).shape());
                let s = g.shape();
                match axis {
                    Axis::Channel => {
                        let n = s[1] * s[2];
                        full.data_mut()[start * n..(start + s[0]) * n].copy_from_slice(g.data());
                    }
                    Axis::Row => {
                        let w = s[2];
                        for c in 0..s[0] {
                            full.plane_mut(c)[start * w..(start + s[1]) * w].copy_from_slice(g.plane(c));
                        }
                    }
                }
                acc(*x, full);
            }
            Op::FlipRows(x) => acc(*x, flip_rows(g)),
            Op::AvgPool2(x) => acc(*x, avg_pool2_adjoint(g, self.value(*x).shape())),
            Op::Upsample2(x) => {
                let s = self.value(*x).shape();
                let [c, h, w] = g.shape();
                let mut out = Tensor::zeros(s);
                for ch in 0..c {
                    let gp = g.plane(ch);
                    let o = out.plane_mut(ch);
                    for i in 0..h {
                        for j in 0..w {
                            o[(i / 2) * s[2] + j / 2] += gp[i * w + j];
                        }
                    }
                }
                acc(*x, out);
            }
            Op::Linear { x, map, transpose } => {
                let gx = if *transpose { map.apply(g)? } else { map.adjoint(g)? };
                acc(*x, gx);
            }
            Op::Sum(x) => acc(*x, Tensor::filled(self.value(*x).shape(), g.item())),
            Op::Dot(a, b) => {
                let k = g.item();
                acc(*a, self.value(*b).map(|v| k * v));
                acc(*b, self.value(*a).map(|v| k * v));
            }
            Op::Abs(x) => acc(
                *x,
                zip_map(g, self.value(*x), |d, v| {
                    if v > 0.0 {
                        d
                    } else if v < 0.0 {
                        -d
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sqrt(x) => acc(
                *x,
                zip_map(g, &node.value, |d, s| if s > 0.0 { 0.5 * d / s } else { 0.0 }),
            ),
            Op::PowConst { x, p } => acc(
                *x,
                zip_map(g, self.value(*x), |d, v| {
                    if v > 0.0 {
                        d * p * v.powf(p - 1.0)
                    } else {
                        0.0
                    }
                }),
            ),
            Op::SoftThreshold { x, thresholds } => {
                let mut out = g.clone();
                let xv = self.value(*x);
                for (c, t) in thresholds.iter().enumerate() {
                    if let Some(t) = *t {
                        for (o, &v) in out.plane_mut(c).iter_mut().zip(xv.plane(c)) {
                            if v.abs() <= t {
                                *o = 0.0;
                            }
                        }
                    }
                }
                acc(*x, out);
            }
        }
        Ok(())
    }
}

fn slice_tensor(t: &Tensor, axis: Axis, start: usize, len: usize) -> Tensor {
    let s = t.shape();
    match axis {
        Axis::Channel => {
            let n = s[1] * s[2];
            Tensor::from_vec([len, s[1], s[2]], t.data()[start * n..(start + len) * n].to_vec())
                .expect("slice shape")
        }
        Axis::Row => {
            let w = s[2];
            let mut out = Tensor::zeros([s[0], len, w]);
            for c in 0..s[0] {
                out.plane_mut(c)
                    .copy_from_slice(&t.plane(c)[start * w..(start + len) * w]);
            }
            out
        }
    }
}

fn flip_rows(t: &Tensor) -> Tensor {
    let [c, h, w] = t.shape();
    let mut out = Tensor::zeros([c, h, w]);
    for ch in 0..c {
        let src = t.plane(ch);
        let dst = out.plane_mut(ch);
        for i in 0..h {
            dst[i * w..(i + 1) * w].copy_from_slice(&src[(h - 1 - i) * w..(h - i) * w]);
        }
    }
    out
}

fn pool_count(i: usize, n: usize) -> usize {
    if 2 * i + 1 < n {
        2
    } else {
        1
    }
}

pub(crate) fn avg_pool2(t: &Tensor) -> Tensor {
    let [c, h, w] = t.shape();
    let (ho, wo) = (pooled_len(h), pooled_len(w));
    let mut out = Tensor::zeros([c, ho, wo]);
    for ch in 0..c {
        let src = t.plane(ch);
        let dst = out.plane_mut(ch);
        for i in 0..ho {
            for j in 0..wo {
                let mut s = 0.0;
                for di in 0..pool_count(i, h) {
                    for dj in 0..pool_count(j, w) {
                        s += src[(2 * i + di) * w + 2 * j + dj];
                    }
                }
                dst[i * wo + j] = s / (pool_count(i, h) * pool_count(j, w)) as f64;
            }
        }
    }
    out
}

fn avg_pool2_adjoint(g: &Tensor, in_shape: [usize; 3]) -> Tensor {
    let [c, h, w] = in_shape;
    let wo = pooled_len(w);
    let mut out = Tensor::zeros(in_shape);
    for ch in 0..c {
        let gp = g.plane(ch);
        let o = out.plane_mut(ch);
        for i in 0..h {
            for j in 0..w {
                let (pi, pj) = (i / 2, j / 2);
                let n = (pool_count(pi, h) * pool_count(pj, w)) as f64;
                o[i * w + j] = gp[pi * wo + pj] / n;
            }
        }
    }
    out
}
