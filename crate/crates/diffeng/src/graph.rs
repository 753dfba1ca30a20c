//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and the backward pass is a single reverse scan.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Scale(f32),
    AddScalar(f32),
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Silu,
    Sqrt,
    Square,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        batch: usize,
        out_ch: usize,
    },
    Upsample2x(Var),
    AvgPool2x(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Unary(_, a)
            | Op::Upsample2x(a)
            | Op::AvgPool2x(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Reshape(a) => vec![*a],
            Op::SumAxis { x, .. } | Op::Slice { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// A computation graph. Leaves are created with [`Graph::param`] (tracked)
/// or [`Graph::constant`] (not tracked); every op appends a node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `shape` viewed through the broadcast `out` shape.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let mut strides = vec![0; nd];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        let o = i + nd - shape.len();
        strides[o] = if shape[i] == 1 && out[o] != 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` over the broadcast iteration space.
fn broadcast_for_each(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..total {
        f(i, ia, ib);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise ----------------------------------------------------

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let f = match op {
            BinaryOp::Add => |x: f32, y: f32| x + y,
            BinaryOp::Sub => |x: f32, y: f32| x - y,
            BinaryOp::Mul => |x: f32, y: f32| x * y,
            BinaryOp::Div => |x: f32, y: f32| x / y,
        };
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| Error::ShapeMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            })?;
            let sa = broadcast_strides(va.shape(), &shape);
            let sb = broadcast_strides(vb.shape(), &shape);
            let mut data = vec![0.0; shape.iter().product()];
            let (da, db) = (va.data(), vb.data());
            broadcast_for_each(&shape, &sa, &sb, |i, ia, ib| data[i] = f(da[ia], db[ib]));
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, Op::Binary(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let f: Box<dyn Fn(f32) -> f32> = match op {
            UnaryOp::Neg => Box::new(|x| -x),
            UnaryOp::Scale(s) => Box::new(move |x| x * s),
            UnaryOp::AddScalar(s) => Box::new(move |x| x + s),
            UnaryOp::Exp => Box::new(f32::exp),
            UnaryOp::Log => Box::new(f32::ln),
            UnaryOp::Sigmoid => Box::new(sigmoid),
            UnaryOp::Tanh => Box::new(f32::tanh),
            UnaryOp::Relu => Box::new(|x| x.max(0.0)),
            UnaryOp::Silu => Box::new(|x| x * sigmoid(x)),
            UnaryOp::Sqrt => Box::new(f32::sqrt),
            UnaryOp::Square => Box::new(|x| x * x),
        };
        let out = self.nodes[a.0].value.map(f);
        self.push(out, Op::Unary(op, a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        self.unary(UnaryOp::Scale(s), a)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(UnaryOp::AddScalar(s), a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Log, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Silu, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }

    // ---- linear algebra -------------------------------------------------

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x: [B, C, H, W]`, `w: [O, C, kh, kw]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            lhs: vx.shape().to_vec(),
            rhs: vw.shape().to_vec(),
        };
        if vx.ndim() != 4 || vw.ndim() != 4 || vx.shape()[1] != vw.shape()[1] || stride == 0 {
            return Err(mismatch());
        }
        let (b, c, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (o, kh, kw) = (vw.shape()[0], vw.shape()[2], vw.shape()[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(mismatch());
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            pad,
        };
        let (oh, ow) = geom.out_hw();
        let out = kernels::conv2d_forward(vx.data(), b, vw.data(), o, &geom);
        let out = Tensor::new(vec![b, o, oh, ow], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                geom,
                batch: b,
                out_ch: o,
            },
        ))
    }

    fn spatial_dims(&self, x: Var, op: &'static str, even: bool) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 || (even && (s[s.len() - 1] % 2 != 0 || s[s.len() - 2] % 2 != 0)) {
            return Err(Error::InvalidShape {
                op,
                shape: s.to_vec(),
                reason: "needs trailing spatial dims (even for pooling)".into(),
            });
        }
        let planes = s[..s.len() - 2].iter().product();
        Ok((planes, s[s.len() - 2], s[s.len() - 1]))
    }

    /// Nearest-neighbour 2× upsampling of the two trailing dims.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = self.spatial_dims(x, "upsample2x", false)?;
        let mut shape = self.shape(x).to_vec();
        let nd = shape.len();
        shape[nd - 2] *= 2;
        shape[nd - 1] *= 2;
        let out = kernels::upsample2x(self.value(x).data(), planes, h, w);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Upsample2x(x)))
    }

    /// 2×2 average pooling of the two trailing dims.
    pub fn avgpool2x(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = self.spatial_dims(x, "avgpool2x", true)?;
        let mut shape = self.shape(x).to_vec();
        let nd = shape.len();
        shape[nd - 2] /= 2;
        shape[nd - 1] /= 2;
        let out = kernels::avgpool2x(self.value(x).data(), planes, h, w);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::AvgPool2x(x)))
    }

    // ---- reductions and layout -----------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f32 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f32 = v.data().iter().sum::<f32>() / v.numel().max(1) as f32;
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.ndim() {
            return Err(Error::InvalidShape {
                op: "sum_axis",
                shape: v.shape().to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, n, inner) = split_axis(v.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = v.data();
        for o in 0..outer {
            for k in 0..n {
                let src = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (a, b) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = 1;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::SumAxis { x, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.ndim() || start + len > v.shape()[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: v.shape().to_vec(),
                reason: format!("range {start}..{} on axis {axis}", start + len),
            });
        }
        let (outer, n, inner) = split_axis(v.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&v.data()[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Slice { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Mean squared difference of two same-shaped nodes.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Back-propagates from a one-element `root`, accumulating into the
    /// `grad` of every tracked leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let shape = self.nodes[i].value.shape().to_vec();
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(t) => {
                        for (a, b) in t.data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            for (input, gi) in self.input_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&gi) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each of its inputs.
    fn input_grads(&self, i: usize, g: &[f32]) -> Result<Vec<(Var, Vec<f32>)>> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let shape = node.value.shape();
                let sa = broadcast_strides(va.shape(), shape);
                let sb = broadcast_strides(vb.shape(), shape);
                let (da, db) = (va.data(), vb.data());
                let mut ga = needs(*a).then(|| vec![0.0; da.len()]);
                let mut gb = needs(*b).then(|| vec![0.0; db.len()]);
                broadcast_for_each(shape, &sa, &sb, |k, ia, ib| {
                    let (x, y, gk) = (da[ia], db[ib], g[k]);
                    let (dx, dy) = match op {
                        BinaryOp::Add => (gk, gk),
                        BinaryOp::Sub => (gk, -gk),
                        BinaryOp::Mul => (gk * y, gk * x),
                        BinaryOp::Div => (gk / y, -gk * x / (y * y)),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += dx;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += dy;
                    }
                });
                if let Some(ga) = ga {
                    res.push((*a, ga));
                }
                if let Some(gb) = gb {
                    res.push((*b, gb));
                }
            }
            Op::Unary(op, a) => {
                let x = val(*a).data();
                let gi: Vec<f32> = match op {
                    UnaryOp::Neg => g.iter().map(|v| -v).collect(),
                    UnaryOp::Scale(s) => g.iter().map(|v| v * s).collect(),
                    UnaryOp::AddScalar(_) => g.to_vec(),
                    UnaryOp::Exp => g.iter().zip(out).map(|(g, y)| g * y).collect(),
                    UnaryOp::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                    UnaryOp::Sigmoid => g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    UnaryOp::Tanh => g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    UnaryOp::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    UnaryOp::Silu => g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| {
                            let s = sigmoid(*x);
                            g * (s + x * s * (1.0 - s))
                        })
                        .collect(),
                    UnaryOp::Sqrt => g.iter().zip(out).map(|(g, y)| g * 0.5 / y).collect(),
                    UnaryOp::Square => g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
                };
                res.push((*a, gi));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, vb.data(), true, &mut ga, false);
                    res.push((*a, ga));
                }
                if needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, va.data(), true, g, false, &mut gb, false);
                    res.push((*b, gb));
                }
            }
            Op::Conv2d {
                x,
                w,
                geom,
                batch,
                out_ch,
            } => {
                let (dx, dw) = kernels::conv2d_backward(
                    val(*x).data(),
                    *batch,
                    val(*w).data(),
                    *out_ch,
                    geom,
                    g,
                    needs(*x),
                    needs(*w),
                );
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                if let Some(dw) = dw {
                    res.push((*w, dw));
                }
            }
            Op::Upsample2x(x) => {
                let (planes, h, w) = self.spatial_dims(*x, "upsample2x", false)?;
                res.push((*x, kernels::upsample2x_backward(g, planes, h, w)));
            }
            Op::AvgPool2x(x) => {
                let (planes, h, w) = self.spatial_dims(*x, "avgpool2x", true)?;
                res.push((*x, kernels::avgpool2x_backward(g, planes, h, w)));
            }
            Op::SumAll(x) => res.push((*x, vec![g[0]; val(*x).numel()])),
            Op::MeanAll(x) => {
                let n = val(*x).numel();
                res.push((*x, vec![g[0] / n as f32; n]));
            }
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = split_axis(val(*x).shape(), *axis);
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        gi[(o * n + k) * inner..(o * n + k + 1) * inner].copy_from_slice(src);
                    }
                }
                res.push((*x, gi));
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(val(*x).shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    gi[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                res.push((*x, gi));
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let n = val(x).shape()[*axis];
                    if needs(x) {
                        let mut gi = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[base..base + n * inner]);
                        }
                        res.push((x, gi));
                    }
                    offset += n;
                }
            }
        }
        Ok(res)
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
