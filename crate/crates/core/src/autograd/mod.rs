//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward operation appends a node holding its output value and the
//! ids of its inputs. [`Tape::backward`] walks the nodes in reverse recording
//! order and applies each node's vector-Jacobian product.

pub mod gradcheck;
pub mod kernels;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{LmfnError, Result};
use crate::tensor::{Shape, Tensor};
use kernels::ConvGeom;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn index(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    PixelUnshuffle {
        x: Var,
        r: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Sigmoid {
        x: Var,
    },
    ScaleBy {
        x: Var,
        s: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Transpose {
        x: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Softmax {
        x: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
///
/// A tape is confined to one thread; tensors recorded on it are owned copies.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into(dst: &mut Option<Vec<f32>>, len: usize) -> &mut Vec<f32> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(LmfnError::Backward(format!(
                "variable #{} was not recorded on this tape",
                v.id
            )));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var { id, tape: self.id }
    }

    fn node(&self, v: Var) -> &Node {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.id]
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Records a leaf. Gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let mut t = t;
        t.zero_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(LmfnError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(sa)
    }

    /// Cross-correlation with zero padding. `w` is `Cout×Cin×kH×kW`, `b` has
    /// `Cout` elements.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_padded(x, w, b, stride, (padding, padding))
    }

    /// Like [`Tape::conv2d`] with separate vertical and horizontal padding.
    pub fn conv2d_padded(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        (pad_h, pad_w): (usize, usize),
    ) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if ws.c != xs.c {
            return Err(LmfnError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if bs.numel() != ws.n {
            return Err(LmfnError::ShapeMismatch {
                op: "conv2d bias",
                lhs: ws,
                rhs: bs,
            });
        }
        if stride == 0 {
            return Err(LmfnError::InvalidArgument(
                "conv2d stride must be at least 1".into(),
            ));
        }
        if xs.h + 2 * pad_h < ws.h || xs.w + 2 * pad_w < ws.w {
            return Err(LmfnError::ShapeMismatch {
                op: "conv2d kernel larger than padded input",
                lhs: xs,
                rhs: ws,
            });
        }
        let geom = ConvGeom {
            input: xs,
            c_out: ws.n,
            kh: ws.h,
            kw: ws.w,
            stride,
            pad_h,
            pad_w,
        };
        let y = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let out = Tensor::from_vec(geom.output(), y)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x);
        if r == 0 || !s.c.is_multiple_of(r * r) {
            return Err(LmfnError::shape(
                "pixel_shuffle",
                format!("channel count of {s} is not divisible by r²={}", r * r),
            ));
        }
        let y = kernels::pixel_shuffle(s, r, self.value(x).data());
        let out = Tensor::from_vec(Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r), y)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle { x, r }, rg))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x);
        if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
            return Err(LmfnError::shape(
                "pixel_unshuffle",
                format!("spatial dims of {s} are not divisible by r={r}"),
            ));
        }
        let y = kernels::pixel_unshuffle(s, r, self.value(x).data());
        let out = Tensor::from_vec(Shape::new(s.n, s.c * r * r, s.h / r, s.w / r), y)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelUnshuffle { x, r }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let y = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| p + q)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(s, y)?, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("hadamard", a, b)?;
        let y = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| p * q)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(s, y)?, Op::Hadamard { a, b }, rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let y = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(t.shape(), y)?;
        let rg = self.rg(x);
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu { x }, |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        self.unary(x, Op::LeakyRelu { x, slope }, move |v| {
            if v > 0.0 {
                v
            } else {
                v * slope
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid { x }, sigmoid)
    }

    /// `s · x` where `s` is a single-element variable (a learnable scale).
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        if self.shape(s).numel() != 1 {
            return Err(LmfnError::shape(
                "scale_by",
                format!("scale must be a scalar, got {}", self.shape(s)),
            ));
        }
        let k = self.value(s).data()[0];
        let t = self.value(x);
        let y = t.data().iter().map(|&v| k * v).collect();
        let out = Tensor::from_vec(t.shape(), y)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy { x, s }, rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LmfnError::InvalidArgument("concat of zero tensors".into()))?;
        self.check(first)?;
        let s0 = self.shape(first);
        let mut c_total = 0;
        for &p in parts {
            self.check(p)?;
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(LmfnError::ShapeMismatch {
                    op: "concat",
                    lhs: s0,
                    rhs: s,
                });
            }
            c_total += s.c;
        }
        let out_shape = Shape::new(s0.n, c_total, s0.h, s0.w);
        let mut y = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape().c * s0.plane();
                y.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_vec(out_shape, y)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, shape: impl Into<Shape>) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x);
        let y = transpose_last2(s, self.value(x).data());
        let out = Tensor::from_vec(Shape::new(s.n, s.c, s.w, s.h), y)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose { x }, rg))
    }

    /// Matrix product over the last two axes, batched over the first two.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.c != sb.c || sa.w != sb.h {
            return Err(LmfnError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let y = kernels::matmul_forward(
            sa.n * sa.c,
            sa.h,
            sa.w,
            sb.w,
            self.value(a).data(),
            self.value(b).data(),
        );
        let out = Tensor::from_vec(Shape::new(sa.n, sa.c, sa.h, sb.w), y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Matmul { a, b }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x);
        let y = kernels::softmax_rows(s.w, self.value(x).data());
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(s, y)?, Op::Softmax { x }, rg))
    }

    /// Mean squared error over every element, as a `1×1×1×1` scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let sum: f64 = p
            .iter()
            .zip(t)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        let loss = (sum / p.len() as f64) as f32;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s as f32), Op::Sum { x }, rg))
    }

    /// Which side of zero each input of every recorded ReLU-type op fell
    /// on. Two evaluations with equal signatures took the same linear piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            if let Op::Relu { x } | Op::LeakyRelu { x, .. } = n.op {
                sig.extend(self.nodes[x.id].value.data().iter().map(|&v| v > 0.0));
            }
        }
        sig
    }

    /// Accumulates `d loss / d v` into the gradient of every recorded value
    /// that `loss` depends on and that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(LmfnError::Backward(
                "nothing recorded; run a forward pass first".into(),
            ));
        }
        self.check(loss)?;
        if self.shape(loss).numel() != 1 {
            return Err(LmfnError::Backward(format!(
                "loss must be a scalar, got shape {}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Err(LmfnError::Backward(
                "loss does not depend on any value that requires a gradient".into(),
            ));
        }
        add_into(&mut self.grads[loss.id], 1)[0] += 1.0;

        // Gradients for node i only ever flow to ids < i; take the current
        // node's upstream gradient out, propagate, then put it back.
        for id in (0..=loss.id).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &dy);
            self.grads[id] = Some(dy);
        }
        Ok(())
    }

    fn grad_slot(&mut self, v: Var) -> Option<&mut Vec<f32>> {
        if !self.nodes[v.id].requires_grad {
            return None;
        }
        let len = self.nodes[v.id].value.numel();
        Some(add_into(&mut self.grads[v.id], len))
    }

    fn backprop_node(&mut self, id: usize, dy: &[f32]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.nodes[x.id].value.data();
                let wv = self.nodes[w.id].value.data();
                let mut dx = self.rg(x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.rg(w).then(|| vec![0.0; wv.len()]);
                let mut db = self.rg(b).then(|| vec![0.0; geom.c_out]);
                kernels::conv2d_backward(
                    &geom,
                    xv,
                    wv,
                    dy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.accumulate(x, dx);
                self.accumulate(w, dw);
                self.accumulate(b, db);
            }
            Op::PixelShuffle { x, r } => {
                let out = self.shape(Var { id, tape: self.id });
                let g = kernels::pixel_unshuffle(out, r, dy);
                self.accumulate(x, Some(g));
            }
            Op::PixelUnshuffle { x, r } => {
                let out = self.shape(Var { id, tape: self.id });
                let g = kernels::pixel_shuffle(out, r, dy);
                self.accumulate(x, Some(g));
            }
            Op::Add { a, b } => {
                self.accumulate_slice(a, dy);
                self.accumulate_slice(b, dy);
            }
            Op::Hadamard { a, b } => {
                let av = self.nodes[a.id].value.data();
                let bv = self.nodes[b.id].value.data();
                let da: Vec<f32> = dy.iter().zip(bv).map(|(g, v)| g * v).collect();
                let db: Vec<f32> = dy.iter().zip(av).map(|(g, v)| g * v).collect();
                self.accumulate(a, Some(da));
                self.accumulate(b, Some(db));
            }
            Op::Relu { x } => {
                let xv = self.nodes[x.id].value.data();
                let g = dy
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(x, Some(g));
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.nodes[x.id].value.data();
                let g = dy
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v > 0.0 { *g } else { g * slope })
                    .collect();
                self.accumulate(x, Some(g));
            }
            Op::Sigmoid { x } => {
                let yv = self.nodes[id].value.data();
                let g = dy.iter().zip(yv).map(|(g, &y)| g * y * (1.0 - y)).collect();
                self.accumulate(x, Some(g));
            }
            Op::ScaleBy { x, s } => {
                let k = self.nodes[s.id].value.data()[0];
                let xv = self.nodes[x.id].value.data();
                let ds: f64 = dy
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| (*g as f64) * (*v as f64))
                    .sum();
                let dx = dy.iter().map(|g| g * k).collect();
                self.accumulate(x, Some(dx));
                self.accumulate(s, Some(vec![ds as f32]));
            }
            Op::Concat { parts } => {
                let out = self.shape(Var { id, tape: self.id });
                let plane = out.plane();
                let mut c_off = 0;
                for p in parts {
                    let c = self.shape(p).c;
                    if self.rg(p) {
                        let mut g = Vec::with_capacity(out.n * c * plane);
                        for n in 0..out.n {
                            let start = out.offset(n, c_off, 0, 0);
                            g.extend_from_slice(&dy[start..start + c * plane]);
                        }
                        self.accumulate(p, Some(g));
                    }
                    c_off += c;
                }
            }
            Op::Reshape { x } => self.accumulate_slice(x, dy),
            Op::Transpose { x } => {
                let out = self.shape(Var { id, tape: self.id });
                let g = transpose_last2(out, dy);
                self.accumulate(x, Some(g));
            }
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let av = self.nodes[a.id].value.data();
                let bv = self.nodes[b.id].value.data();
                let mut da = self.rg(a).then(|| vec![0.0; av.len()]);
                let mut db = self.rg(b).then(|| vec![0.0; bv.len()]);
                kernels::matmul_backward(
                    sa.n * sa.c,
                    sa.h,
                    sa.w,
                    sb.w,
                    av,
                    bv,
                    dy,
                    da.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Softmax { x } => {
                let s = self.shape(x);
                let yv = self.nodes[id].value.data();
                let mut g = vec![0.0; yv.len()];
                kernels::softmax_rows_backward(s.w, yv, dy, &mut g);
                self.accumulate(x, Some(g));
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[pred.id].value.data();
                let t = self.nodes[target.id].value.data();
                let k = 2.0 * dy[0] / p.len() as f32;
                let dp: Vec<f32> = p.iter().zip(t).map(|(a, b)| k * (a - b)).collect();
                let dt = self.rg(target).then(|| dp.iter().map(|v| -v).collect());
                self.accumulate(pred, Some(dp));
                self.accumulate(target, dt);
            }
            Op::Sum { x } => {
                let n = self.nodes[x.id].value.numel();
                self.accumulate(x, Some(vec![dy[0]; n]));
            }
        }
    }

    fn accumulate(&mut self, v: Var, g: Option<Vec<f32>>) {
        if let Some(g) = g {
            self.accumulate_slice(v, &g);
        }
    }

    fn accumulate_slice(&mut self, v: Var, g: &[f32]) {
        if let Some(slot) = self.grad_slot(v) {
            slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn transpose_last2(s: Shape, x: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len()];
    let plane = s.plane();
    for (src, dst) in x.chunks_exact(plane).zip(y.chunks_exact_mut(plane)) {
        for i in 0..s.h {
            for j in 0..s.w {
                dst[j * s.h + i] = src[i * s.w + j];
            }
        }
    }
    y
}
