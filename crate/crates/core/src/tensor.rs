//! Dense rank-4 `f32` tensors in NCHW layout.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LmfnError, Result};

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a single scalar, `1×1×1×1`.
    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    /// Rows × cols matrix stored as `1×1×rows×cols`.
    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape::new(1, 1, rows, cols)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(LmfnError::shape(
                "tensor",
                format!("every dimension must be positive, got {self}"),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// A dense NCHW tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(LmfnError::shape(
                "tensor",
                format!(
                    "data length {} does not match shape {shape} ({} elements)",
                    data.len(),
                    shape.numel()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn full(shape: impl Into<Shape>, value: f32) -> Self {
        let shape = shape.into();
        assert!(
            shape.numel() > 0,
            "tensor dimensions must be positive, got {shape}"
        );
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, std: f32, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor::from_vec(shape, data).expect("randn shape")
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Shape>,
        lo: f32,
        hi: f32,
        rng: &mut R,
    ) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Tensor::from_vec(shape, data).expect("uniform shape")
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f32]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f32 {
        let i = self.shape.offset(n, c, h, w);
        &mut self.data[i]
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != self.numel() {
            return Err(LmfnError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of batch element `n` as a `1×C×H×W` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor::from_vec(
            Shape::new(1, s.c, s.h, s.w),
            self.data[n * len..(n + 1) * len].to_vec(),
        )
        .expect("batch item shape")
    }

    /// Stacks `1×C×H×W` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| LmfnError::InvalidArgument("cannot stack zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(LmfnError::ShapeMismatch {
                    op: "stack",
                    lhs: s,
                    rhs: ts,
                });
            }
            n += ts.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        let err = Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).unwrap_err();
        assert!(err.to_string().contains("1×2×2×2"));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Tensor::from_vec([1, 0, 2, 2], vec![]).is_err());
    }

    #[test]
    fn offset_is_row_major_nchw() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(1, 2, 3, 4), s.numel() - 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
    }

    #[test]
    fn accumulate_grad_adds() {
        let mut t = Tensor::zeros([1, 1, 1, 2]);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad().unwrap(), &[1.5, 2.5]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::full([1, 2, 2, 2], 1.0);
        let b = Tensor::full([1, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.batch_item(1), b);
        assert_eq!(s.batch_item(0), a);
    }
}
