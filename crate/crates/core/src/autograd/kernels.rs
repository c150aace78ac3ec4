//! Raw forward/backward kernels over flat NCHW buffers.
//!
//! Convolution lowers to im2col followed by a single GEMM per batch item.
//! GEMMs are single-threaded, so results are bit-identical across runs.

use crate::tensor::Shape;

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: Shape,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.input.h + 2 * self.pad_h - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.input.w + 2 * self.pad_w - self.kw) / self.stride + 1
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.input.n, self.c_out, self.out_h(), self.out_w())
    }

    /// Rows of the im2col matrix.
    fn k(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

/// `c[m×n] = alpha·a·b + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted bounds cover every index sgemm touches for the
    // given dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f32], cols: &mut [f32]) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.input.c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f32], dx: &mut [f32]) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.input.c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let out_shape = g.output();
    let p = out_shape.plane();
    let k = g.k();
    let in_len = g.input.c * g.input.plane();
    let out_len = g.c_out * p;
    let mut out = vec![0.0f32; out_shape.numel()];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; k * p]
    };

    for n in 0..g.input.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let yn = &mut out[n * out_len..(n + 1) * out_len];
        for (co, row) in yn.chunks_exact_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        let b = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        gemm(g.c_out, k, p, weight, (k, 1), b, (p, 1), 1.0, yn);
    }
    out
}

/// Gradients of a convolution. Each output is accumulated into when present.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
    mut db: Option<&mut [f32]>,
) {
    let p = g.out_h() * g.out_w();
    let k = g.k();
    let in_len = g.input.c * g.input.plane();
    let out_len = g.c_out * p;
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0f32; k * p]
    };

    for n in 0..g.input.n {
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in dyn_.chunks_exact(p).enumerate() {
                db[co] += row.iter().sum::<f32>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let b = if pointwise {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            // dW[co, r] += Σ_p dY[co, p] · cols[r, p]
            gemm(g.c_out, p, k, dyn_, (p, 1), b, (1, p), 1.0, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if pointwise {
                gemm(k, g.c_out, p, weight, (1, k), dyn_, (p, 1), 1.0, dxn);
            } else {
                gemm(k, g.c_out, p, weight, (1, k), dyn_, (p, 1), 0.0, &mut cols);
                col2im(g, &cols, dxn);
            }
        }
    }
}

/// Batched matrix product over the leading `n·c` axes: `(m×k)·(k×p)`.
pub fn matmul_forward(
    batches: usize,
    m: usize,
    k: usize,
    p: usize,
    a: &[f32],
    b: &[f32],
) -> Vec<f32> {
    let mut out = vec![0.0f32; batches * m * p];
    for i in 0..batches {
        gemm(
            m,
            k,
            p,
            &a[i * m * k..(i + 1) * m * k],
            (k, 1),
            &b[i * k * p..(i + 1) * k * p],
            (p, 1),
            0.0,
            &mut out[i * m * p..(i + 1) * m * p],
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn matmul_backward(
    batches: usize,
    m: usize,
    k: usize,
    p: usize,
    a: &[f32],
    b: &[f32],
    dy: &[f32],
    da: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(da) = da {
        for i in 0..batches {
            // dA = dY · Bᵀ
            gemm(
                m,
                p,
                k,
                &dy[i * m * p..(i + 1) * m * p],
                (p, 1),
                &b[i * k * p..(i + 1) * k * p],
                (1, p),
                1.0,
                &mut da[i * m * k..(i + 1) * m * k],
            );
        }
    }
    if let Some(db) = db {
        for i in 0..batches {
            // dB = Aᵀ · dY
            gemm(
                k,
                m,
                p,
                &a[i * m * k..(i + 1) * m * k],
                (1, k),
                &dy[i * m * p..(i + 1) * m * p],
                (p, 1),
                1.0,
                &mut db[i * k * p..(i + 1) * k * p],
            );
        }
    }
}

/// `N×(C·r²)×H×W → N×C×(H·r)×(W·r)`, the sub-pixel layout used by
/// most frameworks: input channel `c·r² + i·r + j` lands at offset `(i, j)`.
pub fn pixel_shuffle(input: Shape, r: usize, x: &[f32]) -> Vec<f32> {
    let c_out = input.c / (r * r);
    let out = Shape::new(input.n, c_out, input.h * r, input.w * r);
    let mut y = vec![0.0f32; x.len()];
    for n in 0..input.n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let ci = c * r * r + i * r + j;
                    for h in 0..input.h {
                        for w in 0..input.w {
                            y[out.offset(n, c, h * r + i, w * r + j)] =
                                x[input.offset(n, ci, h, w)];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Exact inverse of [`pixel_shuffle`]: `N×C×(H·r)×(W·r) → N×(C·r²)×H×W`.
pub fn pixel_unshuffle(input: Shape, r: usize, x: &[f32]) -> Vec<f32> {
    let out = Shape::new(input.n, input.c * r * r, input.h / r, input.w / r);
    let mut y = vec![0.0f32; x.len()];
    for n in 0..input.n {
        for c in 0..input.c {
            for i in 0..r {
                for j in 0..r {
                    let co = c * r * r + i * r + j;
                    for h in 0..out.h {
                        for w in 0..out.w {
                            y[out.offset(n, co, h, w)] =
                                x[input.offset(n, c, h * r + i, w * r + j)];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax_rows(cols: usize, x: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len()];
    for (row, out) in x.chunks_exact(cols).zip(y.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e as f64;
        }
        let inv = (1.0 / sum) as f32;
        out.iter_mut().for_each(|o| *o *= inv);
    }
    y
}

/// `dx = y ⊙ (dy − Σ dy ⊙ y)` per row.
pub fn softmax_rows_backward(cols: usize, y: &[f32], dy: &[f32], dx: &mut [f32]) {
    for ((yr, dyr), dxr) in y
        .chunks_exact(cols)
        .zip(dy.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
    {
        let dot: f64 = yr
            .iter()
            .zip(dyr)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let dot = dot as f32;
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - dot);
        }
    }
}
