//! Helpers shared by the integration tests.
#![allow(dead_code)]

use lmfn::metrics::{SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use lmfn::{ImagePlane, LmfnModel, ModelConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: impl Into<Shape>, r: &mut ChaCha8Rng) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn assert_close(got: &[f32], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (*g as f64 - w).abs() <= tol,
            "{what}[{i}]: got {g}, want {w}"
        );
    }
}

pub fn naive_conv(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    (ph, pw): (usize, usize),
) -> (Shape, Vec<f64>) {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h + 2 * ph - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pw - ws.w) / stride + 1;
    let out = Shape::new(xs.n, ws.n, oh, ow);
    let mut y = vec![0.0f64; out.numel()];
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co] as f64;
                    for ci in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky) as isize - ph as isize;
                                let ix = (ox * stride + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(co, ci, ky, kx) as f64
                                    * x.at(n, ci, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                    y[out.offset(n, co, oy, ox)] = acc;
                }
            }
        }
    }
    (out, y)
}

pub fn random_image(w: usize, h: usize, c: usize, r: &mut ChaCha8Rng) -> ImagePlane {
    ImagePlane::from_values(w, h, c, (0..w * h * c).map(|_| r.random::<f32>()).collect()).unwrap()
}

pub fn perturbed(img: &ImagePlane, amount: f32, r: &mut ChaCha8Rng) -> ImagePlane {
    let v = img
        .values()
        .iter()
        .map(|v| v + r.random_range(-amount..amount))
        .collect();
    ImagePlane::from_values(img.width, img.height, img.channels, v).unwrap()
}

/// A four-channel, two-scale, two-block network.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        encoder_width: 4,
        decoder_width: 4,
        num_scales: 2,
        num_rfdb: 2,
        ..Default::default()
    }
}

pub fn tiny_model(seed: u64) -> LmfnModel {
    LmfnModel::new(tiny_config(), seed).unwrap()
}

pub fn naive_alfm(x: &Tensor, theta: f64) -> Vec<f64> {
    let s = x.shape();
    let p = s.plane();
    let mut out = vec![0.0; s.numel()];
    for n in 0..s.n {
        let f = |i: usize, k: usize| x.data()[s.offset(n, i, 0, 0) + k] as f64;
        for i in 0..s.c {
            let logits: Vec<f64> = (0..s.c)
                .map(|j| (0..p).map(|k| f(i, k) * f(j, k)).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for k in 0..p {
                let mixed: f64 = (0..s.c).map(|j| e[j] / z * f(j, k)).sum();
                out[s.offset(n, i, 0, 0) + k] = theta * mixed + f(i, k);
            }
        }
    }
    out
}

pub fn naive_acfm(x: &Tensor, ws: &[f32], bs: f32, wc: &[f32], bc: f32, alpha: f64) -> Vec<f64> {
    let s = x.shape();
    let get = |n: usize, c: isize, y: isize, xx: isize| -> f64 {
        if c < 0 || y < 0 || xx < 0 || c >= s.c as isize || y >= s.h as isize || xx >= s.w as isize
        {
            0.0
        } else {
            x.at(n, c as usize, y as usize, xx as usize) as f64
        }
    };
    let mut spatial = vec![0.0f64; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let mut acc = bs as f64;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            acc += ws[dy * 3 + dx] as f64
                                * get(
                                    n,
                                    c as isize,
                                    y as isize + dy as isize - 1,
                                    xx as isize + dx as isize - 1,
                                );
                        }
                    }
                    spatial[s.offset(n, c, y, xx)] = acc;
                }
            }
        }
    }
    let mut out = vec![0.0f64; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let mut acc = bc as f64;
                    for (k, wk) in wc.iter().enumerate() {
                        let cc = c as isize + k as isize - 1;
                        if cc >= 0 && cc < s.c as isize {
                            acc += *wk as f64 * spatial[s.offset(n, cc as usize, y, xx)];
                        }
                    }
                    let gate = 1.0 / (1.0 + (-acc).exp());
                    let v = x.at(n, c, y, xx) as f64;
                    out[s.offset(n, c, y, xx)] = v + alpha * gate * v;
                }
            }
        }
    }
    out
}

/// Direct windowed SSIM: the full 2-D gaussian weights at every valid
/// window position.
pub fn naive_ssim(a: &ImagePlane, b: &ImagePlane) -> f64 {
    let n = SSIM_WINDOW;
    let half = (n / 2) as f64;
    let mut w = vec![0.0f64; n * n];
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - half, x as f64 - half);
            w[y * n + x] = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut per_channel = 0.0;
    for c in 0..a.channels {
        let (pa, pb) = (a.channel(c), b.channel(c));
        let mut sum = 0.0;
        let mut count = 0usize;
        for y0 in 0..=a.height - n {
            for x0 in 0..=a.width - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let k = w[y * n + x];
                        let i = (y0 + y) * a.width + x0 + x;
                        let (va, vb) = (pa[i] as f64, pb[i] as f64);
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_channel += sum / count as f64;
    }
    per_channel / a.channels as f64
}

pub fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n as isize {
            i = 2 * (n as isize - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub fn naive_blur(img: &ImagePlane, weights: &[f64], size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = Vec::with_capacity(img.values().len());
    for c in 0..img.channels {
        let p = img.channel(c);
        for y in 0..img.height {
            for x in 0..img.width {
                let mut acc = 0.0;
                for ky in 0..size {
                    for kx in 0..size {
                        let sy = mirror(y as isize + ky as isize - r, img.height);
                        let sx = mirror(x as isize + kx as isize - r, img.width);
                        acc += weights[ky * size + kx] * p[sy * img.width + sx] as f64;
                    }
                }
                out.push(acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Batched matrix product over the last two axes.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    let out = Shape::new(sa.n, sa.c, sa.h, sb.w);
    let mut y = vec![0.0f64; out.numel()];
    for n in 0..sa.n {
        for c in 0..sa.c {
            for i in 0..sa.h {
                for j in 0..sb.w {
                    y[out.offset(n, c, i, j)] = (0..sa.w)
                        .map(|k| a.at(n, c, i, k) as f64 * b.at(n, c, k, j) as f64)
                        .sum();
                }
            }
        }
    }
    y
}

pub fn naive_mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, t)| (*p as f64 - *t as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64
}
