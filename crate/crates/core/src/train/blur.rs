//! Synthetic blur kernels and blurred/sharp pair synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{LmfnError, Result};
use crate::metrics::ImagePlane;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurKind {
    Gaussian,
    LinearMotion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurSpec {
    pub kind: BlurKind,
    /// Standard deviation in pixels (gaussian).
    pub sigma: f64,
    /// Segment length in pixels, odd and at least 3 (motion).
    pub length: usize,
    /// Segment direction in degrees, counter-clockwise from +x (motion).
    pub angle: f64,
    pub seed: u64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        BlurSpec::gaussian(1.5)
    }
}

impl BlurSpec {
    pub fn gaussian(sigma: f64) -> Self {
        BlurSpec {
            kind: BlurKind::Gaussian,
            sigma,
            length: 3,
            angle: 0.0,
            seed: 0,
        }
    }

    pub fn motion(length: usize, angle: f64) -> Self {
        BlurSpec {
            kind: BlurKind::LinearMotion,
            sigma: 1.0,
            length,
            angle,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BlurKind::Gaussian if !(self.sigma.is_finite() && self.sigma > 0.0) => {
                Err(LmfnError::InvalidArgument(format!(
                    "gaussian sigma must be positive, got {}",
                    self.sigma
                )))
            }
            BlurKind::LinearMotion if self.length < 3 || self.length.is_multiple_of(2) => {
                Err(LmfnError::InvalidArgument(format!(
                    "motion length must be odd and at least 3, got {}",
                    self.length
                )))
            }
            BlurKind::LinearMotion if !(0.0..180.0).contains(&self.angle) => {
                Err(LmfnError::InvalidArgument(format!(
                    "motion angle must lie in [0, 180), got {}",
                    self.angle
                )))
            }
            _ => Ok(()),
        }
    }
}

/// A square, odd-sized, normalized blur kernel in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl BlurKernel {
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn at(&self, dy: usize, dx: usize) -> f64 {
        self.weights[dy * self.size + dx]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The 1×1 identity kernel.
    pub fn delta() -> Self {
        BlurKernel {
            size: 1,
            weights: vec![1.0],
        }
    }
}

pub fn make_blur_kernel(spec: &BlurSpec) -> Result<BlurKernel> {
    spec.validate()?;
    let mut k = match spec.kind {
        BlurKind::Gaussian => gaussian_kernel(spec.sigma),
        BlurKind::LinearMotion => motion_kernel(spec.length, spec.angle),
    };
    let total = k.sum();
    k.weights.iter_mut().for_each(|w| *w /= total);
    Ok(k)
}

/// Separable gaussian density sampled at integer offsets, truncated at ±3σ.
fn gaussian_kernel(sigma: f64) -> BlurKernel {
    let r = (3.0 * sigma).ceil().max(1.0) as usize;
    let size = 2 * r + 1;
    let mut line: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = line.iter().sum();
    line.iter_mut().for_each(|v| *v /= s);
    let weights = line
        .iter()
        .flat_map(|a| line.iter().map(move |b| a * b))
        .collect();
    BlurKernel { size, weights }
}

/// Rasterizes a centered segment of the given length; each cell receives the
/// length of the segment lying inside it.
fn motion_kernel(length: usize, angle_deg: f64) -> BlurKernel {
    let size = length;
    let r = (size / 2) as f64;
    let theta = angle_deg.to_radians();
    // Image rows grow downward, so a counter-clockwise angle has negative dy.
    let (dx, dy) = (theta.cos(), -theta.sin());
    let half = length as f64 / 2.0;
    let (x0, y0) = (-half * dx, -half * dy);
    let (x1, y1) = (half * dx, half * dy);

    let mut weights = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let cx = col as f64 - r;
            let cy = row as f64 - r;
            weights[row * size + col] = clipped_length(
                (x0, y0),
                (x1, y1),
                (cx - 0.5, cy - 0.5),
                (cx + 0.5, cy + 0.5),
            );
        }
    }
    BlurKernel { size, weights }
}

/// Length of segment `a→b` inside the axis-aligned box `lo..hi`
/// (Liang–Barsky clipping).
fn clipped_length(a: (f64, f64), b: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> f64 {
    let d = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.0, a.0 - lo.0),
        (d.0, hi.0 - a.0),
        (-d.1, a.1 - lo.1),
        (d.1, hi.1 - a.1),
    ] {
        if p.abs() < 1e-15 {
            if q < 0.0 {
                return 0.0;
            }
            continue;
        }
        let t = q / p;
        if p < 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
        if t0 > t1 {
            return 0.0;
        }
    }
    // Segments lying exactly on a shared cell edge would be counted by both
    // neighbours; only the half-open side [lo, hi) keeps them.
    let len = (t1 - t0) * (d.0 * d.0 + d.1 * d.1).sqrt();
    if d.1.abs() < 1e-15 && (a.1 - hi.1).abs() < 1e-12 {
        return 0.0;
    }
    if d.0.abs() < 1e-15 && (a.0 - hi.0).abs() < 1e-12 {
        return 0.0;
    }
    len
}

/// Mirror index without edge repetition, folded until it lies in `0..n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Blurs `image` with `kernel` under reflect padding and clamps to `[0, 1]`.
pub fn apply_kernel(image: &ImagePlane, kernel: &BlurKernel) -> ImagePlane {
    let (w, h) = (image.width, image.height);
    let r = kernel.radius() as isize;
    let mut out = image.clone();
    for c in 0..image.channels {
        let src = image.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for ky in 0..kernel.size {
                    let sy = reflect_index(y as isize + ky as isize - r, h);
                    for kx in 0..kernel.size {
                        let sx = reflect_index(x as isize + kx as isize - r, w);
                        acc += kernel.at(ky, kx) * src[sy * w + sx] as f64;
                    }
                }
                dst[y * w + x] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Returns `(blurred, sharp)`.
pub fn synthesize_pair(sharp: &ImagePlane, spec: &BlurSpec) -> Result<(ImagePlane, ImagePlane)> {
    let kernel = make_blur_kernel(spec)?;
    Ok((apply_kernel(sharp, &kernel), sharp.clone()))
}
