//! Full-reference quality metrics on unit-range images.

use crate::error::{LmfnError, Result};
use crate::metrics::ImagePlane;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &ImagePlane, b: &ImagePlane, what: &str) -> Result<()> {
    if !a.same_dims(b) {
        return Err(LmfnError::InvalidArgument(format!(
            "{what}: image dimensions differ ({}×{}×{} vs {}×{}×{})",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b, "mse")?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.values().len() as f64)
}

/// PSNR in dB for peak value 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Normalized 1-D gaussian taps of the SSIM window.
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of a `w×h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], w: usize, h: usize) -> f64 {
    let taps = ssim_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mx = filter_valid(&x, w, h, &taps);
    let my = filter_valid(&y, w, h, &taps);
    let sxx = filter_valid(&xx, w, h, &taps);
    let syy = filter_valid(&yy, w, h, &taps);
    let sxy = filter_valid(&xy, w, h, &taps);

    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM over all fully-covered 11×11 gaussian windows, averaged over
/// channels.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(LmfnError::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {}×{}",
            a.width, a.height
        )));
    }
    let sum: f64 = (0..a.channels)
        .map(|c| ssim_plane(a.channel(c), b.channel(c), a.width, a.height))
        .sum();
    Ok(sum / a.channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f32) -> ImagePlane {
        ImagePlane::from_values(12, 12, 1, vec![v; 144]).unwrap()
    }

    #[test]
    fn identical_images_hit_caps() {
        let a = constant(0.4);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn offset_of_a_tenth_is_twenty_db() {
        let p = psnr(&constant(0.5), &constant(0.6)).unwrap();
        assert!((p - 20.0).abs() < 1e-5, "{p}");
    }

    #[test]
    fn mismatched_or_tiny_images_are_rejected() {
        let a = constant(0.1);
        let b = ImagePlane::new(12, 11, 1).unwrap();
        assert!(psnr(&a, &b).is_err());
        let tiny = ImagePlane::new(10, 10, 1).unwrap();
        assert!(ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn anticorrelated_binary_image_has_negative_ssim() {
        let vals: Vec<f32> = (0..16 * 16)
            .map(|i| ((i / 16 + i % 16) % 2) as f32)
            .collect();
        let inv: Vec<f32> = vals.iter().map(|v| 1.0 - v).collect();
        let a = ImagePlane::from_values(16, 16, 1, vals).unwrap();
        let b = ImagePlane::from_values(16, 16, 1, inv).unwrap();
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn window_is_normalized() {
        assert!((ssim_window().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
