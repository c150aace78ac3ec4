//! Procedural sharp images for synthetic training and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::metrics::ImagePlane;

/// A random RGB scene: a soft gradient background overlaid with solid
/// rectangles, discs and stripes, giving plenty of hard edges.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> Result<ImagePlane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = ImagePlane::new(width, height, 3)?;
    let (w, h) = (width as f32, height as f32);

    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let tilt: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    let paint = |img: &mut ImagePlane, x: usize, y: usize, color: [f32; 3]| {
        for (c, v) in color.iter().enumerate() {
            img.channel_mut(c)[y * width + x] = *v;
        }
    };
    for y in 0..height {
        for x in 0..width {
            let t = (x as f32 / w + y as f32 / h) * 0.5;
            paint(
                &mut img,
                x,
                y,
                std::array::from_fn(|c| (base[c] + tilt[c] * t).clamp(0.0, 1.0)),
            );
        }
    }

    let shapes = 6 + (width * height / 1024).min(24);
    for _ in 0..shapes {
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let size: f32 = rng.random_range(0.08..0.3) * w.min(h);
        match rng.random_range(0..3) {
            0 => {
                let aspect: f32 = rng.random_range(0.4..2.5);
                let (hw, hh) = (size * aspect.sqrt() / 2.0, size / aspect.sqrt() / 2.0);
                for y in 0..height {
                    for x in 0..width {
                        if (x as f32 - cx).abs() <= hw && (y as f32 - cy).abs() <= hh {
                            paint(&mut img, x, y, color);
                        }
                    }
                }
            }
            1 => {
                let r2 = (size / 2.0).powi(2);
                for y in 0..height {
                    for x in 0..width {
                        if (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2) <= r2 {
                            paint(&mut img, x, y, color);
                        }
                    }
                }
            }
            _ => {
                let period = rng.random_range(3..9) as f32;
                let horizontal = rng.random_bool(0.5);
                for y in 0..height {
                    for x in 0..width {
                        let inside =
                            (x as f32 - cx).abs() <= size && (y as f32 - cy).abs() <= size / 2.0;
                        let phase = if horizontal { y } else { x } as f32;
                        if inside && (phase / period).floor() as i64 % 2 == 0 {
                            paint(&mut img, x, y, color);
                        }
                    }
                }
            }
        }
    }
    Ok(img)
}
