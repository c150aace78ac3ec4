use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{LmfnError, Result};
use crate::tensor::{Shape, Tensor};

/// A planar image with unit-range float samples, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    values: Vec<f32>,
}

impl ImagePlane {
    /// A black image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_values(
            width,
            height,
            channels,
            vec![0.0; width * height * channels],
        )
    }

    /// Wraps planar values, clamping each to `[0, 1]`.
    pub fn from_values(
        width: usize,
        height: usize,
        channels: usize,
        mut values: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(LmfnError::InvalidArgument(format!(
                "image dimensions must be positive, got {width}×{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(LmfnError::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if values.len() != width * height * channels {
            return Err(LmfnError::InvalidArgument(format!(
                "{} values do not fill a {width}×{height}×{channels} image",
                values.len()
            )));
        }
        values
            .iter_mut()
            .for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Ok(ImagePlane {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable access; callers are responsible for keeping values in range.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &ImagePlane) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    /// `1×C×H×W` tensor view of the image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            Shape::new(1, self.channels, self.height, self.width),
            self.values.clone(),
        )
        .expect("image tensor shape")
    }

    /// Builds an image from batch item 0 of a tensor, clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        let item = t.batch_item(0);
        Self::from_values(s.w, s.h, s.c, item.into_data())
    }

    /// The same image with three channels (gray is replicated).
    pub fn to_rgb(&self) -> ImagePlane {
        if self.channels == 3 {
            return self.clone();
        }
        let mut values = Vec::with_capacity(self.values.len() * 3);
        for _ in 0..3 {
            values.extend_from_slice(&self.values);
        }
        ImagePlane {
            channels: 3,
            values,
            ..*self
        }
    }

    /// Channel mean as a single-channel image.
    pub fn to_gray(&self) -> ImagePlane {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.width * self.height;
        let values = (0..n)
            .map(|i| (self.values[i] + self.values[n + i] + self.values[2 * n + i]) / 3.0)
            .collect();
        ImagePlane {
            channels: 1,
            values,
            ..*self
        }
    }

    /// Reads an 8-bit (or lower) gray or RGB PNG; alpha is dropped and
    /// 16-bit samples are reduced to 8 bits.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |msg: String| LmfnError::Image {
            path: path.to_path_buf(),
            msg,
        };
        let file = File::open(path).map_err(|e| LmfnError::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| err("image too large to decode".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| err(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let stride = info.line_size;
        let (src_ch, channels) = match info.color_type {
            png::ColorType::Grayscale => (1, 1),
            png::ColorType::GrayscaleAlpha => (2, 1),
            png::ColorType::Rgb => (3, 3),
            png::ColorType::Rgba => (4, 3),
            png::ColorType::Indexed => return Err(err("palette image was not expanded".into())),
        };
        let mut values = vec![0.0f32; w * h * channels];
        for y in 0..h {
            let row = &buf[y * stride..y * stride + w * src_ch];
            for x in 0..w {
                for c in 0..channels {
                    values[(c * h + y) * w + x] = row[x * src_ch + c] as f32 / 255.0;
                }
            }
        }
        Self::from_values(w, h, channels, values).map_err(|e| err(e.to_string()))
    }

    /// Writes an 8-bit PNG; each sample is stored as `round(v · 255)`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |msg: String| LmfnError::Image {
            path: path.to_path_buf(),
            msg,
        };
        let file = File::create(path).map_err(|e| LmfnError::io(path, e))?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(if self.channels == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| err(e.to_string()))?;
        let (w, h, ch) = (self.width, self.height, self.channels);
        let mut bytes = vec![0u8; w * h * ch];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let v = self.values[(c * h + y) * w + x];
                    bytes[(y * w + x) * ch + c] = quantize(v);
                }
            }
        }
        writer
            .write_image_data(&bytes)
            .map_err(|e| err(e.to_string()))?;
        writer.finish().map_err(|e| err(e.to_string()))
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        for ch in [1, 3] {
            let vals: Vec<f32> = (0..5 * 3 * ch)
                .map(|i| ((i * 37) % 256) as f32 / 255.0)
                .collect();
            let img = ImagePlane::from_values(5, 3, ch, vals).unwrap();
            let p = dir.path().join(format!("rt{ch}.png"));
            img.save_png(&p).unwrap();
            assert_eq!(ImagePlane::load_png(&p).unwrap(), img);
        }
    }

    #[test]
    fn black_and_mid_gray_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("px.png");
        ImagePlane::new(1, 1, 1).unwrap().save_png(&p).unwrap();
        assert_eq!(ImagePlane::load_png(&p).unwrap().values(), &[0.0]);

        let gray = ImagePlane::from_values(1, 1, 1, vec![128.0 / 255.0]).unwrap();
        gray.save_png(&p).unwrap();
        let v = ImagePlane::load_png(&p).unwrap().values()[0];
        assert!((v - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn unreadable_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        let e = ImagePlane::load_png(&p).unwrap_err();
        assert!(e.to_string().contains("broken.png"), "{e}");
        let e = ImagePlane::load_png(dir.path().join("missing.png")).unwrap_err();
        assert!(e.to_string().contains("missing.png"), "{e}");
    }

    #[test]
    fn values_are_clamped() {
        let img = ImagePlane::from_values(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.values(), &[0.0, 1.0]);
    }
}
