//! Whole-image inference at arbitrary sizes.

use crate::error::Result;
use crate::metrics::ImagePlane;
use crate::model::LmfnModel;
use crate::tensor::{Shape, Tensor};
use crate::train::blur::reflect_index;

/// Extends a tensor by `pad_h` rows at the bottom and `pad_w` columns at the
/// right, mirroring interior values.
pub fn reflect_pad(t: &Tensor, pad_h: usize, pad_w: usize) -> Tensor {
    let s = t.shape();
    let out_shape = Shape::new(s.n, s.c, s.h + pad_h, s.w + pad_w);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_shape.h {
                let sy = reflect_index(y as isize, s.h);
                for x in 0..out_shape.w {
                    let sx = reflect_index(x as isize, s.w);
                    *out.at_mut(n, c, y, x) = t.at(n, c, sy, sx);
                }
            }
        }
    }
    out
}

/// The top-left `h×w` window of every plane.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..h {
                for x in 0..w {
                    *out.at_mut(n, c, y, x) = t.at(n, c, y, x);
                }
            }
        }
    }
    out
}

/// Deblurs one image of any size: reflect-pads to the model's size
/// multiple, runs the network, crops back and clamps to `[0, 1]`.
/// Gray images are processed as RGB and averaged back to one channel.
pub fn deblur(model: &LmfnModel, image: &ImagePlane) -> Result<ImagePlane> {
    let rgb = image.to_rgb();
    let m = model.config().multiple();
    let (h, w) = (rgb.height, rgb.width);
    let x = reflect_pad(
        &rgb.to_tensor(),
        h.div_ceil(m) * m - h,
        w.div_ceil(m) * m - w,
    );
    let y = crop(&model.predict(&x)?, h, w);
    let out = ImagePlane::from_tensor(&y)?;
    Ok(if image.channels == 1 {
        out.to_gray()
    } else {
        out
    })
}
