//! C ABI over the `lmfn` crate.
//!
//! Models are opaque [`LmfnModelHandle`] pointers created by
//! [`lmfn_model_new`] or [`lmfn_model_load`] and released with
//! [`lmfn_model_free`]. Every fallible function returns an [`LmfnStatus`];
//! on failure [`lmfn_last_error_message`] describes the most recent error on
//! the calling thread. Images cross the boundary as planar `f32` buffers in
//! `[0, 1]`: all of channel 0 row by row, then channel 1, and so on.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lmfn::infer::deblur;
use lmfn::metrics::{psnr, ssim};
use lmfn::train::{load_checkpoint, save_checkpoint};
use lmfn::{ImagePlane, LmfnError, LmfnModel, ModelConfig, Shape, Tensor};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Shape = 4,
    Io = 5,
    Image = 6,
    Checkpoint = 7,
    Numerical = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct LmfnModelHandle {
    model: LmfnModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(LmfnStatus, String);

impl From<LmfnError> for Failure {
    fn from(e: LmfnError) -> Self {
        let status = match &e {
            LmfnError::ShapeMismatch { .. } | LmfnError::InvalidShape { .. } => LmfnStatus::Shape,
            LmfnError::InvalidArgument(_) => LmfnStatus::InvalidArgument,
            LmfnError::InvalidConfig(_) => LmfnStatus::InvalidConfig,
            LmfnError::Numerical(_) => LmfnStatus::Numerical,
            LmfnError::Checkpoint(_) => LmfnStatus::Checkpoint,
            LmfnError::Io { .. } => LmfnStatus::Io,
            LmfnError::Image { .. } => LmfnStatus::Image,
            LmfnError::Backward(_) | LmfnError::Optimizer(_) => LmfnStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LmfnStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LmfnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LmfnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            LmfnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            LmfnStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn handle_ref<'a>(h: *const LmfnModelHandle) -> Result<&'a LmfnModel, Failure> {
    h.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn slice_arg<'a>(p: *const f32, len: usize, what: &str) -> Result<&'a [f32], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn image_len(width: usize, height: usize, channels: usize) -> Result<usize, Failure> {
    width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| {
            Failure(
                LmfnStatus::InvalidArgument,
                "image dimensions overflow".into(),
            )
        })
}

fn publish(model: LmfnModel, out: &mut *mut LmfnModelHandle) {
    *out = Box::into_raw(Box::new(LmfnModelHandle { model }));
}

/// Creates a freshly initialized model.
///
/// `config_json` holds `ModelConfig` fields; missing fields take their
/// defaults and a null pointer means the default configuration.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut LmfnModelHandle,
) -> LmfnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let config = if config_json.is_null() {
            ModelConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| {
                Failure(
                    LmfnStatus::InvalidConfig,
                    format!("configuration JSON: {e}"),
                )
            })?
        };
        publish(LmfnModel::new(config, seed)?, out);
        Ok(())
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_load(
    path: *const c_char,
    out: *mut *mut LmfnModelHandle,
) -> LmfnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        publish(load_checkpoint(str_arg(path, "path")?)?, out);
        Ok(())
    })
}

/// Writes the model's weights to a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_save(
    model: *const LmfnModelHandle,
    path: *const c_char,
) -> LmfnStatus {
    guard(|| {
        save_checkpoint(str_arg(path, "path")?, handle_ref(model)?, None)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_free(model: *mut LmfnModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_param_count(
    model: *const LmfnModelHandle,
    out: *mut usize,
) -> LmfnStatus {
    guard(|| {
        *out_arg(out, "out")? = handle_ref(model)?.total_param_count();
        Ok(())
    })
}

/// Height and width accepted by [`lmfn_model_forward`] must be multiples
/// of this value.
///
/// # Safety
/// `model` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_size_multiple(
    model: *const LmfnModelHandle,
    out: *mut usize,
) -> LmfnStatus {
    guard(|| {
        *out_arg(out, "out")? = handle_ref(model)?.config().multiple();
        Ok(())
    })
}

/// Raw network pass over an `N×3×H×W` batch. Height and width must be
/// multiples of [`lmfn_model_size_multiple`]; the output has the input's
/// shape and is not clamped.
///
/// # Safety
/// `input` and `output` must each hold `batch·3·height·width` floats.
#[no_mangle]
pub unsafe extern "C" fn lmfn_model_forward(
    model: *const LmfnModelHandle,
    input: *const f32,
    batch: usize,
    height: usize,
    width: usize,
    output: *mut f32,
) -> LmfnStatus {
    guard(|| {
        let model = handle_ref(model)?;
        let len = image_len(width, height, 3)?
            .checked_mul(batch)
            .ok_or_else(|| Failure(LmfnStatus::InvalidArgument, "batch overflows".into()))?;
        let x = Tensor::from_vec(
            Shape::new(batch, 3, height, width),
            slice_arg(input, len, "input")?.to_vec(),
        )?;
        if output.is_null() {
            return Err(null("output"));
        }
        let y = model.predict(&x)?;
        std::slice::from_raw_parts_mut(output, len).copy_from_slice(y.data());
        Ok(())
    })
}

/// Deblurs one planar image of any size with 1 or 3 channels. The output
/// has the input's layout and is clamped to `[0, 1]`.
///
/// # Safety
/// `input` and `output` must each hold `width·height·channels` floats.
#[no_mangle]
pub unsafe extern "C" fn lmfn_deblur(
    model: *const LmfnModelHandle,
    input: *const f32,
    width: usize,
    height: usize,
    channels: usize,
    output: *mut f32,
) -> LmfnStatus {
    guard(|| {
        let model = handle_ref(model)?;
        let len = image_len(width, height, channels)?;
        let image = ImagePlane::from_values(
            width,
            height,
            channels,
            slice_arg(input, len, "input")?.to_vec(),
        )?;
        if output.is_null() {
            return Err(null("output"));
        }
        let y = deblur(model, &image)?;
        std::slice::from_raw_parts_mut(output, len).copy_from_slice(y.values());
        Ok(())
    })
}

unsafe fn image_pair(
    a: *const f32,
    b: *const f32,
    width: usize,
    height: usize,
    channels: usize,
) -> Result<(ImagePlane, ImagePlane), Failure> {
    let len = image_len(width, height, channels)?;
    Ok((
        ImagePlane::from_values(width, height, channels, slice_arg(a, len, "a")?.to_vec())?,
        ImagePlane::from_values(width, height, channels, slice_arg(b, len, "b")?.to_vec())?,
    ))
}

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`, capped at 100.
///
/// # Safety
/// `a` and `b` must each hold `width·height·channels` floats; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_psnr(
    a: *const f32,
    b: *const f32,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> LmfnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (a, b) = image_pair(a, b, width, height, channels)?;
        *out = psnr(&a, &b)?;
        Ok(())
    })
}

/// Mean structural similarity over an 11×11 gaussian window, averaged over
/// channels. Both sides must be at least 11 pixels.
///
/// # Safety
/// `a` and `b` must each hold `width·height·channels` floats; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_ssim(
    a: *const f32,
    b: *const f32,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> LmfnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (a, b) = image_pair(a, b, width, height, channels)?;
        *out = ssim(&a, &b)?;
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len` bytes. Returns the full
/// message length including the terminator, so a caller can size its
/// buffer with a first call passing `len = 0`.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn lmfn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lmfn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
