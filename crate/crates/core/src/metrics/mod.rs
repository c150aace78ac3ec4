//! Image I/O, PSNR/SSIM and evaluation reports.

mod image;
mod quality;
mod report;

pub use image::{quantize, ImagePlane};
pub use quality::{
    mse, psnr, psnr_from_mse, ssim, ssim_window, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use report::{evaluate_pairs, report, ImageScore, NamedPair, Report, Timing};
