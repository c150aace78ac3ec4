use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::error::{LmfnError, Result};
use crate::infer::deblur;
use crate::metrics::{psnr, ssim, ImagePlane};
use crate::model::LmfnModel;

/// A named image pair: `(name, first, second)`.
pub type NamedPair = (String, ImagePlane, ImagePlane);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub seconds_per_image: f64,
    pub hardware: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub scores: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub param_count: Option<usize>,
    pub timing: Option<Timing>,
}

fn hardware_note() -> String {
    format!("{} CPU, single thread", std::env::consts::ARCH)
}

impl Report {
    fn from_scores(scores: Vec<ImageScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(LmfnError::InvalidArgument(
                "no image pairs to evaluate".into(),
            ));
        }
        let n = scores.len() as f64;
        let mean_psnr = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
        Ok(Report {
            scores,
            mean_psnr,
            mean_ssim,
            param_count: None,
            timing: None,
        })
    }

    /// Aligned text table with one row per image and a mean row.
    pub fn to_table(&self) -> String {
        let width = self
            .scores
            .iter()
            .map(|s| s.name.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut t = String::new();
        let _ = writeln!(t, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM");
        for s in &self.scores {
            let _ = writeln!(t, "{:<width$}  {:>9.3}  {:>7.4}", s.name, s.psnr, s.ssim);
        }
        let _ = writeln!(
            t,
            "{:<width$}  {:>9.3}  {:>7.4}",
            "mean", self.mean_psnr, self.mean_ssim
        );
        if let Some(p) = self.param_count {
            let _ = writeln!(t, "parameters: {p} ({:.3}M)", p as f64 / 1e6);
        }
        if let Some(tm) = &self.timing {
            let _ = writeln!(
                t,
                "time per image: {:.4} s ({})",
                tm.seconds_per_image, tm.hardware
            );
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut t = String::from("image,psnr,ssim\n");
        for s in &self.scores {
            let _ = writeln!(t, "{},{},{}", s.name, s.psnr, s.ssim);
        }
        let _ = writeln!(t, "mean,{},{}", self.mean_psnr, self.mean_ssim);
        t
    }
}

/// Scores `(name, prediction, target)` pairs.
pub fn evaluate_pairs(pairs: &[NamedPair]) -> Result<Report> {
    let scores = pairs
        .iter()
        .map(|(name, pred, target)| {
            Ok(ImageScore {
                name: name.clone(),
                psnr: psnr(pred, target)?,
                ssim: ssim(pred, target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Report::from_scores(scores)
}

/// Runs the model on each `(name, blurred, sharp)` pair and scores the
/// predictions against the sharp images, with size and timing columns.
pub fn report(model: &LmfnModel, pairs: &[NamedPair]) -> Result<Report> {
    let mut preds = Vec::with_capacity(pairs.len());
    let start = Instant::now();
    for (name, blurred, sharp) in pairs {
        preds.push((name.clone(), deblur(model, blurred)?, sharp.clone()));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut r = evaluate_pairs(&preds)?;
    r.param_count = Some(model.total_param_count());
    r.timing = Some(Timing {
        seconds_per_image: elapsed / pairs.len() as f64,
        hardware: hardware_note(),
    });
    Ok(r)
}
