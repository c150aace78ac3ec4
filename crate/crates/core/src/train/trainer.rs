use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LmfnError, Result};
use crate::metrics::ImagePlane;
use crate::model::{LmfnModel, ModelConfig};
use crate::tensor::{Shape, Tensor};
use crate::train::blur::{apply_kernel, make_blur_kernel, BlurSpec};
use crate::train::checkpoint::Checkpoint;
use crate::train::optim::{scheduled_lr, Adam, AdamConfig, BASE_LR, LR_DECAY_EVERY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: u64,
    pub batch_size: usize,
    /// Side of the square training crops.
    pub patch_size: usize,
    pub base_lr: f64,
    pub lr_decay_every: u64,
    pub adam: AdamConfig,
    pub blur: BlurSpec,
    /// A loss record is kept every `log_every` steps and at the last step.
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            steps: 1000,
            batch_size: 4,
            patch_size: 64,
            base_lr: BASE_LR,
            lr_decay_every: LR_DECAY_EVERY,
            adam: AdamConfig::default(),
            blur: BlurSpec::gaussian(1.5),
            log_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.blur.validate()?;
        let m = self.model.multiple();
        if self.batch_size == 0 {
            return Err(LmfnError::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(m) {
            return Err(LmfnError::InvalidArgument(format!(
                "patch_size must be a positive multiple of {m}, got {}",
                self.patch_size
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(LmfnError::InvalidArgument(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        scheduled_lr(self.base_lr, self.lr_decay_every, iteration)
    }
}

/// Blurred/sharp RGB training pairs.
#[derive(Clone, Debug)]
pub struct Dataset {
    pairs: Vec<(ImagePlane, ImagePlane)>,
}

impl Dataset {
    pub fn from_pairs(pairs: Vec<(ImagePlane, ImagePlane)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(LmfnError::InvalidArgument("dataset is empty".into()));
        }
        let pairs = pairs
            .into_iter()
            .map(|(b, s)| {
                if !b.same_dims(&s) {
                    return Err(LmfnError::InvalidArgument(format!(
                        "blurred {}×{} and sharp {}×{} images differ in size",
                        b.width, b.height, s.width, s.height
                    )));
                }
                Ok((b.to_rgb(), s.to_rgb()))
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { pairs })
    }

    /// Blurs each sharp image once with `spec`.
    pub fn synthesize(sharp: Vec<ImagePlane>, spec: &BlurSpec) -> Result<Self> {
        let kernel = make_blur_kernel(spec)?;
        Self::from_pairs(
            sharp
                .into_iter()
                .map(|s| (apply_kernel(&s, &kernel), s))
                .collect(),
        )
    }

    /// Every `.png` in `dir`, in file-name order, blurred with `spec`.
    pub fn load_dir(dir: impl AsRef<Path>, spec: &BlurSpec) -> Result<Self> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| LmfnError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(LmfnError::Image {
                path: dir.to_path_buf(),
                msg: "no PNG images found".into(),
            });
        }
        let images = files
            .iter()
            .map(ImagePlane::load_png)
            .collect::<Result<Vec<_>>>()?;
        Self::synthesize(images, spec)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(ImagePlane, ImagePlane)] {
        &self.pairs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss: f32,
    pub lr: f64,
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss,lr\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.loss, r.lr);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    /// Lowest batch loss seen, with the iteration it occurred at.
    pub best: Option<(u64, f32)>,
    pub trace: Vec<LossRecord>,
}

/// Where [`TrainOutcome::write`] put its files.
#[derive(Clone, Debug)]
pub struct OutputPaths {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

impl OutputPaths {
    pub fn for_checkpoint(out: &Path) -> Self {
        OutputPaths {
            final_checkpoint: out.to_path_buf(),
            best_checkpoint: out.with_extension("best.ckpt"),
            loss_csv: out.with_extension("loss.csv"),
        }
    }
}

impl TrainOutcome {
    /// Writes the final checkpoint to `out`, the best one and the loss
    /// trace next to it.
    pub fn write(&self, out: &Path) -> Result<OutputPaths> {
        let paths = OutputPaths::for_checkpoint(out);
        self.final_checkpoint.save(&paths.final_checkpoint)?;
        self.best_checkpoint.save(&paths.best_checkpoint)?;
        std::fs::write(&paths.loss_csv, loss_csv(&self.trace))
            .map_err(|e| LmfnError::io(&paths.loss_csv, e))?;
        Ok(paths)
    }
}

const STREAM_ORDER: u64 = 0x006f_7264_6572;
const STREAM_CROP: u64 = 0x6372_6f70;

fn keyed_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Deterministic sample order and crops, keyed by seed and sample index.
struct Sampler<'a> {
    data: &'a Dataset,
    seed: u64,
    patch: usize,
    epoch: Option<(u64, Vec<usize>)>,
}

impl<'a> Sampler<'a> {
    fn image_for(&mut self, k: u64) -> usize {
        let n = self.data.len() as u64;
        let epoch = k / n;
        if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.data.len()).collect();
            order.shuffle(&mut keyed_rng(self.seed, STREAM_ORDER, epoch));
            self.epoch = Some((epoch, order));
        }
        self.epoch.as_ref().expect("epoch set").1[(k % n) as usize]
    }

    fn crop(img: &ImagePlane, y0: usize, x0: usize, p: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(3 * p * p);
        for c in 0..3 {
            let plane = img.channel(c);
            for y in y0..y0 + p {
                out.extend_from_slice(&plane[y * img.width + x0..y * img.width + x0 + p]);
            }
        }
        out
    }

    fn batch(&mut self, first: u64, size: usize) -> Result<(Tensor, Tensor)> {
        let p = self.patch;
        let mut blurred = Vec::with_capacity(size * 3 * p * p);
        let mut sharp = Vec::with_capacity(size * 3 * p * p);
        for k in first..first + size as u64 {
            let (b, s) = &self.data.pairs[self.image_for(k)];
            let mut rng = keyed_rng(self.seed, STREAM_CROP, k);
            let y0 = rng.random_range(0..=b.height - p);
            let x0 = rng.random_range(0..=b.width - p);
            blurred.extend(Self::crop(b, y0, x0, p));
            sharp.extend(Self::crop(s, y0, x0, p));
        }
        let shape = Shape::new(size, 3, p, p);
        Ok((
            Tensor::from_vec(shape, blurred)?,
            Tensor::from_vec(shape, sharp)?,
        ))
    }
}

/// Trains a freshly initialized model. Identical inputs give bit-identical
/// checkpoints. `progress` sees every kept loss record.
pub fn train_with(
    data: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let p = config.patch_size;
    if let Some((b, _)) = data.pairs.iter().find(|(b, _)| b.width < p || b.height < p) {
        return Err(LmfnError::InvalidArgument(format!(
            "training image of {}×{} is smaller than the {p}×{p} patch size",
            b.width, b.height
        )));
    }
    let mut model = LmfnModel::new(config.model.clone(), config.seed)?;
    let mut adam = Adam::new(config.adam);
    let mut sampler = Sampler {
        data,
        seed: config.seed,
        patch: p,
        epoch: None,
    };
    let mut trace = Vec::new();
    let mut best: Option<(u64, f32)> = None;
    let mut best_checkpoint = Checkpoint::from_model(&model, None);

    for it in 0..config.steps {
        let lr = config.lr_at(it);
        let (blurred, sharp) = sampler.batch(it * config.batch_size as u64, config.batch_size)?;
        model.params_mut().zero_grad();
        let loss = model.accumulate_gradients(&blurred, &sharp)?;
        if !loss.is_finite() {
            return Err(LmfnError::Numerical(format!(
                "loss became {loss} at step {it}"
            )));
        }
        if best.is_none_or(|(_, l)| loss < l) {
            best = Some((it, loss));
            best_checkpoint = Checkpoint::from_model(&model, None);
        }
        adam.step(model.params_mut(), lr)?;
        if it % config.log_every.max(1) == 0 || it + 1 == config.steps {
            let rec = LossRecord {
                iteration: it,
                loss,
                lr,
            };
            progress(&rec);
            trace.push(rec);
        }
    }
    model.params_mut().zero_grad();
    Ok(TrainOutcome {
        final_checkpoint: Checkpoint::from_model(&model, Some(&adam)),
        best_checkpoint,
        best,
        trace,
    })
}

pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, config, |_| {})
}
