use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lmfn::gradsuite::{run_suite, SuiteOptions};
use lmfn::infer::deblur;
use lmfn::metrics::{evaluate_pairs, ImagePlane, NamedPair};
use lmfn::model::REFERENCE_PARAM_COUNT;
use lmfn::train::{
    load_checkpoint, synthesize_pair, train_with, BlurKind, BlurSpec, Dataset, TrainConfig,
};
use lmfn::{LmfnError, LmfnModel, ModelConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "lmfn", version, about = "Lightweight image deblurring network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Blur a sharp PNG with a synthetic kernel.
    Blur(BlurArgs),
    /// Train a model on the PNG images in a directory.
    Train(TrainArgs),
    /// Deblur one PNG with a trained checkpoint.
    Infer(InferArgs),
    /// Score predictions against targets (files or directories).
    Eval(EvalArgs),
    /// Print parameter counts for a model configuration.
    Params(ParamsArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Gaussian,
    Motion,
}

#[derive(Args, Debug)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Kind,
    /// Gaussian standard deviation in pixels.
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    /// Motion segment length in pixels (odd, at least 3).
    #[arg(long, default_value_t = 9)]
    length: usize,
    /// Motion direction in degrees from +x, in [0, 180).
    #[arg(long, default_value_t = 0.0)]
    angle: f64,
}

impl KernelArgs {
    fn spec(&self, seed: u64) -> BlurSpec {
        BlurSpec {
            kind: match self.kind {
                Kind::Gaussian => BlurKind::Gaussian,
                Kind::Motion => BlurKind::LinearMotion,
            },
            sigma: self.sigma,
            length: self.length,
            angle: self.angle,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct BlurArgs {
    /// Sharp PNG.
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the blurred PNG.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Kernel seed; the built-in kernels are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Full-size network.
    Default,
    /// Reduced network for desk-scale runs.
    Small,
}

/// Model overrides. Unset flags keep the value from `--config`, or else
/// from the preset.
#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Base configuration when no --config is given.
    #[arg(long, value_enum, default_value = "default", conflicts_with = "config")]
    preset: Option<Preset>,
    /// JSON file with ModelConfig fields (params) or TrainConfig fields (train).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder feature width [default: 64, small: 16]
    #[arg(long)]
    encoder_width: Option<usize>,
    /// Decoder feature width [default: 48, small: 16]
    #[arg(long)]
    decoder_width: Option<usize>,
    /// Encoder downsampling rounds [default: 4, small: 2]
    #[arg(long)]
    num_scales: Option<usize>,
    /// Distillation blocks in the decoder [default: 4, small: 2]
    #[arg(long)]
    num_rfdb: Option<usize>,
    /// Multi-scale fusion encoder [default: true]
    #[arg(long, value_name = "BOOL")]
    mshf: Option<bool>,
    /// Distillation blocks, otherwise plain residual blocks [default: true]
    #[arg(long, value_name = "BOOL")]
    rfdb: Option<bool>,
    /// Layer and channel attention [default: true]
    #[arg(long, value_name = "BOOL")]
    attention: Option<bool>,
    /// Downsampling factor of the encoder output [default: 2]
    #[arg(long)]
    fusion_output_scale: Option<usize>,
    /// Add the input image to the prediction [default: false, small: true]
    #[arg(long, value_name = "BOOL")]
    global_skip: Option<bool>,
}

impl ModelArgs {
    fn base(&self) -> ModelConfig {
        match self.preset {
            Some(Preset::Small) => ModelConfig::small(),
            _ => ModelConfig::default(),
        }
    }

    fn apply(&self, c: &mut ModelConfig) {
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.encoder_width, self.encoder_width);
        set(&mut c.decoder_width, self.decoder_width);
        set(&mut c.num_scales, self.num_scales);
        set(&mut c.num_rfdb, self.num_rfdb);
        set(&mut c.fusion_output_scale, self.fusion_output_scale);
        let flag = |dst: &mut bool, v: Option<bool>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        flag(&mut c.mshf_enabled, self.mshf);
        flag(&mut c.rfdb_enabled, self.rfdb);
        flag(&mut c.attention_enabled, self.attention);
        flag(&mut c.global_skip, self.global_skip);
    }

    fn model_config(&self) -> Result<ModelConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => read_json(path)?,
            None => self.base(),
        };
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of sharp PNG images.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint; `.best.ckpt` and `.loss.csv` are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Adam steps [default: 1000]
    #[arg(long)]
    steps: Option<u64>,
    /// Random seed for initialization, sampling and crops [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Crops per step [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Crop side in pixels [default: 64]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Initial learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<f64>,
    /// Steps between tenfold learning-rate decays [default: 500000]
    #[arg(long)]
    lr_decay_every: Option<u64>,
    /// Steps between loss records [default: 10]
    #[arg(long)]
    log_every: Option<u64>,
    /// Training blur kind [default: gaussian]
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Training blur sigma [default: 1.5]
    #[arg(long)]
    sigma: Option<f64>,
    /// Training motion length [default: 3]
    #[arg(long)]
    length: Option<usize>,
    /// Training motion angle in degrees [default: 0]
    #[arg(long)]
    angle: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

impl TrainArgs {
    fn train_config(&self) -> Result<TrainConfig, Failure> {
        let mut c = match &self.model.config {
            Some(path) => read_json(path)?,
            None => TrainConfig {
                model: self.model.base(),
                ..TrainConfig::default()
            },
        };
        self.model.apply(&mut c.model);
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.patch_size {
            c.patch_size = v;
        }
        if let Some(v) = self.lr {
            c.base_lr = v;
        }
        if let Some(v) = self.lr_decay_every {
            c.lr_decay_every = v;
        }
        if let Some(v) = self.log_every {
            c.log_every = v;
        }
        match self.kind {
            Some(Kind::Gaussian) => c.blur.kind = BlurKind::Gaussian,
            Some(Kind::Motion) => c.blur.kind = BlurKind::LinearMotion,
            None => {}
        }
        if let Some(v) = self.sigma {
            c.blur.sigma = v;
        }
        if let Some(v) = self.length {
            c.blur.length = v;
        }
        if let Some(v) = self.angle {
            c.blur.angle = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Blurred PNG of any size.
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the deblurred PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted PNG, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Target PNG, or a directory with the same file names.
    #[arg(long)]
    target: PathBuf,
    /// Checkpoint whose parameter count is added to the report.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Also write per-image scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// List every tensor instead of one line per block.
    #[arg(long)]
    tensors: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// First seed for the random inputs and probed coordinates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to run, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<LmfnError> for Failure {
    fn from(e: LmfnError) -> Self {
        let code = match e {
            LmfnError::Numerical(_) => EXIT_NUMERICAL,
            LmfnError::InvalidArgument(_) | LmfnError::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        msg: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| Failure {
        code: EXIT_DATA,
        msg: format!("{}: {e}", path.display()),
    })
}

fn blur(a: &BlurArgs) -> Result<(), Failure> {
    let sharp = ImagePlane::load_png(&a.input)?;
    let (blurred, _) = synthesize_pair(&sharp, &a.kernel.spec(a.seed))?;
    blurred.save_png(&a.out)?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<(), Failure> {
    let config = a.train_config()?;
    let data = Dataset::load_dir(&a.data, &config.blur)?;
    eprintln!(
        "training {} model ({} parameters) on {} images for {} steps",
        config.model.variant_name(),
        LmfnModel::new(config.model.clone(), config.seed)?.total_param_count(),
        data.len(),
        config.steps
    );
    let outcome = train_with(&data, &config, |r| {
        eprintln!(
            "step {:>7}  loss {:.6}  lr {:.2e}",
            r.iteration, r.loss, r.lr
        )
    })?;
    let paths = outcome.write(&a.out)?;
    println!("checkpoint: {}", paths.final_checkpoint.display());
    match outcome.best {
        Some((it, loss)) => println!(
            "best: {} (loss {loss:.6} at step {it})",
            paths.best_checkpoint.display()
        ),
        None => println!("best: {}", paths.best_checkpoint.display()),
    }
    println!("loss trace: {}", paths.loss_csv.display());
    Ok(())
}

fn infer(a: &InferArgs) -> Result<(), Failure> {
    let model = load_checkpoint(&a.ckpt)?;
    let image = ImagePlane::load_png(&a.input)?;
    deblur(&model, &image)?.save_png(&a.out)?;
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure {
            code: EXIT_DATA,
            msg: format!("{}: {e}", dir.display()),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn eval_pairs(pred: &Path, target: &Path) -> Result<Vec<NamedPair>, Failure> {
    let data_err = |msg: String| Failure {
        code: EXIT_DATA,
        msg,
    };
    match (pred.is_dir(), target.is_dir()) {
        (false, false) => {
            let name = pred
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(vec![(
                name,
                ImagePlane::load_png(pred)?,
                ImagePlane::load_png(target)?,
            )])
        }
        (true, true) => {
            let files = png_files(pred)?;
            if files.is_empty() {
                return Err(data_err(format!("{}: no PNG images found", pred.display())));
            }
            files
                .iter()
                .map(|p| {
                    let name = p.file_name().expect("listed file").to_owned();
                    let t = target.join(&name);
                    if !t.is_file() {
                        return Err(data_err(format!(
                            "{}: no target image for {}",
                            t.display(),
                            p.display()
                        )));
                    }
                    Ok((
                        name.to_string_lossy().into_owned(),
                        ImagePlane::load_png(p)?,
                        ImagePlane::load_png(&t)?,
                    ))
                })
                .collect()
        }
        _ => Err(Failure {
            code: EXIT_USAGE,
            msg: "--pred and --target must both be files or both be directories".into(),
        }),
    }
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let pairs = eval_pairs(&a.pred, &a.target)?;
    let mut report = evaluate_pairs(&pairs)?;
    if let Some(ckpt) = &a.ckpt {
        report.param_count = Some(load_checkpoint(ckpt)?.total_param_count());
    }
    print!("{}", report.to_table());
    if let Some(csv) = &a.csv {
        std::fs::write(csv, report.to_csv()).map_err(|e| Failure {
            code: EXIT_DATA,
            msg: format!("{}: {e}", csv.display()),
        })?;
    }
    Ok(())
}

fn params(a: &ParamsArgs) -> Result<(), Failure> {
    let config = a.model.model_config()?;
    let model = LmfnModel::new(config, 0)?;
    if a.tensors {
        print!("{}", model.summary());
    } else {
        for b in model.breakdown() {
            println!("{:<28} {:<16} {:>10}", b.name, b.kind, b.params);
        }
    }
    let total = model.total_param_count();
    println!(
        "total: {total} ({:.3}M, {})",
        total as f64 / 1e6,
        model.config().variant_name()
    );
    println!(
        "reference: {:.2}M, ratio {:.3}",
        REFERENCE_PARAM_COUNT as f64 / 1e6,
        total as f64 / REFERENCE_PARAM_COUNT as f64
    );
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let options = SuiteOptions::default();
    let mut failed = 0usize;
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds.max(1) {
        let result = run_suite(seed, &options)?;
        for c in &result.cases {
            let err = c.report.max_rel_error();
            let ok = c.report.passed(result.tolerance);
            let checked: usize = c.report.params.iter().map(|p| p.coords_checked).sum();
            let skipped: usize = c.report.params.iter().map(|p| p.coords_skipped).sum();
            println!(
                "seed {seed:>3}  {:<22} {:>10.3e}  {checked:>5} checked {skipped:>5} skipped  {}",
                c.name,
                err,
                if ok { "ok" } else { "FAIL" }
            );
            failed += usize::from(!ok);
        }
        worst = worst.max(result.max_rel_error());
    }
    println!(
        "worst relative error {worst:.3e}, tolerance {:.0e}",
        options.tolerance
    );
    if failed > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            msg: format!("{failed} gradient checks failed"),
        });
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Blur(a) => blur(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Params(a) => params(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn documented_model_defaults_match() {
        let d = ModelConfig::default();
        let s = ModelConfig::small();
        let cmd = Cli::command();
        let params = cmd.find_subcommand("params").unwrap();
        let help = |id: &str| {
            params
                .get_arguments()
                .find(|a| a.get_id() == id)
                .and_then(|a| a.get_help())
                .map(|h| h.to_string())
                .unwrap()
        };
        assert!(help("encoder_width").contains(&format!(
            "[default: {}, small: {}]",
            d.encoder_width, s.encoder_width
        )));
        assert!(help("decoder_width").contains(&format!(
            "[default: {}, small: {}]",
            d.decoder_width, s.decoder_width
        )));
        assert!(help("num_scales").contains(&format!(
            "[default: {}, small: {}]",
            d.num_scales, s.num_scales
        )));
        assert!(
            help("num_rfdb").contains(&format!("[default: {}, small: {}]", d.num_rfdb, s.num_rfdb))
        );
        assert!(help("mshf").contains(&format!("[default: {}]", d.mshf_enabled)));
        assert!(help("rfdb").contains(&format!("[default: {}]", d.rfdb_enabled)));
        assert!(help("attention").contains(&format!("[default: {}]", d.attention_enabled)));
        assert!(
            help("fusion_output_scale").contains(&format!("[default: {}]", d.fusion_output_scale))
        );
        assert!(help("global_skip").contains(&format!(
            "[default: {}, small: {}]",
            d.global_skip, s.global_skip
        )));
    }

    #[test]
    fn documented_train_defaults_match() {
        let d = TrainConfig::default();
        let cmd = Cli::command();
        let train = cmd.find_subcommand("train").unwrap();
        let help = |id: &str| {
            train
                .get_arguments()
                .find(|a| a.get_id() == id)
                .and_then(|a| a.get_help())
                .map(|h| h.to_string())
                .unwrap()
        };
        assert!(help("steps").contains(&format!("[default: {}]", d.steps)));
        assert!(help("seed").contains(&format!("[default: {}]", d.seed)));
        assert!(help("batch_size").contains(&format!("[default: {}]", d.batch_size)));
        assert!(help("patch_size").contains(&format!("[default: {}]", d.patch_size)));
        assert!(help("lr").contains(&format!("[default: {}]", d.base_lr)));
        assert!(help("lr_decay_every").contains(&format!("[default: {}]", d.lr_decay_every)));
        assert!(help("log_every").contains(&format!("[default: {}]", d.log_every)));
        assert!(help("sigma").contains(&format!("[default: {}]", d.blur.sigma)));
        assert!(help("length").contains(&format!("[default: {}]", d.blur.length)));
        assert!(help("angle").contains(&format!("[default: {}]", d.blur.angle)));
    }

    #[test]
    fn flags_override_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"num_rfdb": 3, "decoder_width": 8}"#).unwrap();
        let cli = Cli::try_parse_from([
            "lmfn",
            "params",
            "--config",
            path.to_str().unwrap(),
            "--num-rfdb",
            "5",
        ])
        .unwrap();
        let Command::Params(a) = cli.command else {
            panic!("parsed the wrong command")
        };
        let c = a.model.model_config().unwrap();
        assert_eq!(c.num_rfdb, 5);
        assert_eq!(c.decoder_width, 8);
        assert_eq!(c.encoder_width, ModelConfig::default().encoder_width);
    }

    #[test]
    fn unknown_json_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"num_rfdbs": 3}"#).unwrap();
        let e = read_json::<ModelConfig>(&path).unwrap_err();
        assert_eq!(e.code, EXIT_DATA);
        assert!(e.msg.contains("num_rfdbs"), "{}", e.msg);
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(
            Failure::from(LmfnError::Numerical("nan".into())).code,
            EXIT_NUMERICAL
        );
        assert_eq!(
            Failure::from(LmfnError::InvalidConfig("x".into())).code,
            EXIT_USAGE
        );
        assert_eq!(
            Failure::from(LmfnError::Checkpoint("x".into())).code,
            EXIT_DATA
        );
    }
}
