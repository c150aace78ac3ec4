//! Finite-difference checks over every differentiable op, every block and a
//! small full model.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{Acfm, Alfm};
use crate::autograd::gradcheck::{gradcheck, CheckInput, GradcheckReport};
use crate::autograd::{Tape, Var};
use crate::blocks::{Block, DownBlock, ResBlock, Rfdb, Srb, UpsampleBlock};
use crate::error::Result;
use crate::model::{LmfnModel, ModelConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Central-difference half step. Smaller steps drown the smallest model
/// gradients (around 1e-3) in single-precision rounding noise.
pub const DEFAULT_EPS: f32 = 3e-2;
pub const DEFAULT_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub eps: f32,
    pub tolerance: f64,
    /// Coordinates compared per input tensor.
    pub coords: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            eps: DEFAULT_EPS,
            tolerance: DEFAULT_TOLERANCE,
            coords: 12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: GradcheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub seed: u64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.report.passed(self.tolerance))
    }

    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases
            .iter()
            .filter(|c| !c.report.passed(self.tolerance))
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.report.max_rel_error())
            .fold(0.0, f64::max)
    }
}

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<CheckInput>,
    f: CaseFn,
}

fn rand_t(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Uniform values at least `margin` away from zero.
fn off_kink(shape: [usize; 4], margin: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = rand_t(shape, rng);
    for v in t.data_mut() {
        while v.abs() < margin {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    t
}

fn case(
    name: &'static str,
    inputs: Vec<CheckInput>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        inputs,
        f: Box::new(f),
    }
}

fn op_cases(rng: &mut ChaCha8Rng, eps: f32) -> Vec<Case> {
    let w = CheckInput::wrt;
    vec![
        case(
            "conv2d",
            vec![
                w("x", rand_t([2, 3, 5, 5], rng)),
                w("weight", rand_t([4, 3, 3, 3], rng)),
                w("bias", rand_t([4, 1, 1, 1], rng)),
            ],
            |t, v| t.conv2d(v[0], v[1], v[2], 1, 1),
        ),
        case(
            "conv2d_stride2",
            vec![
                w("x", rand_t([1, 2, 6, 6], rng)),
                w("weight", rand_t([3, 2, 3, 3], rng)),
                w("bias", rand_t([3, 1, 1, 1], rng)),
            ],
            |t, v| t.conv2d(v[0], v[1], v[2], 2, 1),
        ),
        case(
            "conv2d_column",
            vec![
                w("x", rand_t([1, 1, 5, 4], rng)),
                w("weight", rand_t([1, 1, 3, 1], rng)),
                w("bias", rand_t([1, 1, 1, 1], rng)),
            ],
            |t, v| t.conv2d_padded(v[0], v[1], v[2], 1, (1, 0)),
        ),
        case(
            "pixel_shuffle",
            vec![w("x", rand_t([1, 8, 3, 3], rng))],
            |t, v| t.pixel_shuffle(v[0], 2),
        ),
        case(
            "pixel_unshuffle",
            vec![w("x", rand_t([1, 2, 4, 6], rng))],
            |t, v| t.pixel_unshuffle(v[0], 2),
        ),
        case(
            "add",
            vec![
                w("a", rand_t([1, 2, 3, 3], rng)),
                w("b", rand_t([1, 2, 3, 3], rng)),
            ],
            |t, v| t.add(v[0], v[1]),
        ),
        case(
            "hadamard",
            vec![
                w("a", rand_t([1, 2, 3, 3], rng)),
                w("b", rand_t([1, 2, 3, 3], rng)),
            ],
            |t, v| t.hadamard(v[0], v[1]),
        ),
        case(
            "relu",
            vec![w("x", off_kink([1, 2, 3, 3], 10.0 * eps, rng))],
            |t, v| t.relu(v[0]),
        ),
        case(
            "leaky_relu",
            vec![w("x", off_kink([1, 2, 3, 3], 10.0 * eps, rng))],
            |t, v| t.leaky_relu(v[0], 0.05),
        ),
        case(
            "sigmoid",
            vec![w("x", rand_t([1, 2, 3, 3], rng))],
            |t, v| t.sigmoid(v[0]),
        ),
        case(
            "scale_by",
            vec![
                w("x", rand_t([1, 2, 3, 3], rng)),
                w("s", rand_t([1, 1, 1, 1], rng)),
            ],
            |t, v| t.scale_by(v[0], v[1]),
        ),
        case(
            "concat",
            vec![
                w("a", rand_t([2, 1, 3, 3], rng)),
                w("b", rand_t([2, 3, 3, 3], rng)),
                w("c", rand_t([2, 2, 3, 3], rng)),
            ],
            |t, v| t.concat(&[v[0], v[1], v[2]]),
        ),
        case(
            "reshape",
            vec![w("x", rand_t([1, 2, 3, 4], rng))],
            |t, v| t.reshape(v[0], Shape::new(2, 3, 2, 2)),
        ),
        case(
            "transpose",
            vec![w("x", rand_t([2, 1, 3, 4], rng))],
            |t, v| t.transpose(v[0]),
        ),
        case(
            "matmul",
            vec![
                w("a", rand_t([1, 2, 3, 4], rng)),
                w("b", rand_t([1, 2, 4, 5], rng)),
            ],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "softmax",
            vec![w("x", rand_t([1, 2, 4, 5], rng))],
            |t, v| t.softmax(v[0]),
        ),
        case(
            "mse_loss",
            vec![
                w("pred", rand_t([1, 2, 3, 3], rng)),
                w("target", rand_t([1, 2, 3, 3], rng)),
            ],
            |t, v| t.mse_loss(v[0], v[1]),
        ),
        case("sum", vec![w("x", rand_t([1, 2, 3, 3], rng))], |t, v| {
            t.sum(v[0])
        }),
    ]
}

/// A block check: the input plus every registered parameter is checked.
fn block_case(
    name: &'static str,
    block: impl Block + 'static,
    input: [usize; 4],
    overrides: &[(&str, f32)],
    rng: &mut ChaCha8Rng,
) -> Result<Case> {
    let mut store = ParamStore::new();
    block.register(&mut store, rng)?;
    for (suffix, value) in overrides {
        let path = format!("{}/{suffix}", block.prefix());
        if let Some(t) = store.get_mut(&path) {
            t.data_mut()[0] = *value;
        }
    }
    let mut inputs = vec![CheckInput::wrt("x", rand_t(input, rng))];
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    inputs.extend(store.iter().map(|(n, t)| CheckInput::wrt(n, t.clone())));
    Ok(case(name, inputs, move |t, v| {
        let p = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
        block.forward(t, &p, v[0])
    }))
}

/// Image fed to the full-model check.
pub const MODEL_INPUT: [usize; 4] = [1, 3, 4, 4];

/// Configuration of the full-model check.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder_width: 4,
        decoder_width: 4,
        num_scales: 2,
        num_rfdb: 2,
        ..ModelConfig::default()
    }
}

fn model_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut model = LmfnModel::new(tiny_model_config(), rng.next_u64())?;
    // Nonzero attention scales so both attention paths carry gradient.
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with("/theta") || name.ends_with("/alpha") {
            t.data_mut()[0] = 0.5;
        }
    }
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs = vec![CheckInput::wrt(
        "image",
        Tensor::uniform(MODEL_INPUT, 0.0, 1.0, rng),
    )];
    inputs.extend(
        model
            .params()
            .iter()
            .map(|(n, t)| CheckInput::wrt(n, t.clone())),
    );
    Ok(case("model", inputs, move |t, v| {
        let p = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
        model.forward(t, &p, v[0])
    }))
}

fn all_cases(rng: &mut ChaCha8Rng, eps: f32) -> Result<Vec<Case>> {
    let mut cases = op_cases(rng, eps);
    cases.push(block_case(
        "resblock",
        ResBlock::new("res", 4),
        [1, 4, 6, 6],
        &[],
        rng,
    )?);
    cases.push(block_case(
        "downblock",
        DownBlock::new("down", 3, 4),
        [1, 3, 6, 6],
        &[],
        rng,
    )?);
    cases.push(block_case(
        "upsample",
        UpsampleBlock::new("up", 3),
        [1, 3, 3, 3],
        &[],
        rng,
    )?);
    cases.push(block_case(
        "srb",
        Srb::new("srb", 4),
        [1, 4, 5, 5],
        &[],
        rng,
    )?);
    cases.push(block_case(
        "rfdb",
        Rfdb::new("rfdb", 4)?,
        [1, 4, 5, 5],
        &[],
        rng,
    )?);
    cases.push(block_case(
        "alfm",
        Alfm::new("alfm", 3, 2),
        [2, 6, 3, 3],
        &[("theta", 0.5)],
        rng,
    )?);
    cases.push(block_case(
        "acfm",
        Acfm::new("acfm"),
        [1, 4, 5, 5],
        &[("alpha", 0.7)],
        rng,
    )?);
    cases.push(model_case(rng)?);
    Ok(cases)
}

/// Runs every check once with inputs drawn from `seed`.
pub fn run_suite(seed: u64, options: &SuiteOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = all_cases(&mut rng, options.eps)?;
    let mut results = Vec::with_capacity(cases.len());
    for mut c in cases {
        let report = gradcheck(
            &mut c.inputs,
            options.eps,
            Some(options.coords),
            &mut rng,
            &c.f,
        )?;
        results.push(CaseResult {
            name: c.name,
            report,
        });
    }
    Ok(SuiteResult {
        seed,
        tolerance: options.tolerance,
        cases: results,
    })
}

/// Names of every checked case, in suite order.
pub fn case_names() -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    all_cases(&mut rng, DEFAULT_EPS)
        .map(|cs| cs.iter().map(|c| c.name).collect())
        .unwrap_or_default()
}
