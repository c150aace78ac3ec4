//! Central finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Tape, Var};
use crate::error::{LmfnError, Result};
use crate::tensor::Tensor;

/// Largest gradient magnitude below which errors are measured absolutely.
const ABS_FLOOR: f64 = 1e-3;

/// Times the step is halved before a kink-straddling coordinate is skipped.
pub const MAX_HALVINGS: u32 = 3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// `max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, 1e-3)` over
    /// the checked coordinates.
    pub rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates that straddled a kink even at the smallest step.
    pub coords_skipped: usize,
    /// Largest analytic gradient magnitude among the checked coordinates.
    pub max_grad: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.rel_error < tol)
    }
}

/// A named input to the function under test. Only `wrt` inputs are checked.
pub struct CheckInput {
    pub name: String,
    pub value: Tensor,
    pub wrt: bool,
}

impl CheckInput {
    pub fn wrt(name: impl Into<String>, value: Tensor) -> Self {
        CheckInput {
            name: name.into(),
            value,
            wrt: true,
        }
    }

    pub fn fixed(name: impl Into<String>, value: Tensor) -> Self {
        CheckInput {
            name: name.into(),
            value,
            wrt: false,
        }
    }
}

/// Projection weights for a non-scalar output; `None` for scalar outputs.
fn eval<F>(inputs: &[CheckInput], weights: Option<&Tensor>, f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|i| tape.constant(i.value.clone()))
        .collect();
    let y = f(&mut tape, &vars)?;
    let out = tape.value(y);
    let value = match weights {
        None => out.data()[0] as f64,
        Some(w) => {
            if w.shape() != out.shape() {
                return Err(LmfnError::ShapeMismatch {
                    op: "gradcheck",
                    lhs: w.shape(),
                    rhs: out.shape(),
                });
            }
            out.data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        }
    };
    Ok((value, tape.kink_signature()))
}

/// Compares tape gradients against central differences with step `eps`.
///
/// A scalar output of `f` is differentiated directly. Any other output is
/// reduced by a fixed random projection `Σ wᵢ yᵢ` with `wᵢ ~ U(−1, 1)`; the
/// analytic side records the projection on the tape and the numeric side
/// sums it in double precision.
///
/// Coordinates are visited in random order until `max_coords` of each
/// checked input have been compared (`None` compares all). When the `±eps`
/// evaluations fall on different sides of a ReLU kink the step is halved, up
/// to `MAX_HALVINGS` times; a coordinate that still straddles one is skipped.
pub fn gradcheck<F, R>(
    inputs: &mut [CheckInput],
    eps: f32,
    max_coords: Option<usize>,
    rng: &mut R,
    f: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|i| tape.leaf(i.value.clone().with_requires_grad(i.wrt)))
        .collect();
    let y = f(&mut tape, &vars)?;
    let shape = tape.shape(y);
    let weights = (shape.numel() != 1).then(|| Tensor::uniform(shape, -1.0, 1.0, rng));
    let loss = match &weights {
        None => y,
        Some(w) => {
            let w = tape.constant(w.clone());
            let p = tape.hadamard(y, w)?;
            tape.sum(p)?
        }
    };
    tape.backward(loss)?;

    let mut report = GradcheckReport::default();
    for k in 0..inputs.len() {
        if !inputs[k].wrt {
            continue;
        }
        let analytic = tape
            .grad(vars[k])
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].value.numel()]);
        let n = analytic.len();
        let want = max_coords.unwrap_or(n).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut max_diff = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_n = 0.0f64;
        let (mut checked, mut skipped) = (0, 0);
        for &i in &order {
            if checked == want {
                break;
            }
            let orig = inputs[k].value.data()[i];
            let mut numeric = None;
            let mut h = eps;
            for _ in 0..=MAX_HALVINGS {
                let (hi, lo) = (orig + h, orig - h);
                inputs[k].value.data_mut()[i] = hi;
                let (plus, sig_plus) = eval(inputs, weights.as_ref(), &f)?;
                inputs[k].value.data_mut()[i] = lo;
                let (minus, sig_minus) = eval(inputs, weights.as_ref(), &f)?;
                inputs[k].value.data_mut()[i] = orig;
                if sig_plus == sig_minus {
                    // The step actually taken, after rounding `orig ± h` to f32.
                    numeric = Some((plus - minus) / (hi as f64 - lo as f64));
                    break;
                }
                h *= 0.5;
            }
            let Some(numeric) = numeric else {
                skipped += 1;
                continue;
            };
            checked += 1;

            let a = analytic[i] as f64;
            max_diff = max_diff.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        report.params.push(ParamCheck {
            name: inputs[k].name.clone(),
            rel_error: max_diff / max_a.max(max_n).max(ABS_FLOOR),
            coords_checked: checked,
            coords_skipped: skipped,
            max_grad: max_a,
        });
    }
    Ok(report)
}
