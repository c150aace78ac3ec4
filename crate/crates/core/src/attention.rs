//! Layer attention over the stacked distillation-block outputs and the
//! factorized channel/spatial gate over the last block's output.

use rand::RngCore;

use crate::autograd::{Tape, Var};
use crate::blocks::{Block, BlockKind};
use crate::error::{LmfnError, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Default cap on the bytes held by one batch of layer-attention matrices.
pub const DEFAULT_ATTENTION_BUDGET: usize = 256 << 20;

/// Self-attention across every channel of every stacked layer.
///
/// With `F` the `(L·C) × (H·W)` matrix of the stacked features of one batch
/// item, computes `θ · softmax(F·Fᵀ) · F + F`. θ starts at zero, so the
/// module is initially the identity.
pub fn alfm(tape: &mut Tape, stack: Var, theta: Var, budget_bytes: usize) -> Result<Var> {
    let s = tape.shape(stack);
    let rows = s.c;
    let need = s.n * rows * rows * std::mem::size_of::<f32>();
    if need > budget_bytes {
        return Err(LmfnError::InvalidConfig(format!(
            "layer attention over {rows} channels needs {need} bytes for its attention matrices, \
             over the {budget_bytes}-byte budget"
        )));
    }
    let f = tape.reshape(stack, Shape::new(s.n, 1, rows, s.plane()))?;
    let ft = tape.transpose(f)?;
    let logits = tape.matmul(f, ft)?;
    let attn = tape.softmax(logits)?;
    let mixed = tape.matmul(attn, f)?;
    let scaled = tape.scale_by(mixed, theta)?;
    let out = tape.add(scaled, f)?;
    tape.reshape(out, s)
}

/// Pseudo-3D attention gate: `x + α · sigmoid(conv_c(conv_s(x))) ⊙ x`.
///
/// `conv_s` is one 3×3 kernel applied to every channel slice; `conv_c` is one
/// length-3 kernel sliding along the channel axis at each pixel. Both use
/// zero padding of 1 and a single bias.
#[allow(clippy::too_many_arguments)]
pub fn acfm(
    tape: &mut Tape,
    x: Var,
    w_spatial: Var,
    b_spatial: Var,
    w_channel: Var,
    b_channel: Var,
    alpha: Var,
) -> Result<Var> {
    let s = tape.shape(x);
    let slices = tape.reshape(x, Shape::new(s.n * s.c, 1, s.h, s.w))?;
    let spatial = tape.conv2d(slices, w_spatial, b_spatial, 1, 1)?;
    let volume = tape.reshape(spatial, Shape::new(s.n, 1, s.c, s.plane()))?;
    let channel = tape.conv2d_padded(volume, w_channel, b_channel, 1, (1, 0))?;
    let logits = tape.reshape(channel, s)?;
    let gate = tape.sigmoid(logits)?;
    let gated = tape.hadamard(gate, x)?;
    let scaled = tape.scale_by(gated, alpha)?;
    tape.add(x, scaled)
}

/// Layer attention fusion module: a single learnable θ.
#[derive(Clone, Debug, PartialEq)]
pub struct Alfm {
    name: String,
    layers: usize,
    width: usize,
    budget_bytes: usize,
}

impl Alfm {
    pub fn new(name: impl Into<String>, layers: usize, width: usize) -> Self {
        Alfm {
            name: name.into(),
            layers,
            width,
            budget_bytes: DEFAULT_ATTENTION_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget_bytes: usize) -> Self {
        self.budget_bytes = budget_bytes;
        self
    }

    pub fn theta_path(&self) -> String {
        format!("{}/theta", self.name)
    }

    /// Fuses the layer outputs, returning them concatenated along channels.
    pub fn fuse(&self, tape: &mut Tape, p: &Bound, layers: &[Var]) -> Result<Var> {
        if layers.len() != self.layers {
            return Err(LmfnError::InvalidConfig(format!(
                "alfm expects {} layers, got {}",
                self.layers,
                layers.len()
            )));
        }
        for &l in layers {
            let s = tape.shape(l);
            if s.c != self.width {
                return Err(LmfnError::shape(
                    "alfm",
                    format!("layer {s} does not have {} channels", self.width),
                ));
            }
        }
        let stack = tape.concat(layers)?;
        let theta = p.get(&self.theta_path())?;
        alfm(tape, stack, theta, self.budget_bytes)
    }
}

impl Block for Alfm {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Alfm
    }

    fn param_count(&self) -> usize {
        1
    }

    fn register(&self, store: &mut ParamStore, _rng: &mut dyn RngCore) -> Result<()> {
        store.insert(self.theta_path(), Tensor::scalar(0.0))
    }

    /// Applies attention to an already-stacked `N×(L·C)×H×W` input.
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.c != self.layers * self.width {
            return Err(LmfnError::shape(
                "alfm",
                format!(
                    "stack {s} does not have {}×{} channels",
                    self.layers, self.width
                ),
            ));
        }
        let theta = p.get(&self.theta_path())?;
        alfm(tape, x, theta, self.budget_bytes)
    }
}

/// Attention channel fusion module: 15 trainable scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Acfm {
    name: String,
}

impl Acfm {
    pub fn new(name: impl Into<String>) -> Self {
        Acfm { name: name.into() }
    }

    fn path(&self, leaf: &str) -> String {
        format!("{}/{leaf}", self.name)
    }

    pub fn alpha_path(&self) -> String {
        self.path("alpha")
    }
}

impl Block for Acfm {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Acfm
    }

    fn param_count(&self) -> usize {
        9 + 1 + 3 + 1 + 1
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        use rand::Rng;
        // Fan-in scaled uniform init for the two small kernels.
        let mut kernel = |shape: Shape, fan_in: f32| {
            let bound = (1.0 / fan_in).sqrt();
            let data = (0..shape.numel())
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::from_vec(shape, data).expect("acfm kernel shape")
        };
        let ws = kernel(Shape::new(1, 1, 3, 3), 9.0);
        let wc = kernel(Shape::new(1, 1, 3, 1), 3.0);
        store.insert(self.path("spatial/weight"), ws)?;
        store.insert(self.path("spatial/bias"), Tensor::zeros(Shape::scalar()))?;
        store.insert(self.path("channel/weight"), wc)?;
        store.insert(self.path("channel/bias"), Tensor::zeros(Shape::scalar()))?;
        store.insert(self.alpha_path(), Tensor::scalar(0.0))
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        acfm(
            tape,
            x,
            p.get(&self.path("spatial/weight"))?,
            p.get(&self.path("spatial/bias"))?,
            p.get(&self.path("channel/weight"))?,
            p.get(&self.path("channel/bias"))?,
            p.get(&self.alpha_path())?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alfm_zero_theta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform([2, 12, 3, 3], -2.0, 2.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let theta = tape.param(Tensor::scalar(0.0));
        let y = alfm(&mut tape, xv, theta, DEFAULT_ATTENTION_BUDGET).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn alfm_single_channel_scales_by_one_plus_theta() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let theta = tape.param(Tensor::scalar(0.5));
        let y = alfm(&mut tape, xv, theta, DEFAULT_ATTENTION_BUDGET).unwrap();
        for (o, i) in tape.value(y).data().iter().zip(x.data()) {
            assert!((o - 1.5 * i).abs() < 1e-6);
        }
    }

    #[test]
    fn alfm_budget_guard_rejects() {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::zeros([1, 64, 2, 2]));
        let theta = tape.param(Tensor::scalar(0.0));
        let err = alfm(&mut tape, xv, theta, 64 * 64 * 4 - 1).unwrap_err();
        assert!(err.to_string().contains("budget"));
    }

    #[test]
    fn acfm_zero_alpha_is_identity_and_zero_input_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Acfm::new("acfm");
        let mut store = ParamStore::new();
        m.register(&mut store, &mut rng).unwrap();
        assert_eq!(store.numel(), m.param_count());
        assert_eq!(m.param_count(), 15);

        let x = Tensor::uniform([2, 6, 5, 5], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = m.forward(&mut tape, &p, xv).unwrap();
        assert_eq!(tape.value(y), &x);

        store.get_mut("acfm/alpha").unwrap().data_mut()[0] = 3.0;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let zv = tape.constant(Tensor::zeros([1, 6, 5, 5]));
        let y = m.forward(&mut tape, &p, zv).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
