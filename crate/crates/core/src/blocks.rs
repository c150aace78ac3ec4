//! Convolutional building blocks shared by the encoder and decoder.
//!
//! Every block owns a path prefix; its tensors live in a [`ParamStore`] under
//! `prefix/...`. `param_count` is computed from the block's geometry alone so
//! it can be checked against the tensors actually registered.

use rand::{Rng, RngCore};

use crate::autograd::{Tape, Var};
use crate::error::{LmfnError, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Negative slope of the encoder's downsampling activation.
pub const ENCODER_SLOPE: f32 = 0.1;
/// Negative slope used inside distillation blocks.
pub const RFDB_SLOPE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Conv,
    ResBlock,
    DownBlock,
    Upsample,
    Srb,
    Rfdb,
    Alfm,
    Acfm,
}

impl BlockKind {
    pub fn label(&self) -> &'static str {
        match self {
            BlockKind::Conv => "conv",
            BlockKind::ResBlock => "resblock",
            BlockKind::DownBlock => "downblock",
            BlockKind::Upsample => "upsample",
            BlockKind::Srb => "srb",
            BlockKind::Rfdb => "rfdb",
            BlockKind::Alfm => "alfm",
            BlockKind::Acfm => "acfm",
        }
    }
}

/// A parameterized unit of the network.
pub trait Block {
    fn prefix(&self) -> &str;

    fn kind(&self) -> BlockKind;

    /// Number of trainable scalars, derived from geometry.
    fn param_count(&self) -> usize;

    /// Creates this block's tensors in `store`.
    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()>;

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var>;
}

fn check_width(tape: &Tape, x: Var, width: usize, op: &'static str) -> Result<()> {
    let s = tape.shape(x);
    if s.c != width {
        return Err(LmfnError::shape(
            op,
            format!("input {s} has {} channels, block expects {width}", s.c),
        ));
    }
    Ok(())
}

/// Fan-in scaled uniform init on `±1/√fan_in`.
fn fan_in_uniform(shape: Shape, rng: &mut dyn RngCore) -> Tensor {
    let bound = 1.0 / ((shape.c * shape.h * shape.w) as f32).sqrt();
    let data = (0..shape.numel())
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).expect("conv weight shape")
}

/// Square-kernel convolution with "same" zero padding (`k / 2`).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Conv {
            name: name.into(),
            c_in,
            c_out,
            k,
            stride,
        }
    }

    pub fn weight_path(&self) -> String {
        format!("{}/weight", self.name)
    }

    pub fn bias_path(&self) -> String {
        format!("{}/bias", self.name)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.c_out, self.c_in, self.k, self.k)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(self.c_out, 1, 1, 1)
    }
}

impl Block for Conv {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Conv
    }

    fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k + self.c_out
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        store.insert(self.weight_path(), fan_in_uniform(self.weight_shape(), rng))?;
        store.insert(self.bias_path(), Tensor::zeros(self.bias_shape()))
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        check_width(tape, x, self.c_in, "conv")?;
        let w = p.get(&self.weight_path())?;
        let b = p.get(&self.bias_path())?;
        tape.conv2d(x, w, b, self.stride, self.k / 2)
    }
}

/// `x + conv(relu(conv(x)))`, no normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    name: String,
    width: usize,
    conv1: Conv,
    conv2: Conv,
}

impl ResBlock {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        let name = name.into();
        ResBlock {
            conv1: Conv::new(format!("{name}/conv1"), width, width, 3, 1),
            conv2: Conv::new(format!("{name}/conv2"), width, width, 3, 1),
            name,
            width,
        }
    }
}

impl Block for ResBlock {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::ResBlock
    }

    fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        self.conv1.register(store, rng)?;
        self.conv2.register(store, rng)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        check_width(tape, x, self.width, "resblock")?;
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Strided 3×3 convolution followed by leaky ReLU; halves H and W.
#[derive(Clone, Debug, PartialEq)]
pub struct DownBlock {
    name: String,
    conv: Conv,
}

impl DownBlock {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        let name = name.into();
        DownBlock {
            conv: Conv::new(format!("{name}/conv"), c_in, c_out, 3, 2),
            name,
        }
    }
}

impl Block for DownBlock {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::DownBlock
    }

    fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        self.conv.register(store, rng)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
            return Err(LmfnError::shape(
                "downblock",
                format!(
                    "spatial size {}×{} is odd; pad the input to an even size first",
                    s.h, s.w
                ),
            ));
        }
        let h = self.conv.forward(tape, p, x)?;
        tape.leaky_relu(h, ENCODER_SLOPE)
    }
}

/// 3×3 convolution to `4C` channels followed by a ×2 pixel shuffle.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleBlock {
    name: String,
    conv: Conv,
}

impl UpsampleBlock {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        let name = name.into();
        UpsampleBlock {
            conv: Conv::new(format!("{name}/conv"), width, 4 * width, 3, 1),
            name,
        }
    }
}

impl Block for UpsampleBlock {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Upsample
    }

    fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        self.conv.register(store, rng)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv.forward(tape, p, x)?;
        tape.pixel_shuffle(h, 2)
    }
}

/// Shallow residual block: `leaky_relu(x + conv3×3(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Srb {
    name: String,
    width: usize,
    conv: Conv,
}

impl Srb {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        let name = name.into();
        Srb {
            conv: Conv::new(format!("{name}/conv"), width, width, 3, 1),
            name,
            width,
        }
    }
}

impl Block for Srb {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Srb
    }

    fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        self.conv.register(store, rng)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        check_width(tape, x, self.width, "srb")?;
        let h = self.conv.forward(tape, p, x)?;
        let h = tape.add(x, h)?;
        tape.leaky_relu(h, RFDB_SLOPE)
    }
}

/// Residual feature distillation block.
///
/// Three stages each split the running feature into a `C/2` distilled branch
/// (1×1 conv) and a refined full-width branch (SRB). A final 1×1 conv
/// distills the last refined feature; the four distilled branches are
/// concatenated and fused back to `C` channels, then the block input is
/// added.
#[derive(Clone, Debug, PartialEq)]
pub struct Rfdb {
    name: String,
    width: usize,
    distill: [Conv; 3],
    refine: [Srb; 3],
    last: Conv,
    fuse: Conv,
}

impl Rfdb {
    pub fn new(name: impl Into<String>, width: usize) -> Result<Self> {
        let name = name.into();
        if !width.is_multiple_of(2) || width == 0 {
            return Err(LmfnError::InvalidConfig(format!(
                "rfdb width must be even and positive, got {width}"
            )));
        }
        let dc = width / 2;
        let distill =
            std::array::from_fn(|i| Conv::new(format!("{name}/distill{}", i + 1), width, dc, 1, 1));
        let refine = std::array::from_fn(|i| Srb::new(format!("{name}/srb{}", i + 1), width));
        Ok(Rfdb {
            last: Conv::new(format!("{name}/distill4"), width, dc, 1, 1),
            fuse: Conv::new(format!("{name}/fuse"), 4 * dc, width, 1, 1),
            distill,
            refine,
            name,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

impl Block for Rfdb {
    fn prefix(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Rfdb
    }

    fn param_count(&self) -> usize {
        self.distill.iter().map(Conv::param_count).sum::<usize>()
            + self.refine.iter().map(Srb::param_count).sum::<usize>()
            + self.last.param_count()
            + self.fuse.param_count()
    }

    fn register(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        for (d, r) in self.distill.iter().zip(&self.refine) {
            d.register(store, rng)?;
            r.register(store, rng)?;
        }
        self.last.register(store, rng)?;
        self.fuse.register(store, rng)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        check_width(tape, x, self.width, "rfdb")?;
        let mut kept = Vec::with_capacity(4);
        let mut running = x;
        for (d, r) in self.distill.iter().zip(&self.refine) {
            let distilled = d.forward(tape, p, running)?;
            kept.push(tape.leaky_relu(distilled, RFDB_SLOPE)?);
            running = r.forward(tape, p, running)?;
        }
        let tail = self.last.forward(tape, p, running)?;
        kept.push(tape.leaky_relu(tail, RFDB_SLOPE)?);
        let cat = tape.concat(&kept)?;
        let fused = self.fuse.forward(tape, p, cat)?;
        tape.add(x, fused)
    }
}
