//! The full encoder-decoder network.
//!
//! Encoder: a 3×3 head conv, then `num_scales` rounds of downblock + resblock.
//! Adjacent scales are fused top-down (`g_i = f_i + up(g_{i+1})`) and the
//! fused feature at `1/fusion_output_scale` resolution is projected to the
//! decoder width by a 1×1 transition conv.
//!
//! Decoder: a chain of distillation blocks. Their outputs pass through layer
//! attention and a 1×1 merge conv; the last output passes through the channel
//! attention gate; the two are summed, upsampled back to full resolution and
//! projected to RGB.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Acfm, Alfm, DEFAULT_ATTENTION_BUDGET};
use crate::autograd::{Tape, Var};
use crate::blocks::{Block, Conv, DownBlock, ResBlock, Rfdb, UpsampleBlock};
use crate::error::{LmfnError, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Model size reported for the reference network, in parameters.
pub const REFERENCE_PARAM_COUNT: usize = 1_250_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_width: usize,
    pub decoder_width: usize,
    pub num_scales: usize,
    pub num_rfdb: usize,
    pub mshf_enabled: bool,
    pub rfdb_enabled: bool,
    pub attention_enabled: bool,
    /// Downsampling factor of the encoder output; a power of two.
    pub fusion_output_scale: usize,
    /// Adds the input image to the prediction.
    pub global_skip: bool,
    pub attention_budget_bytes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_width: 64,
            decoder_width: 48,
            num_scales: 4,
            num_rfdb: 4,
            mshf_enabled: true,
            rfdb_enabled: true,
            attention_enabled: true,
            fusion_output_scale: 2,
            global_skip: false,
            attention_budget_bytes: DEFAULT_ATTENTION_BUDGET,
        }
    }
}

impl ModelConfig {
    /// The reduced network used for desk-scale training runs. It predicts
    /// a correction added to the input.
    pub fn small() -> Self {
        ModelConfig {
            encoder_width: 16,
            decoder_width: 16,
            num_scales: 2,
            num_rfdb: 2,
            global_skip: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LmfnError::InvalidConfig(msg));
        if self.num_rfdb < 1 {
            return bad("num_rfdb must be at least 1".into());
        }
        if self.num_scales < 1 {
            return bad("num_scales must be at least 1".into());
        }
        for (name, w) in [
            ("encoder_width", self.encoder_width),
            ("decoder_width", self.decoder_width),
        ] {
            if w < 4 || w % 2 != 0 {
                return bad(format!("{name} must be even and at least 4, got {w}"));
            }
        }
        let s = self.fusion_output_scale;
        if !s.is_power_of_two() || s < 2 || s > self.multiple() {
            return bad(format!(
                "fusion_output_scale must be a power of two between 2 and 2^num_scales = {}, got {s}",
                self.multiple()
            ));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn multiple(&self) -> usize {
        1usize
            .checked_shl(self.num_scales as u32)
            .unwrap_or(usize::MAX)
    }

    /// Scale level (1 = half resolution) of the encoder output.
    fn output_level(&self) -> usize {
        self.fusion_output_scale.trailing_zeros() as usize
    }

    /// Channel width of the decoder body.
    pub fn body_width(&self) -> usize {
        if self.rfdb_enabled {
            self.decoder_width
        } else {
            self.encoder_width
        }
    }

    fn disabled_flags(&self) -> usize {
        [self.mshf_enabled, self.rfdb_enabled, self.attention_enabled]
            .iter()
            .filter(|f| !**f)
            .count()
    }

    pub fn variant_name(&self) -> &'static str {
        match (self.mshf_enabled, self.rfdb_enabled, self.attention_enabled) {
            (true, true, true) => "full",
            (false, true, true) => "no-mshf",
            (true, false, true) => "no-rfdb",
            (true, true, false) => "no-attention",
            _ => "custom",
        }
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    Mshf {
        down: Vec<DownBlock>,
        res: Vec<ResBlock>,
        /// `up[k]` lifts the fused feature at level `out + k + 1` onto level
        /// `out + k`, where `out` is the encoder output level.
        up: Vec<UpsampleBlock>,
    },
    /// Stride-2 convs, each followed by two resblocks; no cross-scale fusion.
    Plain {
        stages: Vec<(DownBlock, ResBlock, ResBlock)>,
    },
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Body {
    Rfdb(Rfdb),
    Res(ResBlock),
}

impl Body {
    fn block(&self) -> &dyn Block {
        match self {
            Body::Rfdb(b) => b,
            Body::Res(b) => b,
        }
    }
}

#[derive(Clone, Debug)]
enum Fusion {
    Attention { alfm: Alfm, acfm: Acfm, merge: Conv },
    Concat { merge: Conv },
}

#[derive(Clone, Debug)]
struct Architecture {
    head: Conv,
    encoder: Encoder,
    transition: Option<Conv>,
    body: Vec<Body>,
    fusion: Fusion,
    tail: Vec<UpsampleBlock>,
    out: Conv,
}

impl Architecture {
    fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ew = cfg.encoder_width;
        let bw = cfg.body_width();
        let level = cfg.output_level();

        let encoder = if cfg.mshf_enabled {
            Encoder::Mshf {
                down: (1..=cfg.num_scales)
                    .map(|i| DownBlock::new(format!("mshf/down{i}"), ew, ew))
                    .collect(),
                res: (1..=cfg.num_scales)
                    .map(|i| ResBlock::new(format!("mshf/res{i}"), ew))
                    .collect(),
                up: (level..cfg.num_scales)
                    .map(|i| UpsampleBlock::new(format!("mshf/up{}", i + 1), ew))
                    .collect(),
            }
        } else {
            Encoder::Plain {
                stages: (1..=level)
                    .map(|i| {
                        (
                            DownBlock::new(format!("plain/down{i}"), ew, ew),
                            ResBlock::new(format!("plain/res{i}a"), ew),
                            ResBlock::new(format!("plain/res{i}b"), ew),
                        )
                    })
                    .collect(),
            }
        };

        let body = (1..=cfg.num_rfdb)
            .map(|k| {
                Ok(if cfg.rfdb_enabled {
                    Body::Rfdb(Rfdb::new(format!("rfdb{k}"), bw)?)
                } else {
                    Body::Res(ResBlock::new(format!("res{k}"), bw))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let merge = Conv::new("merge", cfg.num_rfdb * bw, bw, 1, 1);
        let fusion = if cfg.attention_enabled {
            Fusion::Attention {
                alfm: Alfm::new("alfm", cfg.num_rfdb, bw).with_budget(cfg.attention_budget_bytes),
                acfm: Acfm::new("acfm"),
                merge,
            }
        } else {
            Fusion::Concat { merge }
        };

        Ok(Architecture {
            head: Conv::new("head", 3, ew, 3, 1),
            encoder,
            transition: cfg
                .rfdb_enabled
                .then(|| Conv::new("transition", ew, bw, 1, 1)),
            body,
            fusion,
            tail: (1..=level)
                .map(|i| UpsampleBlock::new(format!("tail/up{i}"), bw))
                .collect(),
            out: Conv::new("out", bw, 3, 3, 1),
        })
    }

    /// Every block in registration order.
    fn blocks(&self) -> Vec<&dyn Block> {
        let mut v: Vec<&dyn Block> = vec![&self.head];
        match &self.encoder {
            Encoder::Mshf { down, res, up } => {
                for (d, r) in down.iter().zip(res) {
                    v.push(d);
                    v.push(r);
                }
                v.extend(up.iter().map(|u| u as &dyn Block));
            }
            Encoder::Plain { stages } => {
                for (d, a, b) in stages {
                    v.push(d);
                    v.push(a);
                    v.push(b);
                }
            }
        }
        if let Some(t) = &self.transition {
            v.push(t);
        }
        v.extend(self.body.iter().map(Body::block));
        match &self.fusion {
            Fusion::Attention { alfm, acfm, merge } => {
                v.push(alfm);
                v.push(acfm);
                v.push(merge);
            }
            Fusion::Concat { merge } => v.push(merge),
        }
        v.extend(self.tail.iter().map(|u| u as &dyn Block));
        v.push(&self.out);
        v
    }
}

/// One row of the parameter breakdown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockCount {
    pub name: String,
    pub kind: &'static str,
    pub params: usize,
}

#[derive(Clone, Debug)]
pub struct LmfnModel {
    config: ModelConfig,
    arch: Architecture,
    store: ParamStore,
}

impl LmfnModel {
    /// Builds and initializes a model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for b in arch.blocks() {
            b.register(&mut store, &mut rng)?;
        }
        Ok(LmfnModel {
            config,
            arch,
            store,
        })
    }

    /// Builds a canonical ablation variant: at most one of the three
    /// component flags may be disabled.
    pub fn build_ablation(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.disabled_flags() > 1 {
            return Err(LmfnError::InvalidConfig(
                "ablation variants disable at most one of mshf_enabled, rfdb_enabled, attention_enabled".into(),
            ));
        }
        Self::new(config, seed)
    }

    /// Rebuilds a model from stored parameters, checking that every expected
    /// tensor is present with the right shape and that nothing is left over.
    pub fn from_params(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let template = Self::new(config, 0)?;
        if template.store.len() != store.len() {
            return Err(LmfnError::Checkpoint(format!(
                "expected {} parameter tensors for this configuration, found {}",
                template.store.len(),
                store.len()
            )));
        }
        let mut ordered = ParamStore::new();
        for (name, t) in template.store.iter() {
            let got = store
                .get(name)
                .ok_or_else(|| LmfnError::Checkpoint(format!("missing parameter {name:?}")))?;
            if got.shape() != t.shape() {
                return Err(LmfnError::Checkpoint(format!(
                    "parameter {name:?} has shape {}, expected {}",
                    got.shape(),
                    t.shape()
                )));
            }
            ordered.insert(name, got.clone())?;
        }
        Ok(LmfnModel {
            config: template.config,
            arch: template.arch,
            store: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Analytic per-block parameter counts, in registration order.
    pub fn breakdown(&self) -> Vec<BlockCount> {
        self.arch
            .blocks()
            .into_iter()
            .map(|b| BlockCount {
                name: b.prefix().to_string(),
                kind: b.kind().label(),
                params: b.param_count(),
            })
            .collect()
    }

    /// Sum of the analytic per-block counts.
    pub fn total_param_count(&self) -> usize {
        self.breakdown().iter().map(|b| b.params).sum()
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != 3 {
            return Err(LmfnError::shape(
                "lmfn",
                format!("expected a 3-channel image batch, got {s}"),
            ));
        }
        let m = self.config.multiple();
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            let ph = s.h.div_ceil(m) * m - s.h;
            let pw = s.w.div_ceil(m) * m - s.w;
            return Err(LmfnError::shape(
                "lmfn",
                format!(
                    "height and width must be multiples of {m}; pad {s} by {ph} rows and {pw} columns"
                ),
            ));
        }
        Ok(())
    }

    /// Encoder: image to the fused small-scale feature at decoder width.
    pub fn mshf_encode(&self, tape: &mut Tape, p: &Bound, image: Var) -> Result<Var> {
        self.check_input(tape.shape(image))?;
        let f0 = self.arch.head.forward(tape, p, image)?;
        let level = self.config.output_level();
        let fused = match &self.arch.encoder {
            Encoder::Mshf { down, res, up } => {
                let mut feats = Vec::with_capacity(down.len());
                let mut f = f0;
                for (d, r) in down.iter().zip(res) {
                    f = d.forward(tape, p, f)?;
                    f = r.forward(tape, p, f)?;
                    feats.push(f);
                }
                // feats[i] is level i + 1; fuse from the coarsest down to `level`.
                let mut g = feats[feats.len() - 1];
                for i in (level..feats.len()).rev() {
                    let lifted = up[i - level].forward(tape, p, g)?;
                    g = tape.add(feats[i - 1], lifted)?;
                }
                g
            }
            Encoder::Plain { stages } => {
                let mut f = f0;
                for (d, a, b) in stages {
                    f = d.forward(tape, p, f)?;
                    f = a.forward(tape, p, f)?;
                    f = b.forward(tape, p, f)?;
                }
                f
            }
        };
        match &self.arch.transition {
            Some(t) => t.forward(tape, p, fused),
            None => Ok(fused),
        }
    }

    /// Decoder body and fusion, stopping before upsampling.
    pub fn decoder_feature(&self, tape: &mut Tape, p: &Bound, f: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.arch.body.len());
        let mut d = f;
        for b in &self.arch.body {
            d = b.block().forward(tape, p, d)?;
            outs.push(d);
        }
        let last = d;
        match &self.arch.fusion {
            Fusion::Attention { alfm, acfm, merge } => {
                let stack = alfm.fuse(tape, p, &outs)?;
                let a = merge.forward(tape, p, stack)?;
                let c = acfm.forward(tape, p, last)?;
                tape.add(a, c)
            }
            Fusion::Concat { merge } => {
                let stack = tape.concat(&outs)?;
                let a = merge.forward(tape, p, stack)?;
                tape.add(a, last)
            }
        }
    }

    /// Decoder: fused feature back to a full-resolution RGB image.
    pub fn mffd_decode(&self, tape: &mut Tape, p: &Bound, f: Var) -> Result<Var> {
        let s = tape.shape(f);
        if s.c != self.config.body_width() {
            return Err(LmfnError::InvalidConfig(format!(
                "decoder expects {} channels, got {s}",
                self.config.body_width()
            )));
        }
        let mut h = self.decoder_feature(tape, p, f)?;
        for u in &self.arch.tail {
            h = u.forward(tape, p, h)?;
        }
        self.arch.out.forward(tape, p, h)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: Var) -> Result<Var> {
        let f = self.mshf_encode(tape, p, image)?;
        let y = self.mffd_decode(tape, p, f)?;
        if self.config.global_skip {
            tape.add(y, image)
        } else {
            Ok(y)
        }
    }

    /// Mean squared error between the prediction for `blurred` and `sharp`.
    pub fn loss(&self, tape: &mut Tape, p: &Bound, blurred: Var, sharp: Var) -> Result<Var> {
        let pred = self.forward(tape, p, blurred)?;
        tape.mse_loss(pred, sharp)
    }

    /// Forward pass on a fresh tape.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let x = tape.constant(image.clone());
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }

    /// Computes the loss and adds its gradients into every parameter.
    pub fn accumulate_gradients(&mut self, blurred: &Tensor, sharp: &Tensor) -> Result<f32> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let x = tape.constant(blurred.clone());
        let t = tape.constant(sharp.clone());
        let loss = self.loss(&mut tape, &p, x, t)?;
        let value = tape.value(loss).data()[0];
        tape.backward(loss)?;
        self.store.accumulate_grads(&tape, &p);
        Ok(value)
    }

    /// Human-readable architecture table: every tensor with its shape and
    /// size, grouped under its block with a subtotal.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34} {:<16} {:>12}", "name", "shape", "params");
        let _ = writeln!(s, "{}", "-".repeat(64));
        for b in self.arch.blocks() {
            let prefix = format!("{}/", b.prefix());
            for (name, t) in self.store.iter().filter(|(n, _)| n.starts_with(&prefix)) {
                let _ = writeln!(
                    s,
                    "  {:<32} {:<16} {:>12}",
                    name,
                    t.shape().to_string(),
                    t.numel()
                );
            }
            let _ = writeln!(
                s,
                "{:<34} {:<16} {:>12}",
                b.prefix(),
                b.kind().label(),
                b.param_count()
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(64));
        let _ = writeln!(
            s,
            "{:<34} {:<16} {:>12}",
            "total",
            self.config.variant_name(),
            self.total_param_count()
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder_width: 4,
            decoder_width: 4,
            num_scales: 2,
            num_rfdb: 2,
            ..Default::default()
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            ModelConfig {
                num_rfdb: 0,
                ..tiny()
            },
            ModelConfig {
                num_scales: 0,
                ..tiny()
            },
            ModelConfig {
                encoder_width: 5,
                ..tiny()
            },
            ModelConfig {
                decoder_width: 2,
                ..tiny()
            },
            ModelConfig {
                fusion_output_scale: 3,
                ..tiny()
            },
            ModelConfig {
                fusion_output_scale: 8,
                ..tiny()
            },
        ];
        for c in cases {
            assert!(LmfnModel::new(c.clone(), 0).is_err(), "{c:?}");
        }
    }

    #[test]
    fn two_disabled_flags_are_rejected() {
        let c = ModelConfig {
            mshf_enabled: false,
            rfdb_enabled: false,
            ..tiny()
        };
        assert!(LmfnModel::build_ablation(c, 0).is_err());
    }

    #[test]
    fn head_conv_count() {
        let m = LmfnModel::new(ModelConfig::default(), 0).unwrap();
        let head = m
            .breakdown()
            .into_iter()
            .find(|b| b.name == "head")
            .unwrap();
        assert_eq!(head.params, 1_792);
    }

    #[test]
    fn indivisible_input_reports_padding() {
        let m = LmfnModel::new(tiny(), 0).unwrap();
        let err = m.predict(&Tensor::zeros([1, 3, 6, 8])).unwrap_err();
        assert!(err.to_string().contains("pad"), "{err}");
    }

    #[test]
    fn summary_lists_every_block() {
        let m = LmfnModel::new(tiny(), 0).unwrap();
        let s = m.summary();
        for b in m.breakdown() {
            assert!(s.contains(&b.name));
        }
        assert!(s.contains(&m.total_param_count().to_string()));
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let m = LmfnModel::new(tiny(), 0).unwrap();
        let other = LmfnModel::new(
            ModelConfig {
                decoder_width: 6,
                ..tiny()
            },
            0,
        )
        .unwrap();
        assert!(LmfnModel::from_params(tiny(), other.params().clone()).is_err());
        assert!(LmfnModel::from_params(tiny(), m.params().clone()).is_ok());
    }
}
