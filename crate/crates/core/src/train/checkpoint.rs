//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "LMFN"  u32 version
//! u32 len, config JSON
//! u32 count, then per tensor: u32 name len, name, 4×u32 shape, f32 payload
//! u8 has_optimizer
//!   [u32 len, adam config JSON, u64 step, u32 count,
//!    per entry: u32 name len, name, 4×u32 shape, f32 m payload, f32 v payload]
//! u32 CRC-32 of everything above
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{LmfnError, Result};
use crate::model::{LmfnModel, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};
use crate::train::optim::{Adam, AdamConfig, Moments};

pub const MAGIC: &[u8; 4] = b"LMFN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: IndexMap<String, Moments>,
}

impl OptimizerState {
    pub fn from_adam(adam: &Adam) -> Self {
        OptimizerState {
            config: adam.config,
            step: adam.step_count(),
            moments: adam.moments().clone(),
        }
    }

    pub fn into_adam(self) -> Adam {
        Adam::from_state(self.config, self.step, self.moments)
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

fn bad(msg: impl Into<String>) -> LmfnError {
    LmfnError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, v: usize) -> Result<()> {
    put_u32(
        out,
        u32::try_from(v).map_err(|_| bad(format!("length {v} does not fit in 32 bits")))?,
    );
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_len(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_shape(out: &mut Vec<u8>, s: Shape) -> Result<()> {
    for d in s.dims() {
        put_len(out, d)?;
    }
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                bad(format!(
                    "file truncated: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| bad("name is not valid UTF-8"))
    }

    fn shape(&mut self) -> Result<Shape> {
        let d = [self.u32()?, self.u32()?, self.u32()?, self.u32()?];
        Ok(Shape::new(
            d[0] as usize,
            d[1] as usize,
            d[2] as usize,
            d[3] as usize,
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| bad("tensor size overflows"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn from_model(model: &LmfnModel, adam: Option<&Adam>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params().clone(),
            optimizer: adam.map(OptimizerState::from_adam),
        }
    }

    pub fn into_model(self) -> Result<LmfnModel> {
        LmfnModel::from_params(self.config, self.params)
    }

    /// Total number of stored parameter values.
    pub fn tensor_numel(&self) -> usize {
        self.params.numel()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.params.numel() * 4 + 4096);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let config = serde_json::to_string(&self.config).map_err(|e| bad(e.to_string()))?;
        put_str(&mut out, &config)?;
        put_len(&mut out, self.params.len())?;
        for (name, t) in self.params.iter() {
            put_str(&mut out, name)?;
            put_shape(&mut out, t.shape())?;
            put_f32s(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                let cfg = serde_json::to_string(&opt.config).map_err(|e| bad(e.to_string()))?;
                put_str(&mut out, &cfg)?;
                out.extend_from_slice(&opt.step.to_le_bytes());
                put_len(&mut out, opt.moments.len())?;
                for (name, mo) in &opt.moments {
                    let shape = self
                        .params
                        .get(name)
                        .ok_or_else(|| {
                            bad(format!("optimizer state for unknown parameter {name:?}"))
                        })?
                        .shape();
                    put_str(&mut out, name)?;
                    put_shape(&mut out, shape)?;
                    put_f32s(&mut out, &mo.m);
                    put_f32s(&mut out, &mo.v);
                }
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(bad(format!(
                "file too short ({} bytes) to be a checkpoint",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("missing LMFN magic bytes; not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!(
                "unsupported format version {version} (this build reads version {VERSION})"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(bad(format!(
                "checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is corrupted"
            )));
        }

        let mut r = Reader { buf: body, pos: 8 };
        let config: ModelConfig = serde_json::from_str(r.str()?)
            .map_err(|e| bad(format!("bad configuration record: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.str()?.to_string();
            let shape = r.shape()?;
            let data = r.f32s(shape.numel())?;
            params.insert(name, Tensor::from_vec(shape, data)?)?;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config: AdamConfig = serde_json::from_str(r.str()?)
                    .map_err(|e| bad(format!("bad optimizer record: {e}")))?;
                let step = r.u64()?;
                let n = r.u32()? as usize;
                let mut moments = IndexMap::with_capacity(n);
                for _ in 0..n {
                    let name = r.str()?.to_string();
                    let shape = r.shape()?;
                    if params.get(&name).map(|p| p.shape()) != Some(shape) {
                        return Err(bad(format!(
                            "optimizer state for {name:?} does not match its parameter"
                        )));
                    }
                    let m = r.f32s(shape.numel())?;
                    let v = r.f32s(shape.numel())?;
                    moments.insert(name, Moments { m, v });
                }
                Some(OptimizerState {
                    config,
                    step,
                    moments,
                })
            }
            other => return Err(bad(format!("bad optimizer flag {other}"))),
        };
        if r.pos != body.len() {
            return Err(bad(format!(
                "{} unexpected trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| LmfnError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| LmfnError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            LmfnError::Checkpoint(msg) => {
                LmfnError::Checkpoint(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &LmfnModel,
    adam: Option<&Adam>,
) -> Result<()> {
    Checkpoint::from_model(model, adam).save(path)
}

/// Loads a checkpoint and rebuilds its model; optimizer state is dropped.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LmfnModel> {
    Checkpoint::load(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> LmfnModel {
        LmfnModel::new(
            ModelConfig {
                encoder_width: 4,
                decoder_width: 4,
                num_scales: 1,
                num_rfdb: 1,
                ..Default::default()
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let m = model();
        let bytes = Checkpoint::from_model(&m, None).to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.tensor_numel(), m.total_param_count());
    }

    #[test]
    fn every_truncation_is_refused() {
        let bytes = Checkpoint::from_model(&model(), None).to_bytes().unwrap();
        for cut in [0, 3, 8, 11, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn future_version_is_refused_by_name() {
        let mut bytes = Checkpoint::from_model(&model(), None).to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
        let e = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(e.contains("version 2"), "{e}");
    }
}
