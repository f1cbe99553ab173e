//! `TXMD` checkpoint files.
//!
//! ```text
//! "TXMD" | u16 version | u16 input C | u16 H | u16 W | u16 layer count
//!   | layer count x (u8 tag | u32 dims...)
//!   | u64 value count | values as f64 LE
//!   | u32 CRC32 of every preceding byte
//! ```
//!
//! Values are written layer by layer in declaration order: conv weight then
//! bias; batchnorm gamma, beta, running mean, running var; linear weight
//! (`[in, out]`) then bias.

use std::fs;
use std::path::Path;

use super::layers::{BatchNorm, Conv2d, Linear};
use super::model::{Layer, LayerSpec, Model, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TXMD";
pub const CHECKPOINT_VERSION: u16 = 1;

fn stored_values(model: &Model) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    for l in &model.layers {
        match l {
            Layer::Conv(c) => {
                out.push(&c.weight);
                out.push(&c.bias);
            }
            Layer::BatchNorm(b) => {
                out.push(&b.gamma);
                out.push(&b.beta);
                out.push(&b.running_mean);
                out.push(&b.running_var);
            }
            Layer::Linear(lin) => {
                out.push(&lin.weight);
                out.push(&lin.bias);
            }
            Layer::Relu | Layer::Flatten => {}
        }
    }
    out
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let (c, h, w) = spec.input;
    for d in [c, h, w, spec.layers.len()] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for l in &spec.layers {
        out.push(l.tag());
        for d in l.dims() {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    let values = stored_values(model);
    let count: usize = values.iter().map(|v| v.len()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for v in values.iter().flat_map(|v| v.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                "checkpoint",
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let bad = |m: String| Error::format("checkpoint", m);
    if bytes.len() < 4 + 2 + 8 + 8 + 4 {
        return Err(bad(format!("{} bytes is too short", bytes.len())));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("missing TXMD magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let input = (
        usize::from(r.u16()?),
        usize::from(r.u16()?),
        usize::from(r.u16()?),
    );
    let n_layers = usize::from(r.u16()?);
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let tag = r.u8()?;
        let n = LayerSpec::dim_count(tag).ok_or_else(|| bad(format!("layer {i}: unknown tag {tag}")))?;
        let dims = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        layers.push(LayerSpec::from_tag(tag, &dims).ok_or_else(|| bad(format!("layer {i}: bad dims")))?);
    }
    let spec = ModelSpec { input, layers };
    spec.validate()?;
    let count = r.u64()? as usize;
    let buffers: usize = spec
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::BatchNorm { channels } => 2 * channels,
            _ => 0,
        })
        .sum();
    if count != spec.param_count() + buffers {
        return Err(bad(format!(
            "spec needs {} values, file declares {count}",
            spec.param_count() + buffers
        )));
    }
    let mut model_layers = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        model_layers.push(match *l {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                pad,
            } => {
                let mut c = Conv2d::new(in_channels, out_channels, kernel, pad);
                c.weight = r.f64s(c.weight.len())?;
                c.bias = r.f64s(out_channels)?;
                Layer::Conv(c)
            }
            LayerSpec::BatchNorm { channels } => {
                let mut b = BatchNorm::new(channels);
                b.gamma = r.f64s(channels)?;
                b.beta = r.f64s(channels)?;
                b.running_mean = r.f64s(channels)?;
                b.running_var = r.f64s(channels)?;
                Layer::BatchNorm(b)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let mut lin = Linear::new(in_features, out_features);
                lin.weight = r.f64s(in_features * out_features)?;
                lin.bias = r.f64s(out_features)?;
                Layer::Linear(lin)
            }
        });
    }
    if r.pos != payload.len() {
        return Err(bad(format!(
            "{} trailing bytes after parameters",
            payload.len() - r.pos
        )));
    }
    Ok(Model::from_parts(spec, model_layers))
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_checkpoint(&bytes)
}
