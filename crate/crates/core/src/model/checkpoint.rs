//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "FFCK" | u32 version | u32 len | spec JSON
//! per layer: blob(weights) blob(bias) [blob(gamma) blob(beta) blob(mean) blob(var)]
//! u8 has_head | [u32 len | head JSON | blob(weights) blob(bias)]
//! blob = u64 count | count x f32
//! ```
//!
//! Channel groups are the contiguous blocks `[j*S, (j+1)*S)` of each layer's
//! output channels, so no grouping metadata is stored.

use std::fs;
use std::path::Path;

use super::network::Model;
use super::spec::ModelSpec;
use crate::error::{FfError, Result};
use crate::inference::{HeadSpec, SoftmaxHead};
use crate::ops::{BatchNormParams, LayerParams};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FFCK";
pub const VERSION: u32 = 1;

fn put_blob(out: &mut Vec<u8>, vals: &[f32]) {
    out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_text(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

pub fn encode(model: &Model, head: Option<&SoftmaxHead>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_text(&mut out, &model.spec().to_json());
    for p in model.layers() {
        put_blob(&mut out, p.weights.data());
        put_blob(&mut out, &p.bias);
        if let Some(bn) = &p.batchnorm {
            put_blob(&mut out, &bn.gamma);
            put_blob(&mut out, &bn.beta);
            put_blob(&mut out, &bn.running_mean);
            put_blob(&mut out, &bn.running_var);
        }
    }
    match head {
        None => out.push(0),
        Some(h) => {
            out.push(1);
            put_text(&mut out, &serde_json::to_string(h.spec()).expect("head spec serialises"));
            put_blob(&mut out, h.params().weights.data());
            put_blob(&mut out, &h.params().bias);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FfError::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| FfError::Format(format!("checkpoint {what} is not UTF-8")))
    }

    fn blob(&mut self, expect: usize, what: &str) -> Result<Vec<f32>> {
        let n = self.u64(what)?;
        if n != expect as u64 {
            return Err(FfError::Format(format!("checkpoint {what} holds {n} values, spec expects {expect}")));
        }
        let raw = self.take(expect * 4, what)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Option<SoftmaxHead>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FfError::Format("not a checkpoint: bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FfError::Format(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let spec = ModelSpec::from_json(r.text("spec")?)?;
    let template = Model::build(&spec, 0)?;
    let mut layers = Vec::with_capacity(spec.depth());
    for (i, t) in template.layers().iter().enumerate() {
        let ws = t.weights.shape();
        let weights = Tensor::from_vec(ws, r.blob(ws.numel(), &format!("layer {i} weights"))?)?;
        let bias = r.blob(t.bias.len(), &format!("layer {i} bias"))?;
        let batchnorm = match &t.batchnorm {
            Some(bn) => {
                let c = bn.channels();
                Some(BatchNormParams {
                    gamma: r.blob(c, &format!("layer {i} bn gamma"))?,
                    beta: r.blob(c, &format!("layer {i} bn beta"))?,
                    running_mean: r.blob(c, &format!("layer {i} bn mean"))?,
                    running_var: r.blob(c, &format!("layer {i} bn var"))?,
                })
            }
            None => None,
        };
        layers.push(LayerParams { weights, bias, batchnorm });
    }
    let model = Model::from_parts(spec, layers)?;
    let head = match r.take(1, "head flag")?[0] {
        0 => None,
        1 => {
            let hs: HeadSpec = serde_json::from_str(r.text("head spec")?)
                .map_err(|e| FfError::Format(format!("invalid head spec: {e}")))?;
            let wshape = Shape::matrix(hs.input_dim, hs.num_classes);
            let w = r.blob(wshape.numel(), "head weights")?;
            let b = r.blob(hs.num_classes, "head bias")?;
            Some(SoftmaxHead::from_parts(hs, Tensor::from_vec(wshape, w)?, b)?)
        }
        f => return Err(FfError::Format(format!("bad head flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(FfError::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok((model, head))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, head: Option<&SoftmaxHead>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, head)).map_err(|e| FfError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Option<SoftmaxHead>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FfError::io(path, e))?;
    decode(&bytes)
}
