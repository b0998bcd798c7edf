//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `LQGCKPT1`, a little-endian `u64` header length,
//! a JSON header (configuration, seed, and `(name, shape)` for every
//! parameter in layout order, plus the EWC block size when present), then the
//! raw little-endian `f64` payloads in header order. An EWC block stores the
//! anchor vector followed by the Fisher diagonal.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::transformer::ModelState;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::strider::EwcAnchor;

const MAGIC: &[u8; 8] = b"LQGCKPT1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct EwcEntry {
    len: usize,
    lambda_eff: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    params: Vec<ParamEntry>,
    ewc: Option<EwcEntry>,
}

/// A model together with the EWC state that accompanies it, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub anchor: Option<EwcAnchor>,
}

pub fn to_bytes(model: &ModelState, anchor: Option<&EwcAnchor>) -> Result<Vec<u8>> {
    if let Some(a) = anchor {
        if a.anchor_params.len() != model.num_parameters() || a.fisher.len() != model.num_parameters() {
            return Err(Error::dim("EWC anchor does not align with the model parameters"));
        }
    }
    let header = Header {
        config: model.config().clone(),
        seed: model.seed(),
        params: model
            .names()
            .iter()
            .zip(model.tensors())
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        ewc: anchor.map(|a| EwcEntry {
            len: a.fisher.len(),
            lambda_eff: a.lambda_eff,
        }),
    };
    let header = serde_json::to_vec(&header)?;
    let payload = model.num_parameters() + anchor.map_or(0, |a| 2 * a.fisher.len());
    let mut out = Vec::with_capacity(16 + header.len() + 8 * payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in model.tensors() {
        put(t.data());
    }
    if let Some(a) = anchor {
        put(&a.anchor_params);
        put(&a.fisher);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("payload size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let mut params = Vec::with_capacity(header.params.len());
    for entry in header.params {
        let n = entry.shape.iter().product();
        let data = r.f64s(n)?;
        params.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    let model = ModelState::from_named(header.config, header.seed, params)?;
    let anchor = match header.ewc {
        Some(e) => Some(EwcAnchor::new(r.f64s(e.len)?, r.f64s(e.len)?, e.lambda_eff)?),
        None => None,
    };
    if r.at != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.at
        )));
    }
    Ok(Checkpoint { model, anchor })
}

pub fn save(path: &Path, model: &ModelState, anchor: Option<&EwcAnchor>) -> Result<()> {
    fs::write(path, to_bytes(model, anchor)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}
