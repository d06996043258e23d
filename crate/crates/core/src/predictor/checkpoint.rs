//! Versioned binary checkpoints and their text manifests.
//!
//! Layout (little endian): `b"VVPM"`, `u32` format version, `u32` length and
//! JSON bytes of the [`PredictorConfig`], `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rows, `u32` cols and `rows·cols` `f64`.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::model::{ParamStore, Predictor};
use super::tape::Tensor;
use super::PredictorConfig;
use crate::error::{Error, Result};
use crate::FORMAT_VERSION;

pub const MAGIC: &[u8; 4] = b"VVPM";

pub fn to_bytes(model: &Predictor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.cfg)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.tensors.len() as u32).to_le_bytes());
    for (name, t) in &model.params.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Predictor> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a predictor checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let len = r.u32()? as usize;
    let cfg: PredictorConfig = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nl = r.u32()? as usize;
        let name = String::from_utf8(r.take(nl)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.insert(name, Tensor::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Predictor::from_parts(cfg, ParamStore { tensors })
}

pub fn tensor_sha256(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for v in &t.data {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// One line per tensor: name, shape and SHA-256 of its little-endian values.
pub fn manifest(model: &Predictor) -> String {
    let mut out = format!("# predictor checkpoint format {FORMAT_VERSION}\n# name\tshape\tsha256\n");
    for (name, t) in &model.params.tensors {
        let _ = writeln!(out, "{name}\t{}x{}\t{}", t.rows, t.cols, tensor_sha256(t));
    }
    out
}

/// Checks a manifest against the checkpoint it describes.
pub fn verify_manifest(model: &Predictor, text: &str) -> Result<()> {
    let expected = manifest(model);
    if expected.lines().filter(|l| !l.starts_with('#')).eq(text.lines().filter(|l| !l.starts_with('#'))) {
        Ok(())
    } else {
        Err(Error::Checkpoint("manifest does not match checkpoint tensors".into()))
    }
}
