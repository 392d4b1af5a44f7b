//! Binary checkpoints: magic `STNC`, version, tensor count, then per tensor
//! a `u16` name length, UTF-8 name, `u8` rank, `u32` dims and little-endian
//! `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::ModelInstance;
use super::spec::ArchSpec;
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"STNC";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<S: Scalar>(model: &ModelInstance<S>) -> Result<Vec<u8>> {
    let tensors = model.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Malformed(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Malformed(format!("{name}: dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            let v = v.to_f32().expect("finite scalar converts to f32");
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint<S: Scalar>(model: &ModelInstance<S>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

/// Parses raw checkpoint bytes into named tensors.
pub fn decode_tensors<S: Scalar>(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<S>>> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let count = r.u32("tensor count")?;
    let mut out = BTreeMap::new();
    for i in 0..count {
        let len = r.u16(&format!("name length of tensor {i}"))? as usize;
        let name = std::str::from_utf8(r.take(len, &format!("name of tensor {i}"))?)
            .map_err(|_| Error::Malformed(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8(&format!("rank of {name}"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("dims of {name}"))? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Malformed(format!("{name}: shape overflow")))?;
        let nbytes = numel.checked_mul(4).ok_or_else(|| Error::Malformed(format!("{name}: shape overflow")))?;
        let raw = r.take(nbytes, &format!("values of {name}"))?;
        let data = raw.chunks_exact(4).map(|c| S::lit(f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)).collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Malformed(format!("duplicate tensor `{name}`")));
        }
    }
    if !r.is_done() {
        return Err(Error::Malformed("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Loads a checkpoint for `spec`; names and shapes must match exactly.
pub fn load_checkpoint<S: Scalar>(spec: &ArchSpec, path: impl AsRef<Path>) -> Result<ModelInstance<S>> {
    let bytes = fs::read(path)?;
    ModelInstance::from_named_tensors(spec, decode_tensors(&bytes)?)
}
