//! Versioned binary model checkpoints.
//!
//! Layout: magic `MILC`, format version (`u32` LE), length of the JSON
//! encoded [`ModelSpec`] (`u32` LE), the JSON bytes, then every parameter
//! tensor as little-endian `f64` in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelSpec, ModelState};
use crate::autograd::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MILC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, state: &ModelState) -> std::io::Result<()> {
    let spec = serde_json::to_vec(state.spec()).expect("spec serialises");
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(spec.len() as u32).to_le_bytes())?;
    w.write_all(&spec)?;
    for p in state.params() {
        for v in p.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads a checkpoint; `origin` only labels errors.
pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<ModelState> {
    let bad = |m: String| Error::format(origin, m);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io(origin, e))?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing MILC magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let spec_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let spec_end = 12 + spec_len;
    if bytes.len() < spec_end {
        return Err(bad(format!(
            "truncated model spec at offset 12 ({spec_len} bytes declared)"
        )));
    }
    let spec: ModelSpec = serde_json::from_slice(&bytes[12..spec_end])
        .map_err(|e| bad(format!("invalid model spec: {e}")))?;
    spec.validate()?;
    let expected = spec.param_count() * 8;
    let payload = &bytes[spec_end..];
    if payload.len() != expected {
        return Err(bad(format!(
            "parameter payload at offset {spec_end} holds {} bytes, spec needs {expected}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let params = spec
        .param_shapes()
        .into_iter()
        .map(|shape| {
            let n = shape.iter().product();
            Tensor::new(shape, values.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    ModelState::from_params(spec, params)
}

pub fn save_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), state).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), path)
}
