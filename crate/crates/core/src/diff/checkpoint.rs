//! `PRMS` parameter checkpoints: magic, u32 version, u32 tensor count, then
//! per tensor u32 rank, u32 dims, f32 LE data.

use std::path::Path;

use super::DiffTensor;
use crate::binio::{FormatError, Reader, Writer};
use crate::Error;

const MAGIC: &[u8; 4] = b"PRMS";
const VERSION: u32 = 1;

pub fn encode_params(params: &[&DiffTensor]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION).u32(params.len() as u32);
    for p in params {
        w.u32(p.shape().len() as u32);
        for &d in p.shape() {
            w.u32(d as u32);
        }
        w.f32s(p.data());
    }
    w.finish()
}

/// Decodes a checkpoint; every tensor comes back trainable.
pub fn decode_params(bytes: &[u8]) -> Result<Vec<DiffTensor>, FormatError> {
    let mut r = Reader::new("PRMS", bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.invalid(format!("tensor rank {rank} too large")));
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.invalid("tensor size overflow"))?;
        let data = r.f32s(n)?;
        out.push(DiffTensor::param(&dims, data).map_err(|e| r.invalid(e.to_string()))?);
    }
    r.finish()?;
    Ok(out)
}

pub fn save_params(path: &Path, params: &[&DiffTensor]) -> Result<(), Error> {
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<Vec<DiffTensor>, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_params(&bytes)?)
}
