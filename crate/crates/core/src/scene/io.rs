//! `GSCN` scene files: magic, u32 version, u32 N, u32 D, then N records of
//! f32 LE `pos[3] quat[4] scale[3] opacity color[3] embed[D]`.

use std::path::Path;

use super::{GaussianPrimitive, GaussianScene};
use crate::binio::{Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GSCN";
const VERSION: u32 = 1;
const MAX_DIM: usize = 4096;

pub fn encode_scene(scene: &GaussianScene) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC)
        .u32(VERSION)
        .u32(scene.gaussians.len() as u32)
        .u32(scene.embed_dim as u32);
    for g in &scene.gaussians {
        w.f32s(&g.position)
            .f32s(&g.rotation)
            .f32s(&g.scale)
            .f32s(&[g.opacity])
            .f32s(&g.color)
            .f32s(&g.embedding);
    }
    w.finish()
}

/// Decodes a scene. Opacity is clamped to `[0, 1]`; every other field must
/// already satisfy the primitive invariants. The format has no room for the
/// source tag, which comes back as `"gscn"`.
pub fn decode_scene(bytes: &[u8]) -> Result<GaussianScene> {
    let mut r = Reader::new("GSCN", bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u32()? as usize;
    let dim_at = r.offset();
    let d = r.u32()? as usize;
    if n == 0 {
        return Err(r.invalid("scene has zero Gaussians").into());
    }
    if d == 0 || d > MAX_DIM {
        let mut e = r.invalid(format!("embedding dimension {d} out of range"));
        e.offset = dim_at;
        return Err(e.into());
    }
    let record = (14 + d) * 4;
    let expected = n.checked_mul(record).ok_or_else(|| r.invalid("record size overflow"))?;
    if r.remaining() > expected {
        // Records are fixed-size, so a header D that disagrees with the payload
        // shows up as a length mismatch.
        let mut e = r.invalid(format!(
            "payload has {} bytes but header N={n}, D={d} implies {expected}",
            r.remaining()
        ));
        e.offset = dim_at;
        return Err(e.into());
    }
    let mut gaussians = Vec::with_capacity(n);
    for i in 0..n {
        let start = r.offset();
        let f = r.f32s(14 + d)?;
        let g = GaussianPrimitive {
            position: [f[0], f[1], f[2]],
            rotation: [f[3], f[4], f[5], f[6]],
            scale: [f[7], f[8], f[9]],
            opacity: f[10].clamp(0.0, 1.0),
            color: [f[11], f[12], f[13]],
            embedding: f[14..].to_vec(),
        };
        g.validate(d).map_err(|e| {
            let mut fe = r.invalid(format!("record {i}: {e}"));
            fe.offset = start;
            fe
        })?;
        gaussians.push(g);
    }
    r.finish()?;
    Ok(GaussianScene {
        gaussians,
        embed_dim: d,
        source_tag: "gscn".into(),
    })
}

pub fn save_scene(scene: &GaussianScene, path: &Path) -> Result<()> {
    scene.validate()?;
    std::fs::write(path, encode_scene(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<GaussianScene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scene(&bytes)
}
