//! Binary PPM (P6) for RGB and `FMAP` raw dumps (magic, u32 H, u32 W, u32 C,
//! f32 LE `[H, W, C]` data) for depth and feature maps.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::image::Image;
use crate::{Error, Result};

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::invalid(format!(
            "PPM needs 3 channels, image has {}",
            img.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_hwc().iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    Ok(out)
}

/// Decodes the P6 files written by [`encode_ppm`] back to `[0, 1]` floats.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::invalid(format!("PPM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("only P6 with maxval 255 is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
    if body.len() != w * h * 3 {
        return Err(bad("pixel data length mismatch"));
    }
    let hwc: Vec<f32> = body.iter().map(|&b| b as f32 / 255.0).collect();
    Image::from_hwc(3, h, w, &hwc)
}

pub fn save_ppm(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

pub fn encode_fmap(img: &Image) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(b"FMAP")
        .u32(img.height as u32)
        .u32(img.width as u32)
        .u32(img.channels as u32)
        .f32s(&img.to_hwc());
    w.finish()
}

pub fn decode_fmap(bytes: &[u8]) -> Result<Image> {
    let mut r = Reader::new("FMAP", bytes);
    r.magic(b"FMAP")?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    if h == 0 || w == 0 || c == 0 {
        return Err(r.invalid("empty map").into());
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| r.invalid("map size overflow"))?;
    let data = r.f32s(n)?;
    r.finish()?;
    Image::from_hwc(c, h, w, &data)
}

pub fn save_fmap(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_fmap(img)).map_err(|e| Error::io(path, e))
}

pub fn load_fmap(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fmap(&bytes)
}
