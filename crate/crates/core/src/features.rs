//! Batches of feature vectors tagged with their domain, plus the `FEAT`
//! exchange format (magic, u32 version, u32 M, u32 dim, u8 domain, f32 LE rows).

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    ClipLike,
    ClipMapped,
    VggLike,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::ClipLike => 0,
            Domain::VggLike => 1,
            Domain::ClipMapped => 2,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Domain::ClipLike),
            1 => Some(Domain::VggLike),
            2 => Some(Domain::ClipMapped),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::ClipLike => "clip_like",
            Domain::ClipMapped => "clip_mapped",
            Domain::VggLike => "vgg_like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    PseudoEncoder,
    SyntheticPair,
    Imported,
}

/// `M` row vectors of width `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub domain: Domain,
    pub dim: usize,
    pub data: Vec<f32>,
    pub provenance: Provenance,
}

impl FeatureSet {
    pub fn new(domain: Domain, dim: usize, data: Vec<f32>, provenance: Provenance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values do not form a non-empty set of {dim}-vectors",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "feature row {} has a non-finite value",
                i / dim
            )));
        }
        Ok(Self {
            domain,
            dim,
            data,
            provenance,
        })
    }

    pub fn from_rows(domain: Domain, rows: &[Vec<f32>], provenance: Provenance) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows have differing lengths"));
        }
        Self::new(domain, dim, rows.concat(), provenance)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Same vectors relabelled with another domain.
    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Row subset in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            domain: self.domain,
            dim: self.dim,
            data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            provenance: self.provenance,
        }
    }

    /// Population mean and standard deviation of every column.
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.len() as f64;
        let mut mean = vec![0.0f64; self.dim];
        for r in self.rows() {
            r.iter().zip(&mut mean).for_each(|(&v, mu)| *mu += v as f64);
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0f64; self.dim];
        for r in self.rows() {
            for j in 0..self.dim {
                var[j] += (r[j] as f64 - mean[j]).powi(2);
            }
        }
        (mean, var.into_iter().map(|v| (v / m).sqrt()).collect())
    }
}

const MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;

pub fn encode_features(set: &FeatureSet) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC)
        .u32(VERSION)
        .u32(set.len() as u32)
        .u32(set.dim as u32)
        .u8(set.domain.tag())
        .f32s(&set.data);
    w.finish()
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new("FEAT", bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if count == 0 {
        return Err(r.invalid("feature file holds zero vectors").into());
    }
    if dim == 0 {
        return Err(r.invalid("feature dimension is zero").into());
    }
    let tag = r.u8()?;
    let domain = Domain::from_tag(tag).ok_or_else(|| r.invalid(format!("unknown domain tag {tag}")))?;
    let n = count
        .checked_mul(dim)
        .ok_or_else(|| r.invalid("feature size overflow"))?;
    if r.remaining() != n * 4 {
        return Err(r
            .invalid(format!(
                "payload is {} bytes, header M={count} dim={dim} needs {}",
                r.remaining(),
                n * 4
            ))
            .into());
    }
    let data = r.f32s(n)?;
    r.finish()?;
    FeatureSet::new(domain, dim, data, Provenance::Imported)
}

pub fn export_features(set: &FeatureSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode_features(set)).map_err(|e| Error::io(path, e))
}

pub fn import_features(path: &Path) -> Result<FeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> FeatureSet {
        FeatureSet::new(
            Domain::VggLike,
            3,
            vec![0.5, -1.0, 2.0, 1e-8, 3.25, -0.0],
            Provenance::SyntheticPair,
        )
        .unwrap()
    }

    #[test]
    fn feat_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.feat");
        export_features(&set(), &path).unwrap();
        let back = import_features(&path).unwrap();
        assert_eq!(back.domain, Domain::VggLike);
        assert_eq!(back.provenance, Provenance::Imported);
        let bits = |s: &FeatureSet| s.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&set()));
    }

    #[test]
    fn feat_rejects_bad_headers() {
        let bytes = encode_features(&set());
        let mut dim = bytes.clone();
        dim[12] = 4;
        assert!(decode_features(&dim).is_err());
        let mut zero = bytes.clone();
        zero[8] = 0;
        assert!(decode_features(&zero).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'G';
        assert!(decode_features(&magic).is_err());
        assert!(decode_features(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(FeatureSet::new(Domain::ClipLike, 2, vec![1.0, f32::NAN], Provenance::Imported).is_err());
        assert!(FeatureSet::new(Domain::ClipLike, 2, vec![], Provenance::Imported).is_err());
        assert!(FeatureSet::new(Domain::ClipLike, 2, vec![1.0; 3], Provenance::Imported).is_err());
        let (m, s) = FeatureSet::new(Domain::ClipLike, 2, vec![0.0, 0.0, 2.0, 2.0], Provenance::Imported)
            .unwrap()
            .column_moments();
        assert_eq!((m, s), (vec![1.0, 1.0], vec![1.0, 1.0]));
    }
}
