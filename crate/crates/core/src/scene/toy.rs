use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{normalize_quat, GaussianPrimitive, GaussianScene};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Lattice,
    TwoClusters,
    TexturedSlab,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::Lattice, SceneKind::TwoClusters, SceneKind::TexturedSlab];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Lattice => "lattice",
            SceneKind::TwoClusters => "two_clusters",
            SceneKind::TexturedSlab => "textured_slab",
        }
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown scene kind '{s}' (lattice, two_clusters, textured_slab)"
            ))
        })
    }
}

/// Position, rotation, scale, opacity, color.
type RawGaussian = ([f32; 3], [f32; 4], [f32; 3], f32, [f32; 3]);

const CLUSTER_STD: f32 = 0.25;
const CLUSTER_OFFSET: f32 = 2.0;
const SLAB_HALF_DEPTH: f32 = 0.15;

/// Seeded toy scene with `n` Gaussians and zero (not yet distilled)
/// embeddings of width `embed_dim`. Colors are stretched per channel to
/// `[0.05, 0.95]` whenever `n >= 2`.
pub fn generate_toy_scene(kind: SceneKind, n: usize, seed: u64, embed_dim: usize) -> Result<GaussianScene> {
    if n == 0 {
        return Err(Error::invalid("toy scene needs at least one Gaussian"));
    }
    if embed_dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<RawGaussian> = Vec::with_capacity(n);
    match kind {
        SceneKind::Lattice => {
            let m = (1..).find(|m| m * m * m >= n).unwrap();
            let step = if m > 1 { 2.0 / (m - 1) as f32 } else { 1.0 };
            for i in 0..n {
                let (x, y, z) = (i % m, (i / m) % m, i / (m * m));
                let p = [x, y, z].map(|c| if m > 1 { -1.0 + c as f32 * step } else { 0.0 });
                let q = random_quat(&mut rng);
                let s = [0; 3].map(|_| step * rng.random_range(0.3..0.45));
                let col = [0, 1, 2].map(|k| 0.5 * (p[k] + 1.0) + 0.03 * normal(&mut rng));
                raw.push((p, q, s, rng.random_range(0.9..0.98), col));
            }
        }
        SceneKind::TwoClusters => {
            for i in 0..n {
                let side = if i < n.div_ceil(2) { -1.0 } else { 1.0 };
                let p = [
                    side * CLUSTER_OFFSET + CLUSTER_STD * normal(&mut rng),
                    CLUSTER_STD * normal(&mut rng),
                    CLUSTER_STD * normal(&mut rng),
                ];
                let base = if side < 0.0 {
                    [0.8, 0.35, 0.2]
                } else {
                    [0.2, 0.45, 0.85]
                };
                let col = base.map(|b| b + 0.12 * normal(&mut rng));
                let q = random_quat(&mut rng);
                let s = [0; 3].map(|_| rng.random_range(0.06..0.14));
                raw.push((p, q, s, rng.random_range(0.6..0.9), col));
            }
        }
        SceneKind::TexturedSlab => {
            // Top and bottom faces of a 2 x 0.3 x 2 box lying in the xz plane,
            // tiled with flat discs and carrying a smooth 3D color field.
            let faces = n.min(2);
            let m = (1..).find(|m| m * m * faces >= n).unwrap();
            let step = if m > 1 { 2.0 / (m - 1) as f32 } else { 1.0 };
            let phase = [0; 3].map(|_| rng.random_range(0.0..std::f32::consts::TAU));
            for i in 0..n {
                let (x, y, f) = (i % m, (i / m) % m, i / (m * m));
                let p = [
                    if m > 1 { -1.0 + x as f32 * step } else { 0.0 },
                    if f == 0 { -SLAB_HALF_DEPTH } else { SLAB_HALF_DEPTH },
                    if m > 1 { -1.0 + y as f32 * step } else { 0.0 },
                ];
                let col = [
                    (0.9 * p[0] + phase[0]).sin(),
                    (0.9 * p[2] + phase[1]).sin(),
                    (0.6 * (p[0] + p[2]) + 3.0 * p[1] + phase[2]).sin(),
                ];
                let s = [0.6 * step, 0.01, 0.6 * step];
                raw.push((p, [1.0, 0.0, 0.0, 0.0], s, 1.0, col));
            }
        }
    }
    stretch_colors(&mut raw);
    let gaussians = raw
        .into_iter()
        .map(|(position, rotation, scale, opacity, color)| GaussianPrimitive {
            position,
            rotation,
            scale,
            opacity,
            color,
            embedding: vec![0.0; embed_dim],
        })
        .collect();
    GaussianScene::new(gaussians, embed_dim, format!("toy:{}:n={n}:seed={seed}", kind.name()))
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f32; 4] {
    loop {
        let q = [0; 4].map(|_| normal(rng));
        if q.iter().map(|v| v * v).sum::<f32>() > 1e-3 {
            return normalize_quat(q);
        }
    }
}

fn stretch_colors(raw: &mut [RawGaussian]) {
    for k in 0..3 {
        let lo = raw.iter().map(|r| r.4[k]).fold(f32::INFINITY, f32::min);
        let hi = raw.iter().map(|r| r.4[k]).fold(f32::NEG_INFINITY, f32::max);
        for r in raw.iter_mut() {
            r.4[k] = if hi - lo > 1e-6 {
                (0.05 + 0.9 * (r.4[k] - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
}
