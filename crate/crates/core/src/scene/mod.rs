//! Gaussian scene representation, persistence, toy scenes and cameras.

mod camera;
mod io;
mod toy;

pub use camera::{camera_ring, orbit_camera, view_pairs, Camera, Intrinsics, PairRange, DEFAULT_ELEVATION};
pub use io::{decode_scene, encode_scene, load_scene, save_scene};
pub use toy::{generate_toy_scene, SceneKind};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const MIN_EMBED_DIM: usize = 8;
pub const MAX_EMBED_DIM: usize = 64;

/// One anisotropic 3D Gaussian. Covariance is stored factorised as a unit
/// quaternion `[w, x, y, z]` and per-axis standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: [f32; 3],
    pub rotation: [f32; 4],
    pub scale: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
    pub embedding: Vec<f32>,
}

impl GaussianPrimitive {
    pub fn rotation_matrix(&self) -> Matrix3<f32> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// `R diag(scale^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f32> {
        let r = self.rotation_matrix();
        let s = Vector3::from(self.scale);
        let d = Matrix3::from_diagonal(&s.component_mul(&s));
        r * d * r.transpose()
    }

    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        let qn = self.rotation.iter().map(|v| v * v).sum::<f32>().sqrt();
        if !((qn - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid(format!("rotation quaternion norm {qn} is not 1")));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("scale {:?} must be positive", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::invalid(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!("color {:?} outside [0, 1]", self.color)));
        }
        if self.position.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite position"));
        }
        if self.embedding.len() != embed_dim {
            return Err(Error::invalid(format!(
                "embedding has {} entries, scene dimension is {}",
                self.embedding.len(),
                embed_dim
            )));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite embedding"));
        }
        Ok(())
    }

    /// True when every field except color and embedding is bit-identical.
    pub fn same_geometry(&self, other: &Self) -> bool {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.position) == bits(&other.position)
            && bits(&self.rotation) == bits(&other.rotation)
            && bits(&self.scale) == bits(&other.scale)
            && self.opacity.to_bits() == other.opacity.to_bits()
    }
}

/// Normalises a quaternion given as `[w, x, y, z]`.
pub fn normalize_quat(q: [f32; 4]) -> [f32; 4] {
    let n = q.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    q.map(|v| (v as f64 / n) as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<GaussianPrimitive>,
    pub embed_dim: usize,
    pub source_tag: String,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<GaussianPrimitive>, embed_dim: usize, source_tag: impl Into<String>) -> Result<Self> {
        let scene = Self {
            gaussians,
            embed_dim,
            source_tag: source_tag.into(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::invalid("scene has no Gaussians"));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(self.embed_dim)
                .map_err(|e| Error::invalid(format!("gaussian {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Embeddings as a row-major `[N, D]` matrix.
    pub fn embedding_matrix(&self) -> Vec<f32> {
        self.gaussians
            .iter()
            .flat_map(|g| g.embedding.iter().copied())
            .collect()
    }

    /// Colors as a row-major `[N, 3]` matrix.
    pub fn color_matrix(&self) -> Vec<f32> {
        self.gaussians.iter().flat_map(|g| g.color).collect()
    }

    /// True once embeddings have been trained (all-zero rows mean "not yet").
    pub fn is_distilled(&self) -> bool {
        self.gaussians.iter().any(|g| g.embedding.iter().any(|&v| v != 0.0))
    }

    /// Same geometry, new colors. Fails on a length mismatch.
    pub fn with_colors(&self, colors: &[[f32; 3]]) -> Result<Self> {
        if colors.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} colors for {} Gaussians",
                colors.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        for (g, c) in out.gaussians.iter_mut().zip(colors) {
            g.color = *c;
        }
        Ok(out)
    }

    /// Bounding-sphere center and radius of the Gaussian means.
    pub fn bounds(&self) -> ([f32; 3], f32) {
        let n = self.len() as f32;
        let mut c = [0.0f32; 3];
        for g in &self.gaussians {
            for k in 0..3 {
                c[k] += g.position[k] / n;
            }
        }
        let r = self
            .gaussians
            .iter()
            .map(|g| (0..3).map(|k| (g.position[k] - c[k]).powi(2)).sum::<f32>().sqrt())
            .fold(0.0, f32::max);
        (c, r)
    }
}

#[cfg(test)]
mod tests;
