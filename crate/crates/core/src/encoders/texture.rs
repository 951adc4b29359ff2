//! Seeded procedural textures: style images, concept images for the text
//! stub, and the 2D decoder's training corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f32::consts::TAU;

use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Stripes,
    Checker,
    Rings,
    Blobs,
}

/// Parameters of one procedural texture: a two-color palette modulated by a
/// periodic pattern, plus per-pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureParams {
    pub pattern: Pattern,
    pub color_a: [f32; 3],
    pub color_b: [f32; 3],
    /// Cycles across the image width.
    pub frequency: f32,
    pub angle: f32,
    pub phase: f32,
    pub noise: f32,
    pub noise_seed: u64,
}

impl TextureParams {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = [Pattern::Stripes, Pattern::Checker, Pattern::Rings, Pattern::Blobs][rng.random_range(0..4)];
        Self {
            pattern,
            color_a: [0; 3].map(|_| rng.random_range(0.0..1.0)),
            color_b: [0; 3].map(|_| rng.random_range(0.0..1.0)),
            frequency: rng.random_range(1.0..5.0),
            angle: rng.random_range(0.0..std::f32::consts::PI),
            phase: rng.random_range(0.0..TAU),
            noise: rng.random_range(0.0..0.08),
            noise_seed: rng.random(),
        }
    }

    /// A nearby variant: shifted phase, slightly perturbed frequency, angle and
    /// colors, fresh noise.
    pub fn jittered(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.clone();
        p.phase += rng.random_range(-0.4..0.4);
        p.frequency *= rng.random_range(0.95..1.05);
        p.angle += rng.random_range(-0.1..0.1);
        for c in p.color_a.iter_mut().chain(p.color_b.iter_mut()) {
            *c = (*c + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
        }
        p.noise_seed = rng.random();
        p
    }

    pub fn render(&self, height: usize, width: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let (ca, sa) = (self.angle.cos(), self.angle.sin());
        let k = TAU * self.frequency / width as f32;
        let n = height * width;
        let mut data = vec![0.0f32; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                let u = fx * ca + fy * sa;
                let v = -fx * sa + fy * ca;
                let t = match self.pattern {
                    Pattern::Stripes => 0.5 + 0.5 * (k * u + self.phase).sin(),
                    Pattern::Checker => 0.5 + 0.5 * ((k * u + self.phase).sin() * (k * v).sin()).tanh() / 0.7616,
                    Pattern::Rings => {
                        let (dx, dy) = (fx - width as f32 * 0.5, fy - height as f32 * 0.5);
                        0.5 + 0.5 * (k * (dx * dx + dy * dy).sqrt() + self.phase).sin()
                    }
                    Pattern::Blobs => {
                        let a = (k * u + self.phase).sin() + (0.7 * k * v + 1.3 * self.phase).sin();
                        0.5 + 0.25 * a
                    }
                };
                let p = y * width + x;
                for c in 0..3 {
                    let noise = self.noise * rng.random_range(-1.0f32..1.0);
                    data[c * n + p] = (self.color_a[c] * (1.0 - t) + self.color_b[c] * t + noise).clamp(0.0, 1.0);
                }
            }
        }
        Image::new(3, height, width, data).expect("sized above")
    }
}

/// Texture number `index` of the corpus keyed by `seed`.
pub fn procedural_texture(seed: u64, index: u64, height: usize, width: usize) -> Image {
    TextureParams::random(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index).render(height, width)
}
