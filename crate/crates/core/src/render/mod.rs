//! Tile-based CPU splatting with front-to-back alpha compositing.

mod io;
mod warp;

pub use io::{decode_fmap, decode_ppm, encode_fmap, encode_ppm, load_fmap, save_fmap, save_ppm};
pub use warp::{warp_map, WarpMap};

use nalgebra::{Matrix2x3, Matrix3};

use crate::diff::SparseRows;
use crate::image::Image;
use crate::scene::{Camera, GaussianPrimitive, GaussianScene};
use crate::{Error, Result};

pub const TILE: usize = 16;
pub const ALPHA_MAX: f32 = 0.99;
pub const T_MIN: f32 = 1e-4;
pub const LOW_PASS: f32 = 0.3;
/// Squared Mahalanobis radius beyond which a splat contributes nothing (3 sigma).
pub const CUTOFF: f32 = 9.0;

/// A Gaussian projected to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f32; 2],
    /// Symmetric covariance `[xx, xy, yy]` in pixel^2, low-pass included.
    pub cov2d: [f32; 3],
    /// Inverse of `cov2d`, same packing.
    pub conic: [f32; 3],
    pub view_depth: f32,
    pub opacity: f32,
    pub source_index: usize,
}

impl Splat2D {
    pub fn power(&self, px: f32, py: f32) -> f32 {
        let (dx, dy) = (px - self.mean2d[0], py - self.mean2d[1]);
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }

    /// Half-extents of the axis-aligned box around the cutoff ellipse.
    pub fn radius(&self) -> (f32, f32) {
        let k = CUTOFF.sqrt();
        (k * self.cov2d[0].sqrt(), k * self.cov2d[2].sqrt())
    }
}

/// EWA projection; `None` when the mean lies outside `[near, far]`.
pub fn project_gaussian(g: &GaussianPrimitive, index: usize, cam: &Camera) -> Option<Splat2D> {
    let pc = cam.world_to_camera(g.position);
    if !(pc.z >= cam.near && pc.z <= cam.far) {
        return None;
    }
    let (f, z) = (cam.focal, pc.z);
    let j = Matrix2x3::new(f / z, 0.0, -f * pc.x / (z * z), 0.0, f / z, -f * pc.y / (z * z));
    let w: Matrix3<f32> = cam.rotation().to_rotation_matrix().into_inner().transpose();
    let t = j * w;
    let cov = t * g.covariance() * t.transpose();
    let (a, b, c) = (
        cov[(0, 0)] + LOW_PASS,
        0.5 * (cov[(0, 1)] + cov[(1, 0)]),
        cov[(1, 1)] + LOW_PASS,
    );
    let det = a * c - b * b;
    if !(det > 0.0 && det.is_finite()) {
        return None;
    }
    let (u, v) = cam.project(&pc);
    Some(Splat2D {
        mean2d: [u, v],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        view_depth: z,
        opacity: g.opacity,
        source_index: index,
    })
}

/// Projects every Gaussian and sorts front to back (ties broken by index).
pub fn project_scene(scene: &GaussianScene, cam: &Camera) -> Result<Vec<Splat2D>> {
    if scene.is_empty() {
        return Err(Error::invalid("cannot render an empty scene"));
    }
    cam.validate()?;
    let mut splats: Vec<Splat2D> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, cam))
        .collect();
    splats.sort_by(|a, b| {
        a.view_depth
            .total_cmp(&b.view_depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    Ok(splats)
}

/// Walks the sorted splats covering one pixel, calling `visit(splat, weight)`
/// with each compositing weight `alpha_i * T_i`. Returns accumulated alpha
/// and the depth at which it first reaches 0.5.
fn composite_pixel<'a, I, F>(splats: I, px: f32, py: f32, mut visit: F) -> (f32, f32)
where
    I: IntoIterator<Item = &'a Splat2D>,
    F: FnMut(&Splat2D, f32),
{
    let mut t = 1.0f32;
    let mut depth = f32::INFINITY;
    for s in splats {
        let power = s.power(px, py);
        if !(power <= CUTOFF) {
            continue;
        }
        let alpha = (s.opacity * (-0.5 * power).exp()).clamp(0.0, ALPHA_MAX);
        if alpha == 0.0 {
            continue;
        }
        visit(s, alpha * t);
        t *= 1.0 - alpha;
        if depth.is_infinite() && t <= 0.5 {
            depth = s.view_depth;
        }
        if t < T_MIN {
            break;
        }
    }
    (1.0 - t, depth)
}

/// Per-tile lists of positions into the sorted splat array.
fn bin_tiles(splats: &[Splat2D], width: usize, height: usize) -> (usize, usize, Vec<Vec<u32>>) {
    let (tx, ty) = (width.div_ceil(TILE), height.div_ceil(TILE));
    let mut bins = vec![Vec::new(); tx * ty];
    for (k, s) in splats.iter().enumerate() {
        let (rx, ry) = s.radius();
        // One pixel of slack so rounding in the box never drops a covered pixel.
        let x0 = ((s.mean2d[0] - rx - 1.0).floor().max(0.0) as usize) / TILE;
        let y0 = ((s.mean2d[1] - ry - 1.0).floor().max(0.0) as usize) / TILE;
        let x1 = (s.mean2d[0] + rx + 1.0).ceil();
        let y1 = (s.mean2d[1] + ry + 1.0).ceil();
        if x1 < 0.0 || y1 < 0.0 || !x1.is_finite() || !y1.is_finite() {
            continue;
        }
        let x1 = ((x1 as usize) / TILE).min(tx - 1);
        let y1 = ((y1 as usize) / TILE).min(ty - 1);
        for by in y0..=y1 {
            for bx in x0..=x1 {
                bins[by * tx + bx].push(k as u32);
            }
        }
    }
    (tx, ty, bins)
}

/// Rasterized attributes for one camera. All buffers are pixel-interleaved
/// (`[H, W, C]`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub features: Vec<f32>,
    pub feature_dim: usize,
    pub depth: Vec<f32>,
    pub alpha_mask: Vec<f32>,
}

impl RenderOutput {
    pub fn rgb_image(&self) -> Image {
        Image::from_hwc(3, self.height, self.width, &self.rgb).expect("render buffers are consistent")
    }

    pub fn feature_image(&self) -> Image {
        Image::from_hwc(self.feature_dim, self.height, self.width, &self.features)
            .expect("render buffers are consistent")
    }
}

struct TileOut {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rgb: Vec<f32>,
    feat: Vec<f32>,
    depth: Vec<f32>,
    alpha: Vec<f32>,
}

fn render_tile(
    scene: &GaussianScene,
    splats: &[Splat2D],
    bin: &[u32],
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> TileOut {
    let d = scene.embed_dim;
    let (w, h) = (TILE.min(width - x0), TILE.min(height - y0));
    let mut out = TileOut {
        x0,
        y0,
        w,
        h,
        rgb: vec![0.0; w * h * 3],
        feat: vec![0.0; w * h * d],
        depth: vec![f32::INFINITY; w * h],
        alpha: vec![0.0; w * h],
    };
    for ly in 0..h {
        for lx in 0..w {
            let p = ly * w + lx;
            let (px, py) = ((x0 + lx) as f32 + 0.5, (y0 + ly) as f32 + 0.5);
            let rgb = &mut out.rgb[p * 3..p * 3 + 3];
            let feat = &mut out.feat[p * d..(p + 1) * d];
            let (a, z) = composite_pixel(bin.iter().map(|&k| &splats[k as usize]), px, py, |s, wgt| {
                let g = &scene.gaussians[s.source_index];
                for c in 0..3 {
                    rgb[c] += wgt * g.color[c];
                }
                for (f, &e) in feat.iter_mut().zip(&g.embedding) {
                    *f += wgt * e;
                }
            });
            out.alpha[p] = a;
            out.depth[p] = z;
        }
    }
    out
}

/// Renders colors, embeddings, depth and coverage for one camera.
pub fn render(scene: &GaussianScene, cam: &Camera) -> Result<RenderOutput> {
    let splats = project_scene(scene, cam)?;
    let (width, height, d) = (cam.width, cam.height, scene.embed_dim);
    let (tx, ty, bins) = bin_tiles(&splats, width, height);
    let job = |t: usize| {
        render_tile(
            scene,
            &splats,
            &bins[t],
            (t % tx) * TILE,
            (t / tx) * TILE,
            width,
            height,
        )
    };
    #[cfg(feature = "parallel")]
    let tiles: Vec<TileOut> = {
        use rayon::prelude::*;
        (0..tx * ty).into_par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let tiles: Vec<TileOut> = (0..tx * ty).map(job).collect();

    let mut out = RenderOutput {
        width,
        height,
        rgb: vec![0.0; width * height * 3],
        features: vec![0.0; width * height * d],
        feature_dim: d,
        depth: vec![f32::INFINITY; width * height],
        alpha_mask: vec![0.0; width * height],
    };
    for t in tiles {
        for ly in 0..t.h {
            let row = (t.y0 + ly) * width + t.x0;
            let src = ly * t.w;
            out.rgb[row * 3..(row + t.w) * 3].copy_from_slice(&t.rgb[src * 3..(src + t.w) * 3]);
            out.features[row * d..(row + t.w) * d].copy_from_slice(&t.feat[src * d..(src + t.w) * d]);
            out.depth[row..row + t.w].copy_from_slice(&t.depth[src..src + t.w]);
            out.alpha_mask[row..row + t.w].copy_from_slice(&t.alpha[src..src + t.w]);
        }
    }
    Ok(out)
}

/// Scalar reference: every pixel walks every splat, no tiling.
pub fn render_reference(scene: &GaussianScene, cam: &Camera) -> Result<RenderOutput> {
    let splats = project_scene(scene, cam)?;
    let (width, height, d) = (cam.width, cam.height, scene.embed_dim);
    let mut out = RenderOutput {
        width,
        height,
        rgb: vec![0.0; width * height * 3],
        features: vec![0.0; width * height * d],
        feature_dim: d,
        depth: vec![f32::INFINITY; width * height],
        alpha_mask: vec![0.0; width * height],
    };
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let mut rgb = [0.0f32; 3];
            let mut feat = vec![0.0f32; d];
            let (a, z) = composite_pixel(&splats, x as f32 + 0.5, y as f32 + 0.5, |s, w| {
                let g = &scene.gaussians[s.source_index];
                for c in 0..3 {
                    rgb[c] += w * g.color[c];
                }
                for (f, &e) in feat.iter_mut().zip(&g.embedding) {
                    *f += w * e;
                }
            });
            out.rgb[p * 3..p * 3 + 3].copy_from_slice(&rgb);
            out.features[p * d..(p + 1) * d].copy_from_slice(&feat);
            out.alpha_mask[p] = a;
            out.depth[p] = z;
        }
    }
    Ok(out)
}

/// The compositing weights as a sparse `[H*W, N]` map: rendering any
/// per-Gaussian attribute is this matrix times the attribute table.
pub fn compositing_weights(scene: &GaussianScene, cam: &Camera) -> Result<SparseRows> {
    let splats = project_scene(scene, cam)?;
    let (width, height) = (cam.width, cam.height);
    let (tx, ty, bins) = bin_tiles(&splats, width, height);
    let tile_rows = |t: usize| {
        let (x0, y0) = ((t % tx) * TILE, (t / tx) * TILE);
        let (w, h) = (TILE.min(width - x0), TILE.min(height - y0));
        let mut rows = Vec::with_capacity(w * h);
        for ly in 0..h {
            for lx in 0..w {
                let mut entries = Vec::new();
                composite_pixel(
                    bins[t].iter().map(|&k| &splats[k as usize]),
                    (x0 + lx) as f32 + 0.5,
                    (y0 + ly) as f32 + 0.5,
                    |s, wgt| entries.push((s.source_index, wgt)),
                );
                rows.push(entries);
            }
        }
        rows
    };
    #[cfg(feature = "parallel")]
    let tiles: Vec<Vec<Vec<(usize, f32)>>> = {
        use rayon::prelude::*;
        (0..tx * ty).into_par_iter().map(tile_rows).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let tiles: Vec<Vec<Vec<(usize, f32)>>> = (0..tx * ty).map(tile_rows).collect();

    let mut map = SparseRows::new(scene.len());
    for y in 0..height {
        for x in 0..width {
            let t = (y / TILE) * tx + x / TILE;
            let tw = TILE.min(width - (x / TILE) * TILE);
            let row = &tiles[t][(y % TILE) * tw + x % TILE];
            map.push_row(row.iter().copied());
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests;
