use crate::scene::Camera;

/// Relative depth disagreement above which a reprojected pixel counts as occluded.
pub const OCCLUSION_TOL: f32 = 0.02;
// Absorbs round-off on the outermost pixel centers.
const EDGE_SLACK: f32 = 1e-3;

/// Per source pixel, the continuous destination pixel coordinate and validity.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMap {
    pub width: usize,
    pub height: usize,
    pub coords: Vec<[f32; 2]>,
    pub valid: Vec<bool>,
}

impl WarpMap {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Reprojects every source pixel through its rendered depth into `dst`.
/// Pixels with infinite depth, landing outside the destination frame (between
/// the outermost pixel centers), or disagreeing with `dst_depth` by more than
/// 2% (occlusion) are invalid.
pub fn warp_map(src: &Camera, dst: &Camera, depth_src: &[f32], dst_depth: Option<&[f32]>) -> WarpMap {
    let (w, h) = (src.width, src.height);
    let mut coords = vec![[f32::NAN; 2]; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let z = depth_src[p];
            if !z.is_finite() {
                continue;
            }
            if src == dst {
                coords[p] = [x as f32 + 0.5, y as f32 + 0.5];
                valid[p] = true;
                continue;
            }
            let world = src.unproject(x as f32 + 0.5, y as f32 + 0.5, z);
            let pc = dst.world_to_camera(world);
            if !(pc.z >= dst.near) {
                continue;
            }
            let (u, v) = dst.project(&pc);
            coords[p] = [u, v];
            let (lo, hi_u, hi_v) = (
                0.5 - EDGE_SLACK,
                dst.width as f32 - 0.5 + EDGE_SLACK,
                dst.height as f32 - 0.5 + EDGE_SLACK,
            );
            let inside = u >= lo && u <= hi_u && v >= lo && v <= hi_v;
            if !inside {
                continue;
            }
            if let Some(dd) = dst_depth {
                let (qx, qy) = ((u as usize).min(dst.width - 1), (v as usize).min(dst.height - 1));
                let seen = dd[qy * dst.width + qx];
                if !seen.is_finite() || (seen - pc.z).abs() > OCCLUSION_TOL * pc.z {
                    continue;
                }
            }
            valid[p] = true;
        }
    }
    WarpMap {
        width: w,
        height: h,
        coords,
        valid,
    }
}
