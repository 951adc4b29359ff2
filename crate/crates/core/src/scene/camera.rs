use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// Pinhole camera. `orientation` rotates camera axes into world axes
/// (x right, y down, z forward); the principal point is the image center.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: [f32; 3],
    pub orientation: [f32; 4],
    pub focal: f32,
    pub width: usize,
    pub height: usize,
    pub near: f32,
    pub far: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f32,
    pub width: usize,
    pub height: usize,
    pub near: f32,
    pub far: f32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            focal: 64.0,
            width: 64,
            height: 64,
            near: 0.1,
            far: 100.0,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "camera needs 0 < near < far, got {} / {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be at least 1x1"));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::invalid("camera focal length must be positive"));
        }
        let qn = self.orientation.iter().map(|v| v * v).sum::<f32>().sqrt();
        if (qn - 1.0).abs() > 1e-5 {
            return Err(Error::invalid(format!("camera orientation norm {qn} is not 1")));
        }
        Ok(())
    }

    pub fn rotation(&self) -> UnitQuaternion<f32> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
    }

    pub fn center(&self) -> (f32, f32) {
        (self.width as f32 * 0.5, self.height as f32 * 0.5)
    }

    pub fn world_to_camera(&self, p: [f32; 3]) -> Vector3<f32> {
        let d = Vector3::from(p) - Vector3::from(self.position);
        self.rotation().inverse_transform_vector(&d)
    }

    pub fn camera_to_world(&self, p: Vector3<f32>) -> [f32; 3] {
        (self.rotation().transform_vector(&p) + Vector3::from(self.position)).into()
    }

    /// Pixel coordinates of a camera-space point (pixel centers sit at `i + 0.5`).
    pub fn project(&self, pc: &Vector3<f32>) -> (f32, f32) {
        let (cx, cy) = self.center();
        (self.focal * pc.x / pc.z + cx, self.focal * pc.y / pc.z + cy)
    }

    /// World point seen at pixel coordinate `(u, v)` with camera-space depth `z`.
    pub fn unproject(&self, u: f32, v: f32, z: f32) -> [f32; 3] {
        let (cx, cy) = self.center();
        let pc = Vector3::new((u - cx) / self.focal * z, (v - cy) / self.focal * z, z);
        self.camera_to_world(pc)
    }

    pub fn forward(&self) -> Vector3<f32> {
        self.rotation().transform_vector(&Vector3::z())
    }
}

/// Default ring elevation: cameras sit 50 degrees above the horizontal plane
/// through the center (world -y is up), so flat scenes are never seen edge-on.
pub const DEFAULT_ELEVATION: f32 = 50.0 * std::f32::consts::PI / 180.0;

/// A camera at distance `radius` from `center`, looking at it from azimuth
/// `azimuth` and elevation `elevation` (radians), without roll. With zero
/// azimuth and elevation it looks along +z.
pub fn orbit_camera(center: [f32; 3], radius: f32, azimuth: f32, elevation: f32, intr: &Intrinsics) -> Result<Camera> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!(
            "camera orbit radius must be positive, got {radius}"
        )));
    }
    if !(elevation.abs() < std::f32::consts::FRAC_PI_2) {
        return Err(Error::invalid(format!(
            "camera elevation {elevation} must lie strictly within +-pi/2"
        )));
    }
    let tilt = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -elevation);
    let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), azimuth) * tilt;
    let fwd = rot.transform_vector(&Vector3::z());
    let pos = Vector3::from(center) - fwd * radius;
    let q = rot.into_inner();
    let cam = Camera {
        position: pos.into(),
        orientation: super::normalize_quat([q.w, q.i, q.j, q.k]),
        focal: intr.focal,
        width: intr.width,
        height: intr.height,
        near: intr.near,
        far: intr.far,
    };
    cam.validate()?;
    Ok(cam)
}

/// `count` cameras at distance `radius` from `center`, all looking at it, at
/// azimuths `2 pi k / count` and a common `elevation` (radians). With zero
/// elevation camera 0 looks along +z. Cameras never roll.
pub fn camera_ring(
    center: [f32; 3],
    radius: f32,
    count: usize,
    elevation: f32,
    intr: &Intrinsics,
) -> Result<Vec<Camera>> {
    if count < 2 {
        return Err(Error::invalid(format!(
            "camera ring needs at least 2 cameras, got {count}"
        )));
    }
    (0..count)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / count as f64;
            orbit_camera(center, radius, theta as f32, elevation, intr)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairRange {
    Short,
    Long,
}

impl PairRange {
    pub fn name(self) -> &'static str {
        match self {
            PairRange::Short => "short",
            PairRange::Long => "long",
        }
    }
}

/// Evaluation pairs for a ring of `count` cameras: every consecutive pair
/// (wrapping) is short-range, every pair half a ring apart is long-range.
pub fn view_pairs(count: usize) -> Vec<(usize, usize, PairRange)> {
    let mut pairs: Vec<_> = (0..count).map(|i| (i, (i + 1) % count, PairRange::Short)).collect();
    let half = count / 2;
    if half >= 2 {
        pairs.extend(
            (0..count - half)
                .filter(|&i| i < half || count % 2 == 1)
                .map(|i| (i, i + half, PairRange::Long)),
        );
    }
    pairs
}
