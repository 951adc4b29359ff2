//! Channel-major float images, the currency between renderer, encoders and losses.

use crate::{Error, Result};

/// `[channels, height, width]` row-major floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image size {channels}x{height}x{width} is empty"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image buffer has {} values, {channels}x{height}x{width} needs {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds from pixel-interleaved `[height, width, channels]` data.
    pub fn from_hwc(channels: usize, height: usize, width: usize, hwc: &[f32]) -> Result<Self> {
        let n = height * width;
        if hwc.len() != n * channels {
            return Err(Error::invalid("interleaved buffer does not match image size"));
        }
        let mut data = vec![0.0; hwc.len()];
        for p in 0..n {
            for c in 0..channels {
                data[c * n + p] = hwc[p * channels + c];
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn to_hwc(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for p in 0..n {
                out[p * self.channels + c] = self.data[c * n + p];
            }
        }
        out
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::invalid(format!("image has a non-finite value at index {i}"))),
            None => Ok(()),
        }
    }

    /// Bilinear sample of every channel at continuous pixel coordinates,
    /// where pixel centers sit at `i + 0.5`. Coordinates are clamped to the
    /// outermost pixel centers.
    pub fn sample_bilinear(&self, u: f32, v: f32, out: &mut [f32]) {
        let fx = (u - 0.5).clamp(0.0, (self.width - 1) as f32);
        let fy = (v - 0.5).clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let a = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
            let b = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
            *o = a * (1.0 - ty) + b * ty;
        }
    }
}
