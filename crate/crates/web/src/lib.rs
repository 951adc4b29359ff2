//! wasm-bindgen wrapper around a small in-memory scene for the static demo
//! page in `www/`. Each exported method has a `try_` twin returning the
//! library error type so the demo logic can be tested natively.

use subflow::encoders::{procedural_texture, PseudoVgg, DEFAULT_VGG_SEED};
use subflow::image::Image;
use subflow::render::render;
use subflow::scene::{camera_ring, generate_toy_scene, orbit_camera, GaussianScene, Intrinsics, SceneKind};
use subflow::transfer::{distill_embeddings, stats_from_vector, stylize_scene, DecoderNet, DistillConfig};
use subflow::{Error, Result};
use wasm_bindgen::prelude::*;

pub const EMBED_DIM: usize = 32;
pub const STYLE_SEED: u64 = 77;
const RADIUS: f32 = 4.0;
const TRAIN_VIEWS: usize = 8;
const TRAIN_SIZE: usize = 64;
const TRAIN_FOCAL: f32 = 128.0;
const TRAIN_ELEVATION_DEG: f32 = 50.0;
const STYLE_SIZE: usize = 64;

fn intrinsics(size: usize) -> Intrinsics {
    Intrinsics {
        focal: TRAIN_FOCAL * size as f32 / TRAIN_SIZE as f32,
        width: size,
        height: size,
        ..Intrinsics::default()
    }
}

fn rgba(img: &Image) -> Vec<u8> {
    let hwc = img.to_hwc();
    let mut out = Vec::with_capacity(img.pixels() * 4);
    for px in hwc.chunks(img.channels) {
        out.extend(px.iter().take(3).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out.push(255);
    }
    out
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    content: GaussianScene,
    shown: GaussianScene,
    vgg: PseudoVgg,
    decoder: Option<DecoderNet>,
}

impl Demo {
    pub fn try_new(kind: &str, n: usize, seed: u64) -> Result<Demo> {
        let kind: SceneKind = kind.parse()?;
        let content = generate_toy_scene(kind, n, seed, EMBED_DIM)?;
        Ok(Demo {
            shown: content.clone(),
            content,
            vgg: PseudoVgg::new(DEFAULT_VGG_SEED, EMBED_DIM)?,
            decoder: None,
        })
    }

    pub fn try_render(&self, azimuth_deg: f32, elevation_deg: f32, size: usize) -> Result<Vec<u8>> {
        let cam = orbit_camera(
            [0.0; 3],
            RADIUS,
            azimuth_deg.to_radians(),
            elevation_deg.to_radians(),
            &intrinsics(size),
        )?;
        Ok(rgba(&render(&self.shown, &cam)?.rgb_image()))
    }

    /// Distills embeddings and a color decoder; returns the final
    /// reconstruction error.
    pub fn try_distill(&mut self, steps: usize) -> Result<f64> {
        let cams = camera_ring(
            [0.0; 3],
            RADIUS,
            TRAIN_VIEWS,
            TRAIN_ELEVATION_DEG.to_radians(),
            &intrinsics(TRAIN_SIZE),
        )?;
        let cfg = DistillConfig {
            steps,
            learning_rate: 1e-2,
            ..DistillConfig::default()
        };
        let d = distill_embeddings(&self.content, &cams, &self.vgg, &cfg)?;
        let err = d.reconstruction_error()?;
        self.content = d.scene;
        self.shown = self.content.clone();
        self.decoder = Some(d.decoder);
        Ok(err)
    }

    pub fn try_stylize(&mut self, style_index: u64) -> Result<()> {
        let decoder = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::invalid("distill the scene before stylizing it"))?;
        let style = procedural_texture(STYLE_SEED, style_index, STYLE_SIZE, STYLE_SIZE);
        let stats = stats_from_vector(&self.vgg.style_vector(&style)?)?;
        self.shown = stylize_scene(&self.content, &stats, decoder)?;
        Ok(())
    }
}

#[wasm_bindgen]
impl Demo {
    /// `kind` is one of lattice, two_clusters, textured_slab.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, n: usize, seed: u32) -> std::result::Result<Demo, JsError> {
        Demo::try_new(kind, n, seed as u64).map_err(js)
    }

    /// RGBA bytes of a `size` x `size` view from the given orbit angles.
    pub fn render(&self, azimuth_deg: f32, elevation_deg: f32, size: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.try_render(azimuth_deg, elevation_deg, size).map_err(js)
    }

    pub fn distill(&mut self, steps: usize) -> std::result::Result<f64, JsError> {
        self.try_distill(steps).map_err(js)
    }

    pub fn stylize(&mut self, style_index: u32) -> std::result::Result<(), JsError> {
        self.try_stylize(style_index as u64).map_err(js)
    }

    #[wasm_bindgen(js_name = resetStyle)]
    pub fn reset_style(&mut self) {
        self.shown = self.content.clone();
    }

    #[wasm_bindgen(getter)]
    pub fn distilled(&self) -> bool {
        self.decoder.is_some()
    }

    #[wasm_bindgen(getter)]
    pub fn count(&self) -> usize {
        self.content.len()
    }
}

/// RGBA bytes of style texture `index` at `size` x `size`.
#[wasm_bindgen]
pub fn texture(index: u32, size: usize) -> Vec<u8> {
    rgba(&procedural_texture(STYLE_SEED, index as u64, size, size))
}
