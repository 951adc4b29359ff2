use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::checkpoint::{load_params, save_params};
use crate::diff::{Activation, AdamState, DenseNet, DenseNetSpec, DiffTensor, Module, Tape};
use crate::encoders::{procedural_texture, PseudoVgg};
use crate::image::Image;
use crate::transfer::{adain, StyleStats, EPSILON_STD};
use crate::{Error, Result};

pub const GENERATOR_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub textures: usize,
    pub size: usize,
    pub steps: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            textures: 200,
            size: 32,
            steps: 2000,
            learning_rate: 5e-3,
            seed: 29,
        }
    }
}

/// 2D AdaIN stylizer on the encoder's pixel-aligned first tap: per-pixel
/// features are renormalised to the style image's tap-0 channel statistics
/// and mapped back to RGB by a pointwise decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator2d {
    decoder: DenseNet,
    trained: bool,
}

fn pixel_rows(f: &Image) -> Vec<f32> {
    f.to_hwc()
}

impl Generator2d {
    pub fn new(enc: &PseudoVgg, seed: u64) -> Result<Self> {
        let c = enc.tap_channels()[0];
        let spec = DenseNetSpec::uniform(vec![c, GENERATOR_HIDDEN, 3], Activation::Tanh, seed);
        Ok(Self {
            decoder: DenseNet::new(spec)?,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Pixel reconstruction training on a seeded texture corpus. Returns the
    /// generator and its per-step loss.
    pub fn pretrain(enc: &PseudoVgg, cfg: &GeneratorConfig) -> Result<(Self, Vec<f32>)> {
        if cfg.textures == 0 || cfg.size < 2 {
            return Err(Error::invalid("generator pretraining needs textures and size >= 2"));
        }
        let mut gen = Self::new(enc, cfg.seed)?;
        let c = enc.tap_channels()[0];
        let corpus: Vec<(Vec<f32>, Vec<f32>)> = (0..cfg.textures)
            .map(|i| {
                let img = procedural_texture(cfg.seed, i as u64, cfg.size, cfg.size);
                let f = enc.tap_features(&img)?.swap_remove(0);
                Ok((pixel_rows(&f), img.to_hwc()))
            })
            .collect::<Result<_>>()?;
        let rows = cfg.size * cfg.size;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6E4E);
        let mut adam = AdamState::new(cfg.learning_rate);
        let mut losses = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let (x, y) = &corpus[rng.random_range(0..corpus.len())];
            gen.decoder.zero_grad();
            let mut tape: Tape = Tape::new();
            let vars = gen.decoder.bind(&mut tape);
            let xv = tape.constant(&[rows, c], x.clone())?;
            let yv = tape.constant(&[rows, 3], y.clone())?;
            let h = gen.decoder.forward(&mut tape, &vars, xv)?;
            let out = tape.sigmoid(h)?;
            let loss = tape.mse(out, yv)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::numeric(format!("generator pretraining diverged at step {step}")));
            }
            tape.backward(loss)?;
            tape.accumulate_into(&vars, gen.decoder.params_mut())?;
            adam.learning_rate = cfg.learning_rate * (1.0 - 0.9 * step as f32 / cfg.steps as f32);
            adam.step(gen.decoder.params_mut())?;
            losses.push(value);
        }
        gen.decoder.zero_grad();
        gen.trained = true;
        Ok((gen, losses))
    }

    fn check_trained(&self) -> Result<()> {
        if !self.trained {
            return Err(Error::invalid("the 2D generator has not been pre-trained"));
        }
        Ok(())
    }

    fn decode_rows(&self, rows: &[f32], h: usize, w: usize) -> Result<Image> {
        let out = self.decoder.predict(rows, h * w);
        let rgb: Vec<f32> = out.iter().map(|&v| crate::diff::kernels::sigmoid(v)).collect();
        Image::from_hwc(3, h, w, &rgb)
    }

    /// Decodes the content image's own tap-0 features.
    pub fn reconstruct(&self, content: &Image, enc: &PseudoVgg) -> Result<Image> {
        self.check_trained()?;
        let f = enc.tap_features(content)?.swap_remove(0);
        self.decode_rows(&pixel_rows(&f), f.height, f.width)
    }

    /// `I_g`: content features renormalised to `style` (tap-0 channel mean
    /// and std), then decoded.
    pub fn generate_with_stats(&self, content: &Image, style: &(Vec<f32>, Vec<f32>), enc: &PseudoVgg) -> Result<Image> {
        self.check_trained()?;
        let f = enc.tap_features(content)?.swap_remove(0);
        let sigma = style.1.iter().map(|&s| s.max(EPSILON_STD)).collect();
        let stats = StyleStats::new(style.0.clone(), sigma)?;
        let moved = adain(&pixel_rows(&f), f.channels, &stats)?;
        self.decode_rows(&moved.data, f.height, f.width)
    }

    pub fn generate(&self, content: &Image, style: &Image, enc: &PseudoVgg) -> Result<Image> {
        let stats = enc.tap_stats(style)?.swap_remove(0);
        self.generate_with_stats(content, &stats, enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_trained()?;
        save_params(path, &self.decoder.params())
    }

    /// Loaded generators count as trained.
    pub fn load(path: &Path, enc: &PseudoVgg) -> Result<Self> {
        let params: Vec<DiffTensor> = load_params(path)?;
        let gen = Self::new(enc, 0)?;
        let spec = gen.decoder.spec().clone();
        let decoder =
            DenseNet::from_params(spec, params).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok(Self { decoder, trained: true })
    }
}

impl Module for Generator2d {
    fn params(&self) -> Vec<&DiffTensor> {
        self.decoder.params()
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.decoder.params_mut()
    }
}
