//! Deterministic seeded stand-ins for the VGG-like and CLIP-like encoders,
//! the hashing text stub, and the synthetic paired-distribution generator.

mod paired;
mod text;
mod texture;

pub use paired::{sample_paired, GaussianMixture, PairedDistributionSpec, Pairing};
pub use text::{concept_pair, concept_params, encode_text, fnv1a, CONCEPT_SIZE};
pub use texture::{procedural_texture, Pattern, TextureParams};

use crate::diff::{
    glorot, Activation, ConvLayerSpec, ConvNet, DenseNet, DenseNetSpec, DiffError, Module, Real, Tape, Var,
};
use crate::features::{Domain, FeatureSet, Provenance};
use crate::image::Image;
use crate::{Error, Result};

pub const DEFAULT_VGG_SEED: u64 = 0x5647_4701;
pub const DEFAULT_CLIP_SEED: u64 = 0xC11F_0001;
pub const CLIP_DIM: usize = 64;
/// Floor applied to feature standard deviations before `softplus^-1`.
pub const STD_FLOOR: f32 = 1e-6;

/// Inputs are shifted by this before the first layer (a fixed mean subtraction).
const INPUT_CENTER: f32 = 0.5;

fn centered(img: &Image) -> Result<Vec<f32>> {
    if img.channels != 3 {
        return Err(Error::invalid(format!(
            "encoders take RGB images, got {} channels",
            img.channels
        )));
    }
    img.ensure_finite()?;
    Ok(img.data.iter().map(|v| v - INPUT_CENTER).collect())
}

/// Numerically safe inverse of softplus.
pub fn softplus_inv(y: f32) -> f32 {
    let y = y.max(STD_FLOOR);
    if y > 20.0 {
        y
    } else {
        (y as f64).exp_m1().ln() as f32
    }
}

/// Pseudo-VGG: a 1x1 block (so tap 0 sees single pixels) followed by three
/// 3x3 stride-2 valid blocks; ReLU throughout; taps after every block.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoVgg {
    net: ConvNet,
    embed_dim: usize,
    embed_tap: usize,
    /// `[D, C_tap]` row-major; identity when the widths agree.
    projection: Vec<f32>,
}

pub const VGG_WIDTHS: [usize; 4] = [8, 16, 32, 64];

impl PseudoVgg {
    pub fn new(seed: u64, embed_dim: usize) -> Result<Self> {
        if embed_dim == 0 || embed_dim > *VGG_WIDTHS.last().unwrap() {
            return Err(Error::invalid(format!(
                "embedding dimension {embed_dim} outside 1..=64"
            )));
        }
        let mut layers = Vec::new();
        let mut cin = 3;
        for (i, &c) in VGG_WIDTHS.iter().enumerate() {
            let (kernel, stride) = if i == 0 { (1, 1) } else { (3, 2) };
            layers.push(ConvLayerSpec {
                in_channels: cin,
                out_channels: c,
                kernel,
                stride,
                padding: 0,
                activation: Activation::Relu,
            });
            cin = c;
        }
        let net = ConvNet::new(layers, seed)?;
        let embed_tap = VGG_WIDTHS.iter().position(|&c| c >= embed_dim).unwrap();
        let width = VGG_WIDTHS[embed_tap];
        let projection = if width == embed_dim {
            (0..embed_dim * width)
                .map(|i| if i / width == i % width { 1.0 } else { 0.0 })
                .collect()
        } else {
            glorot(seed, 1000, width, embed_dim, embed_dim * width)
        };
        Ok(Self {
            net,
            embed_dim,
            embed_tap,
            projection,
        })
    }

    pub fn with_default_seed(embed_dim: usize) -> Result<Self> {
        Self::new(DEFAULT_VGG_SEED, embed_dim)
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut ConvNet {
        &mut self.net
    }

    pub fn tap_count(&self) -> usize {
        VGG_WIDTHS.len()
    }

    pub fn tap_channels(&self) -> &'static [usize] {
        &VGG_WIDTHS
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Tap whose features the embedding space is tied to.
    pub fn embed_tap(&self) -> usize {
        self.embed_tap
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    /// Receptive-field geometry (size, stride) of each tap in input pixels.
    pub fn tap_geometry(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let (mut rf, mut jump) = (1usize, 1usize);
        for l in self.net.layers() {
            rf += (l.kernel - 1) * jump;
            jump *= l.stride;
            out.push((rf, jump));
        }
        out
    }

    /// Feature maps `[C_i, h_i, w_i]` at every tap.
    pub fn tap_features(&self, img: &Image) -> Result<Vec<Image>> {
        let x = centered(img)?;
        let outs = self
            .net
            .predict_all(&x, img.height, img.width)
            .ok_or_else(|| Error::invalid(format!("image {}x{} too small for the encoder", img.height, img.width)))?;
        outs.into_iter()
            .zip(VGG_WIDTHS)
            .map(|((data, h, w), c)| Image::new(c, h, w, data))
            .collect()
    }

    /// Per-tap channel (mean, population std).
    pub fn tap_stats(&self, img: &Image) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
        Ok(self.tap_features(img)?.iter().map(channel_stats).collect())
    }

    /// The embedding-tap features projected to `[D, h, w]`.
    pub fn embed_map(&self, img: &Image) -> Result<Image> {
        let f = self.tap_features(img)?.swap_remove(self.embed_tap);
        Ok(self.project(&f))
    }

    pub fn project(&self, f: &Image) -> Image {
        let (c, n, d) = (f.channels, f.pixels(), self.embed_dim);
        let mut out = vec![0.0f32; d * n];
        crate::diff::kernels::matmul_acc(&self.projection, &f.data, &mut out, d, c, n);
        Image::new(d, f.height, f.width, out).expect("sized above")
    }

    /// Channel mean and std of the projected embedding-tap features.
    pub fn style_moments(&self, img: &Image) -> Result<(Vec<f32>, Vec<f32>)> {
        Ok(channel_stats(&self.embed_map(img)?))
    }

    /// `[mu (D), softplus^-1(sigma) (D)]`, so that splitting the vector and
    /// applying softplus to the second half recovers the moments.
    pub fn style_vector(&self, img: &Image) -> Result<Vec<f32>> {
        let (mu, sigma) = self.style_moments(img)?;
        Ok(mu.into_iter().chain(sigma.into_iter().map(softplus_inv)).collect())
    }

    pub fn style_dim(&self) -> usize {
        2 * self.embed_dim
    }

    /// One style vector per image.
    pub fn encode(&self, images: &[Image]) -> Result<FeatureSet> {
        let rows = images
            .iter()
            .map(|i| self.style_vector(i))
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::from_rows(Domain::VggLike, &rows, Provenance::PseudoEncoder)
    }

    /// Tap activations recorded on a tape, for losses that differentiate
    /// through the encoder. `x` is an un-centered `[3, H, W]` image variable.
    pub fn forward_taps<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Vec<Var>, DiffError> {
        let xc = tape.add_scalar(x, -INPUT_CENTER)?;
        self.net.forward_all(tape, bound, xc)
    }
}

fn channel_stats(f: &Image) -> (Vec<f32>, Vec<f32>) {
    let (m, s) = crate::diff::kernels::channel_moments(&f.data, f.channels);
    (
        m.into_iter().map(|v| v as f32).collect(),
        s.into_iter().map(|v| v as f32).collect(),
    )
}

/// Pseudo-CLIP: its own conv stack, global mean pooling, a linear head and L2
/// normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoClip {
    net: ConvNet,
    head: DenseNet,
}

impl PseudoClip {
    pub fn new(seed: u64) -> Result<Self> {
        let widths = [16, 32, 64];
        let mut layers = Vec::new();
        let mut cin = 3;
        for &c in &widths {
            layers.push(ConvLayerSpec {
                in_channels: cin,
                out_channels: c,
                kernel: 3,
                stride: 2,
                padding: 0,
                activation: Activation::Tanh,
            });
            cin = c;
        }
        Ok(Self {
            net: ConvNet::new(layers, seed)?,
            head: DenseNet::new(DenseNetSpec::uniform(
                vec![cin, CLIP_DIM],
                Activation::None,
                seed ^ 0xC11F,
            ))?,
        })
    }

    pub fn with_default_seed() -> Result<Self> {
        Self::new(DEFAULT_CLIP_SEED)
    }

    pub fn dim(&self) -> usize {
        CLIP_DIM
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn embed(&self, img: &Image) -> Result<Vec<f32>> {
        let x = centered(img)?;
        let outs = self
            .net
            .predict_all(&x, img.height, img.width)
            .ok_or_else(|| Error::invalid(format!("image {}x{} too small for the encoder", img.height, img.width)))?;
        let (last, h, w) = outs.last().expect("non-empty net");
        let c = last.len() / (h * w);
        let pooled: Vec<f32> = last
            .chunks_exact(h * w)
            .map(|ch| ch.iter().sum::<f32>() / (h * w) as f32)
            .collect();
        debug_assert_eq!(pooled.len(), c);
        Ok(l2_normalize(self.head.predict(&pooled, 1)))
    }

    pub fn encode(&self, images: &[Image]) -> Result<FeatureSet> {
        let rows = images.iter().map(|i| self.embed(i)).collect::<Result<Vec<_>>>()?;
        FeatureSet::from_rows(Domain::ClipLike, &rows, Provenance::PseudoEncoder)
    }
}

impl Module for PseudoClip {
    fn params(&self) -> Vec<&crate::diff::DiffTensor> {
        let mut p = self.net.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut crate::diff::DiffTensor> {
        let mut p = self.net.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

pub fn l2_normalize(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
    v
}

pub fn encode_vgg_like(enc: &PseudoVgg, img: &Image) -> Result<FeatureSet> {
    enc.encode(std::slice::from_ref(img))
}

pub fn encode_clip_like(enc: &PseudoClip, img: &Image) -> Result<FeatureSet> {
    enc.encode(std::slice::from_ref(img))
}
