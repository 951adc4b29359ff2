//! Stylization objectives: content/style statistics, the observation loss
//! against a 2D prior, the multi-scale suppression discriminator, and the
//! training loop that tunes the per-Gaussian decoder.

mod generator;
mod train;

pub use generator::{Generator2d, GeneratorConfig, GENERATOR_HIDDEN};
pub use train::{
    moving_average_ends, render_on_tape, stylization_csv, train_stylization, StepLog, StyleGuide, Stylization,
    StylizationConfig, StylizationTask, StylizationView,
};

use crate::diff::{Activation, ConvLayerSpec, ConvNet, DiffError, DiffTensor, Module, Real, Tape, Var};
use crate::encoders::PseudoVgg;
use crate::image::Image;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f32 = 1e-7;

pub type TapStats = Vec<(Vec<f32>, Vec<f32>)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_style: f32,
    pub lambda_obs: f32,
    pub lambda_flow: f32,
    /// Weight of the generator-side suppression signal; 0 disables the
    /// discriminator entirely.
    pub suppression: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_style: 10.0,
            lambda_obs: 1.0,
            lambda_flow: 1.0,
            suppression: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_style", self.lambda_style),
            ("lambda_obs", self.lambda_obs),
            ("lambda_flow", self.lambda_flow),
            ("suppression", self.suppression),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub content: f64,
    pub style: f64,
    pub obs: f64,
    pub flow: f64,
}

pub fn total_stylized_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("content", parts.content),
        ("style", parts.style),
        ("obs", parts.obs),
        ("flow", parts.flow),
    ] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("loss part '{name}' is not finite ({v})")));
        }
    }
    Ok(parts.content
        + w.lambda_style as f64 * parts.style
        + w.lambda_obs as f64 * parts.obs
        + w.lambda_flow as f64 * parts.flow)
}

fn same_size(a: &Image, b: &Image, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{op}: image shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// MSE between the deepest-tap features of two images.
pub fn content_loss(stylized: &Image, content: &Image, enc: &PseudoVgg) -> Result<f64> {
    same_size(stylized, content, "content_loss")?;
    let a = enc.tap_features(stylized)?.pop().expect("encoder has taps");
    let b = enc.tap_features(content)?.pop().expect("encoder has taps");
    Ok(mse(&a.data, &b.data))
}

/// Sum over taps of squared distances between channel (mean, std) and the
/// reference statistics.
pub fn style_loss(stylized: &Image, refs: &[(Vec<f32>, Vec<f32>)], enc: &PseudoVgg) -> Result<f64> {
    check_refs(refs, enc)?;
    let stats = enc.tap_stats(stylized)?;
    Ok(stats
        .iter()
        .zip(refs)
        .map(|((m, s), (rm, rs))| {
            let dm: f64 = m.iter().zip(rm).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
            let ds: f64 = s.iter().zip(rs).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
            dm + ds
        })
        .sum())
}

fn check_refs(refs: &[(Vec<f32>, Vec<f32>)], enc: &PseudoVgg) -> Result<()> {
    if refs.len() != enc.tap_count() {
        return Err(Error::invalid(format!(
            "style reference has {} taps, the encoder has {}",
            refs.len(),
            enc.tap_count()
        )));
    }
    for (i, ((m, s), &c)) in refs.iter().zip(enc.tap_channels()).enumerate() {
        if m.len() != c || s.len() != c {
            return Err(Error::invalid(format!("style reference tap {i} needs {c} channels")));
        }
    }
    Ok(())
}

/// Sum over taps of the per-tap feature MSE.
pub fn observation_loss(prior: &Image, stylized: &Image, enc: &PseudoVgg) -> Result<f64> {
    same_size(prior, stylized, "observation_loss")?;
    let a = enc.tap_features(prior)?;
    let b = enc.tap_features(stylized)?;
    Ok(a.iter().zip(&b).map(|(x, y)| mse(&x.data, &y.data)).sum())
}

/// Records `module`'s parameters as constants so nothing upstream of them
/// receives a gradient.
pub fn bind_frozen<T: Real, M: Module>(tape: &mut Tape<T>, module: &M) -> Result<Vec<Var>, DiffError> {
    module
        .params()
        .into_iter()
        .map(|p| tape.constant(p.shape(), p.data().to_vec()))
        .collect()
}

fn sum_vars<T: Real>(tape: &mut Tape<T>, terms: Vec<Var>) -> Result<Var, DiffError> {
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| DiffError::Config("empty sum".into()))?;
    for t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

pub fn content_loss_tape<T: Real>(tape: &mut Tape<T>, taps: &[Var], deepest_target: Var) -> Result<Var, DiffError> {
    tape.mse(*taps.last().expect("encoder has taps"), deepest_target)
}

/// `refs[i]` is a `[2, C_i]` constant (means row, stds row).
pub fn style_loss_tape<T: Real>(tape: &mut Tape<T>, taps: &[Var], refs: &[Var]) -> Result<Var, DiffError> {
    if taps.len() != refs.len() {
        return Err(DiffError::Config(format!(
            "{} taps but {} references",
            taps.len(),
            refs.len()
        )));
    }
    let mut terms = Vec::with_capacity(taps.len());
    for (&f, &r) in taps.iter().zip(refs) {
        let m = tape.channel_moments(f)?;
        let d = tape.sub(m, r)?;
        let sq = tape.square(d)?;
        terms.push(tape.sum(sq)?);
    }
    sum_vars(tape, terms)
}

pub fn observation_loss_tape<T: Real>(tape: &mut Tape<T>, taps: &[Var], targets: &[Var]) -> Result<Var, DiffError> {
    let mut terms = Vec::with_capacity(taps.len());
    for (&f, &t) in taps.iter().zip(targets) {
        terms.push(tape.mse(f, t)?);
    }
    sum_vars(tape, terms)
}

/// Encoder taps of a `[3, H, W]` image variable with frozen encoder weights.
pub fn frozen_taps<T: Real>(tape: &mut Tape<T>, enc: &PseudoVgg, img: Var) -> Result<Vec<Var>, DiffError> {
    let bound = bind_frozen(tape, enc.net())?;
    enc.forward_taps(tape, &bound, img)
}

pub const DISC_SCALES: usize = 3;
pub const DISC_WIDTH: usize = 16;

/// Multi-scale discriminator: one conv stack shared by every scale, each
/// scale a 2x average-pooled copy of the previous one. The last layer has a
/// single channel whose spatial mean is the scale's logit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    net: ConvNet,
    scales: usize,
}

impl DiscriminatorNet {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_scales(seed, DISC_SCALES)
    }

    pub fn with_scales(seed: u64, scales: usize) -> Result<Self> {
        if scales < 2 {
            return Err(Error::invalid(format!(
                "discriminator needs at least 2 scales, got {scales}"
            )));
        }
        let layer = |cin, cout, stride, activation| ConvLayerSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: 3,
            stride,
            padding: 1,
            activation,
        };
        let layers = vec![
            layer(3, DISC_WIDTH, 2, Activation::Tanh),
            layer(DISC_WIDTH, DISC_WIDTH, 2, Activation::Tanh),
            layer(DISC_WIDTH, 1, 1, Activation::None),
        ];
        Ok(Self {
            net: ConvNet::new(layers, seed)?,
            scales,
        })
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn from_params(params: Vec<DiffTensor>, scales: usize) -> Result<Self> {
        let mut d = Self::with_scales(0, scales)?;
        if params.len() != d.net.params().len()
            || params.iter().zip(d.net.params()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::invalid(
                "discriminator checkpoint does not match the architecture",
            ));
        }
        for (dst, src) in d.net.params_mut().into_iter().zip(params) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(d)
    }

    /// Per-scale probabilities as `[1]` variables.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], img: Var) -> Result<Vec<Var>, DiffError> {
        let mut out = Vec::with_capacity(self.scales);
        let mut x = img;
        for s in 0..self.scales {
            if s > 0 {
                x = tape.avg_pool2(x)?;
            }
            let h = *self.net.forward_all(tape, bound, x)?.last().expect("three layers");
            let logit = tape.mean(h)?;
            out.push(tape.sigmoid(logit)?);
        }
        Ok(out)
    }

    pub fn predict(&self, img: &Image) -> Result<Vec<f32>> {
        let mut tape: Tape = Tape::new();
        let bound = bind_frozen(&mut tape, &self.net)?;
        let x = tape.constant(&[img.channels, img.height, img.width], img.data.clone())?;
        let probs = self.forward(&mut tape, &bound, x)?;
        Ok(probs.iter().map(|&p| tape.scalar(p)).collect())
    }
}

impl Module for DiscriminatorNet {
    fn params(&self) -> Vec<&DiffTensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.net.params_mut()
    }
}

fn neg_mean_log<T: Real>(tape: &mut Tape<T>, probs: &[Var], complement: bool) -> Result<Var, DiffError> {
    let mut terms = Vec::with_capacity(probs.len());
    for &p in probs {
        let q = if complement {
            let neg = tape.scale(p, -1.0)?;
            tape.add_scalar(neg, 1.0)?
        } else {
            p
        };
        let c = tape.clamp(q, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        terms.push(tape.ln(c)?);
    }
    let n = terms.len();
    let s = sum_vars(tape, terms)?;
    tape.scale(s, -1.0 / n as f32)
}

/// `-(mean over scales)[log eta(I_g) + log(1 - eta(I_f))]`.
pub fn disc_loss_tape<T: Real>(tape: &mut Tape<T>, real: &[Var], fake: &[Var]) -> Result<Var, DiffError> {
    let a = neg_mean_log(tape, real, false)?;
    let b = neg_mean_log(tape, fake, true)?;
    tape.add(a, b)
}

/// `-(mean over scales) log eta(I_f)`.
pub fn gen_signal_tape<T: Real>(tape: &mut Tape<T>, fake: &[Var]) -> Result<Var, DiffError> {
    neg_mean_log(tape, fake, false)
}

/// Discriminator loss and generator signal as plain numbers.
pub fn suppression_loss(prior: &Image, stylized: &Image, disc: &DiscriminatorNet) -> Result<(f64, f64)> {
    same_size(prior, stylized, "suppression_loss")?;
    let real: Vec<f64> = disc.predict(prior)?.into_iter().map(f64::from).collect();
    let fake: Vec<f64> = disc.predict(stylized)?.into_iter().map(f64::from).collect();
    Ok(suppression_from_probs(&real, &fake))
}

/// Closed-form versions of the two suppression terms for given per-scale
/// probabilities.
pub fn suppression_from_probs(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let floor = PROB_FLOOR as f64;
    let clamp = |p: f64| p.clamp(floor, 1.0 - floor);
    let s = real.len() as f64;
    let d = -real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| clamp(r).ln() + (1.0 - clamp(f)).ln())
        .sum::<f64>()
        / s;
    let g = -fake.iter().map(|&f| clamp(f).ln()).sum::<f64>() / s;
    (d, g)
}

#[cfg(test)]
mod tests;
