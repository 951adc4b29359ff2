//! AdaIN on per-Gaussian embeddings, the shared per-Gaussian decoder back to
//! RGB, embedding distillation, and whole-scene restyling.

use std::path::Path;
use std::rc::Rc;

use crate::diff::checkpoint::{load_params, save_params};
use crate::diff::{
    finite_diff_check_sampled, glorot, Activation, AdamState, DenseNet, DenseNetSpec, DiffError, DiffTensor, Module,
    Objective, SparseRows, Tape, Var,
};
use crate::encoders::PseudoVgg;
use crate::features::FeatureSet;
use crate::render::{compositing_weights, render};
use crate::scene::{Camera, GaussianScene};
use crate::{Error, Result};

/// Floor on every standard deviation used as a divisor or as a target.
pub const EPSILON_STD: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl StyleStats {
    /// Floors `sigma` at [`EPSILON_STD`].
    pub fn new(mu: Vec<f32>, sigma: Vec<f32>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::invalid(format!(
                "style stats need equal non-empty mu/sigma, got {} and {}",
                mu.len(),
                sigma.len()
            )));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::numeric("style stats contain a non-finite value"));
        }
        let sigma = sigma.into_iter().map(|s| s.max(EPSILON_STD)).collect();
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Population per-column mean and std of a row-major `[n, d]` block, in f64.
pub fn column_stats(x: &[f32], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / d).max(1) as f64;
    let mut mean = vec![0.0f64; d];
    for row in x.chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for row in x.chunks(d) {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// Per-channel stats over the rows of a feature set.
pub fn stats_from_set(set: &FeatureSet) -> Result<StyleStats> {
    let (m, s) = column_stats(&set.data, set.dim);
    StyleStats::new(
        m.into_iter().map(|v| v as f32).collect(),
        s.into_iter().map(|v| v as f32).collect(),
    )
}

/// Splits one aligned vector into `(mu, softplus(second half))`.
pub fn stats_from_vector(x: &[f32]) -> Result<StyleStats> {
    if x.is_empty() || !x.len().is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "an aligned style vector must have an even, non-zero length, got {}",
            x.len()
        )));
    }
    let (mu, raw) = x.split_at(x.len() / 2);
    StyleStats::new(
        mu.to_vec(),
        raw.iter().map(|&v| crate::diff::kernels::softplus(v)).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdainOutput {
    /// Row-major `[N, D]`.
    pub data: Vec<f32>,
    /// Channels whose content std was zero and got replaced by the floor.
    pub degenerate_channels: Vec<usize>,
}

impl AdainOutput {
    pub fn flagged(&self) -> bool {
        !self.degenerate_channels.is_empty()
    }
}

/// `sigma_s * (e - mu_c) / sigma_c + mu_s` per channel, with population
/// statistics over the `N` rows.
pub fn adain(embeddings: &[f32], dim: usize, style: &StyleStats) -> Result<AdainOutput> {
    if style.dim() != dim || dim == 0 {
        return Err(Error::invalid(format!(
            "adain: embeddings are {dim}-dim but style stats are {}-dim",
            style.dim()
        )));
    }
    let n = embeddings.len() / dim;
    if n < 2 || !embeddings.len().is_multiple_of(dim) {
        return Err(Error::invalid(format!("adain needs at least 2 rows of width {dim}")));
    }
    let (mean, std) = column_stats(embeddings, dim);
    let mut degenerate = Vec::new();
    let scale: Vec<f64> = std
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let s = if s < EPSILON_STD as f64 {
                degenerate.push(j);
                EPSILON_STD as f64
            } else {
                s
            };
            style.sigma[j] as f64 / s
        })
        .collect();
    let data = embeddings
        .chunks(dim)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| ((v as f64 - mean[j]) * scale[j] + style.mu[j] as f64) as f32)
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(AdainOutput {
        data,
        degenerate_channels: degenerate,
    })
}

/// Per-Gaussian decoder from embeddings to RGB, sigmoid on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNet {
    net: DenseNet,
}

pub const DECODER_ACTIVATION: Activation = Activation::Tanh;

impl DecoderNet {
    pub fn new(embed_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![embed_dim];
        widths.extend(hidden);
        widths.push(3);
        Ok(Self {
            net: DenseNet::new(DenseNetSpec::uniform(widths, DECODER_ACTIVATION, seed))?,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn embed_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Colors for row-major `[n, D]` embeddings.
    pub fn decode(&self, embeddings: &[f32]) -> Result<Vec<[f32; 3]>> {
        let d = self.embed_dim();
        if !embeddings.len().is_multiple_of(d) {
            return Err(Error::invalid(format!("decoder expects rows of width {d}")));
        }
        let rows = embeddings.len() / d;
        let out = self.net.predict(embeddings, rows);
        let colors: Vec<[f32; 3]> = out
            .chunks(3)
            .map(|c| [0, 1, 2].map(|k| crate::diff::kernels::sigmoid(c[k])))
            .collect();
        if colors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric("decoder produced a non-finite color"));
        }
        Ok(colors)
    }

    /// Tape version: `x: [n, D]` to `[n, 3]` colors.
    pub fn forward<T: crate::diff::Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        x: Var,
    ) -> Result<Var, crate::diff::DiffError> {
        let h = self.net.forward(tape, bound, x)?;
        tape.sigmoid(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(path, &self.net.params())
    }

    /// Rebuilds the layer widths from the stored weight shapes.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(load_params(path)?).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn from_params(params: Vec<DiffTensor>) -> Result<Self> {
        if params.len() < 2 || !params.len().is_multiple_of(2) {
            return Err(Error::invalid("decoder checkpoint needs weight/bias pairs"));
        }
        let mut widths = Vec::new();
        for pair in params.chunks(2) {
            let s = pair[0].shape();
            if s.len() != 2 || pair[1].shape() != [s[1]] {
                return Err(Error::invalid("decoder checkpoint has a malformed layer"));
            }
            if let Some(&prev) = widths.last() {
                if prev != s[0] {
                    return Err(Error::invalid("decoder checkpoint layers do not chain"));
                }
            } else {
                widths.push(s[0]);
            }
            widths.push(s[1]);
        }
        if widths.last() != Some(&3) {
            return Err(Error::invalid("decoder must output 3 channels"));
        }
        let spec = DenseNetSpec::uniform(widths, DECODER_ACTIVATION, 0);
        Ok(Self {
            net: DenseNet::from_params(spec, params)?,
        })
    }
}

impl Module for DecoderNet {
    fn params(&self) -> Vec<&DiffTensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.net.params_mut()
    }
}

/// Box average of each tap cell's receptive field: `[cells, h * w]`.
pub fn tap_pool_map(enc: &PseudoVgg, tap: usize, height: usize, width: usize) -> Result<SparseRows> {
    let (rf, stride) = enc.tap_geometry()[tap];
    let (th, tw) = enc
        .net()
        .output_sizes(height, width)
        .and_then(|s| s.get(tap).copied())
        .ok_or_else(|| Error::invalid(format!("{height}x{width} view is too small for the encoder")))?;
    let mut map = SparseRows::new(height * width);
    let w = 1.0 / (rf * rf) as f32;
    for i in 0..th {
        for j in 0..tw {
            let (y0, x0) = (i * stride, j * stride);
            map.push_row((0..rf).flat_map(|dy| (0..rf).map(move |dx| ((y0 + dy) * width + x0 + dx, w))));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub steps: usize,
    pub learning_rate: f32,
    /// Weight of the rendered-embedding vs encoder-feature term.
    pub feature_weight: f32,
    pub decoder_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            learning_rate: 5e-3,
            feature_weight: 1.0,
            decoder_hidden: vec![64, 64],
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub scene: GaussianScene,
    pub decoder: DecoderNet,
    /// Color reconstruction MSE per step (mean over Gaussians and channels).
    pub recon_history: Vec<f32>,
    /// Rendered-embedding vs feature MSE per step.
    pub projection_history: Vec<f32>,
}

impl Distilled {
    /// Mean over Gaussians of the squared color error (summed over RGB).
    pub fn reconstruction_error(&self) -> Result<f64> {
        reconstruction_error(&self.scene, &self.decoder)
    }
}

pub fn reconstruction_error(scene: &GaussianScene, decoder: &DecoderNet) -> Result<f64> {
    let colors = decoder.decode(&scene.embedding_matrix())?;
    let total: f64 = colors
        .iter()
        .zip(&scene.gaussians)
        .map(|(c, g)| (0..3).map(|k| ((c[k] - g.color[k]) as f64).powi(2)).sum::<f64>())
        .sum();
    Ok(total / scene.len() as f64)
}

struct EmbeddingTable {
    table: DiffTensor,
    decoder: DecoderNet,
}

impl Module for EmbeddingTable {
    fn params(&self) -> Vec<&DiffTensor> {
        let mut p = vec![&self.table];
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        let mut p = vec![&mut self.table];
        p.extend(self.decoder.params_mut());
        p
    }
}

/// Jointly trains per-Gaussian embeddings and the decoder so that decoded
/// embeddings reproduce the colors and rendered embedding maps, pooled onto
/// the encoder's embedding-tap grid, match that tap's projected features of
/// the rendered RGB view. Embeddings start as a seeded linear lift of color.
/// Per-camera pooled compositing map `[cells, N]` and target features `[D, cells]`.
type DistillView = (Rc<SparseRows>, Vec<f32>);

struct DistillSetup {
    model: EmbeddingTable,
    colors: Vec<f32>,
    views: Vec<DistillView>,
}

fn distill_setup(
    scene: &GaussianScene,
    cams: &[Camera],
    encoder: &PseudoVgg,
    cfg: &DistillConfig,
) -> Result<DistillSetup> {
    if cams.is_empty() {
        return Err(Error::invalid("distill_embeddings needs at least one camera"));
    }
    let d = scene.embed_dim;
    if encoder.embed_dim() != d {
        return Err(Error::invalid(format!(
            "encoder embeds to {} channels but the scene has D = {d}",
            encoder.embed_dim()
        )));
    }
    let n = scene.len();
    let colors = scene.color_matrix();
    let lift = glorot(cfg.seed, 77, 3, d, 3 * d);
    let mut init = vec![0.0f32; n * d];
    crate::diff::kernels::matmul_acc(&colors, &lift, &mut init, n, 3, d);
    let model = EmbeddingTable {
        table: DiffTensor::param(&[n, d], init)?,
        decoder: DecoderNet::new(d, &cfg.decoder_hidden, cfg.seed)?,
    };
    let mut views = Vec::with_capacity(cams.len());
    if cfg.feature_weight > 0.0 {
        for cam in cams {
            let weights = compositing_weights(scene, cam)?;
            let pool = tap_pool_map(encoder, encoder.embed_tap(), cam.height, cam.width)?;
            let target = encoder.embed_map(&render(scene, cam)?.rgb_image())?;
            views.push((Rc::new(weights.then(&pool)), target.data));
        }
    }
    Ok(DistillSetup { model, colors, views })
}

/// Returns `(total, recon, projection)`; projection is `None` without views.
fn distill_objective<T: crate::diff::Real>(
    tape: &mut Tape<T>,
    model: &EmbeddingTable,
    vars: &[Var],
    colors: &[f32],
    views: &[DistillView],
    feature_weight: f32,
) -> Result<(Var, Var, Option<Var>), DiffError> {
    let (n, d) = (model.table.shape()[0], model.table.shape()[1]);
    let e = vars[0];
    let target = tape.constant(&[n, 3], colors.to_vec())?;
    let decoded = model.decoder.forward(tape, &vars[1..], e)?;
    let recon = tape.mse(decoded, target)?;
    if views.is_empty() {
        return Ok((recon, recon, None));
    }
    let mut proj_total: Option<Var> = None;
    for (map, feat) in views {
        let rendered = tape.sparse_apply(e, map.clone())?;
        let t = tape.constant(&[d, map.rows()], feat.clone())?;
        let l = tape.mse(rendered, t)?;
        proj_total = Some(match proj_total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let proj = tape.scale(proj_total.expect("non-empty"), 1.0 / views.len() as f32)?;
    let weighted = tape.scale(proj, feature_weight)?;
    Ok((tape.add(recon, weighted)?, recon, Some(proj)))
}

struct DistillLoss<'a> {
    colors: &'a [f32],
    views: &'a [DistillView],
    feature_weight: f32,
}

impl Objective<EmbeddingTable> for DistillLoss<'_> {
    fn eval<T: crate::diff::Real>(
        &self,
        m: &EmbeddingTable,
        tape: &mut Tape<T>,
        params: &[Var],
    ) -> Result<Var, DiffError> {
        Ok(distill_objective(tape, m, params, self.colors, self.views, self.feature_weight)?.0)
    }
}

/// Finite-difference check of the distillation loss at its initial point,
/// w.r.t. embeddings and decoder weights. Returns the max relative error.
pub fn distill_gradient_check(
    scene: &GaussianScene,
    cams: &[Camera],
    encoder: &PseudoVgg,
    cfg: &DistillConfig,
    h: f64,
    per_tensor: usize,
) -> Result<f64> {
    let setup = distill_setup(scene, cams, encoder, cfg)?;
    let obj = DistillLoss {
        colors: &setup.colors,
        views: &setup.views,
        feature_weight: cfg.feature_weight,
    };
    Ok(finite_diff_check_sampled(&setup.model, &obj, h, per_tensor)?)
}

/// Jointly trains per-Gaussian embeddings and the decoder so that decoded
/// embeddings reproduce the colors and rendered embedding maps, pooled onto
/// the encoder's embedding-tap grid, match that tap's projected features of
/// the rendered RGB view. Embeddings start as a seeded linear lift of color.
pub fn distill_embeddings(
    scene: &GaussianScene,
    cams: &[Camera],
    encoder: &PseudoVgg,
    cfg: &DistillConfig,
) -> Result<Distilled> {
    let DistillSetup {
        mut model,
        colors,
        views,
    } = distill_setup(scene, cams, encoder, cfg)?;
    let d = scene.embed_dim;
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut recon_history = Vec::with_capacity(cfg.steps);
    let mut projection_history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        model.zero_grad();
        let mut tape: Tape = Tape::new();
        let vars = model.bind(&mut tape);
        let (loss, recon, proj) = distill_objective(&mut tape, &model, &vars, &colors, &views, cfg.feature_weight)?;
        let recon_value = tape.scalar(recon);
        let proj_value = proj.map_or(0.0, |p| tape.scalar(p));
        if !tape.scalar(loss).is_finite() {
            return Err(Error::numeric(format!(
                "distillation loss became non-finite at step {step}"
            )));
        }
        tape.backward(loss)?;
        tape.accumulate_into(&vars, model.params_mut())?;
        adam.step(model.params_mut())?;
        recon_history.push(recon_value);
        projection_history.push(proj_value);
    }

    let mut out = scene.clone();
    for (g, row) in out.gaussians.iter_mut().zip(model.table.data().chunks(d)) {
        g.embedding.copy_from_slice(row);
    }
    Ok(Distilled {
        scene: out,
        decoder: model.decoder,
        recon_history,
        projection_history,
    })
}

/// `c_n = decode(adain(c^e, style))` per Gaussian; geometry, opacity and
/// embeddings are copied untouched.
pub fn stylize_scene(scene: &GaussianScene, style: &StyleStats, decoder: &DecoderNet) -> Result<GaussianScene> {
    if !scene.is_distilled() {
        return Err(Error::invalid("stylize_scene: the scene has no trained embeddings"));
    }
    if decoder.embed_dim() != scene.embed_dim {
        return Err(Error::invalid(format!(
            "decoder takes {}-dim embeddings but the scene has D = {}",
            decoder.embed_dim(),
            scene.embed_dim
        )));
    }
    let moved = adain(&scene.embedding_matrix(), scene.embed_dim, style)?;
    let colors = decoder.decode(&moved.data)?;
    scene.with_colors(&colors)
}

#[cfg(test)]
mod tests;
