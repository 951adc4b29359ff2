//! Carrying CLIP-like features into the VGG-like style domain: a regression
//! mapping `F_c` followed by `r` rounds of flow matching, each integrated
//! with `H` Euler steps and restarted from the previous round's endpoints.

mod pipeline;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Activation, AdamState, DenseNet, DenseNetSpec, DiffTensor, Module, Tape};
use crate::features::{Domain, FeatureSet};
use crate::{Error, Result};

pub use pipeline::{
    align_feature, parse_rounds_csv, rounds_csv, run_subdivisive_flow, AlignmentPipeline, FlowRoundReport, FlowRun,
};

/// Width of the time embedding appended to the velocity input.
pub const TIME_FEATURES: usize = 8;

/// `[sin(pi k t), cos(pi k t)]` for `k = 1..4`. Half-period harmonics keep
/// `t = 0` and `t = 1` distinguishable.
pub fn time_embedding(t: f32) -> [f32; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let a = std::f32::consts::PI * (k + 1) as f32 * t;
        out[2 * k] = a.sin();
        out[2 * k + 1] = a.cos();
    }
    out
}

/// `X_t = (1 - t) start + t target`. Exact at both ends.
pub fn interpolate(start: &[f32], target: &[f32], t: f32) -> Vec<f32> {
    if t == 0.0 {
        return start.to_vec();
    }
    if t == 1.0 {
        return target.to_vec();
    }
    start.iter().zip(target).map(|(&a, &b)| (1.0 - t) * a + t * b).collect()
}

/// Per-column affine normalisation stored alongside a net.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits over the union of the given row-major blocks.
    pub fn fit(blocks: &[&[f32]], dim: usize) -> Self {
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let mut n = 0usize;
        for block in blocks {
            for row in block.chunks(dim) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let d = self.dim();
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn inverse(&self, x: &[f32]) -> Vec<f32> {
        let d = self.dim();
        x.iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }

    /// Scales without shifting, for differences such as velocities.
    pub fn scale_in(&self, x: &[f32]) -> Vec<f32> {
        let d = self.dim();
        x.iter().enumerate().map(|(i, &v)| v / self.std[i % d]).collect()
    }

    pub fn scale_out(&self, x: &[f32]) -> Vec<f32> {
        let d = self.dim();
        x.iter().enumerate().map(|(i, &v)| v * self.std[i % d]).collect()
    }

    fn to_tensors(&self) -> [DiffTensor; 2] {
        let d = self.dim();
        [
            DiffTensor::new(&[d], self.mean.clone()).expect("shape matches"),
            DiffTensor::new(&[d], self.std.clone()).expect("shape matches"),
        ]
    }

    fn from_tensors(mean: &DiffTensor, std: &DiffTensor) -> Result<Self> {
        if mean.shape() != std.shape() || mean.shape().len() != 1 {
            return Err(Error::invalid("normalisation tensors have mismatched shapes"));
        }
        if std.data().iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("normalisation scale must be positive"));
        }
        Ok(Self {
            mean: mean.data().to_vec(),
            std: std.data().to_vec(),
        })
    }
}

/// A dense body plus a bias-free linear skip path, `body(x) + x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipDense {
    body: DenseNet,
    skip: DiffTensor,
}

impl SkipDense {
    /// The body's output layer starts at zero, so the initial map is linear.
    pub fn new(spec: DenseNetSpec) -> Result<Self> {
        let mut body = DenseNet::new(spec)?;
        let last = body.params_mut().len() - 2;
        body.params_mut()[last].data_mut().fill(0.0);
        let (i, o) = (body.input_dim(), body.output_dim());
        let w = crate::diff::glorot(body.spec().seed, 0x5C1F, i, o, i * o);
        Ok(Self {
            skip: DiffTensor::param(&[i, o], w)?,
            body,
        })
    }

    pub fn from_params(spec: DenseNetSpec, mut params: Vec<DiffTensor>) -> Result<Self> {
        let skip = params
            .pop()
            .ok_or_else(|| Error::invalid("skip net checkpoint is empty"))?;
        let body = DenseNet::from_params(spec, params)?;
        if skip.shape() != [body.input_dim(), body.output_dim()] {
            return Err(Error::invalid("skip weight shape does not match the net"));
        }
        let skip = DiffTensor::param(&[body.input_dim(), body.output_dim()], skip.into_data())?;
        Ok(Self { body, skip })
    }

    /// Sets the skip weight to the ridge least-squares fit of `y` on `x`
    /// (both row-major, assumed centred).
    pub fn fit_skip(&mut self, x: &[f32], y: &[f32], rows: usize) -> Result<()> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let xm = nalgebra::DMatrix::from_row_iterator(rows, i, x.iter().map(|&v| v as f64));
        let ym = nalgebra::DMatrix::from_row_iterator(rows, o, y.iter().map(|&v| v as f64));
        let mut gram = xm.transpose() * &xm;
        for k in 0..i {
            gram[(k, k)] += 1e-6 * rows as f64;
        }
        let rhs = xm.transpose() * ym;
        let w = gram
            .cholesky()
            .ok_or_else(|| Error::numeric("least-squares system for the skip path is singular"))?
            .solve(&rhs);
        let data = self.skip.data_mut();
        for r in 0..i {
            for c in 0..o {
                data[r * o + c] = w[(r, c)] as f32;
            }
        }
        Ok(())
    }

    pub fn body(&self) -> &DenseNet {
        &self.body
    }

    pub fn input_dim(&self) -> usize {
        self.body.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.body.output_dim()
    }

    pub fn forward<T: crate::diff::Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &[crate::diff::Var],
        x: crate::diff::Var,
    ) -> Result<crate::diff::Var, crate::diff::DiffError> {
        let (body, skip) = bound.split_at(bound.len() - 1);
        let h = self.body.forward(tape, body, x)?;
        let s = tape.matmul(x, skip[0])?;
        tape.add(h, s)
    }

    pub fn predict(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let mut out = self.body.predict(x, rows);
        crate::diff::kernels::matmul_acc(x, self.skip.data(), &mut out, rows, self.input_dim(), self.output_dim());
        out
    }
}

impl Module for SkipDense {
    fn params(&self) -> Vec<&DiffTensor> {
        let mut p = self.body.params();
        p.push(&self.skip);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        let mut p = self.body.params_mut();
        p.push(&mut self.skip);
        p
    }
}

trait Regressor: Module {
    fn dims(&self) -> (usize, usize);
    fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &[crate::diff::Var],
        x: crate::diff::Var,
    ) -> Result<crate::diff::Var, crate::diff::DiffError>;
}

impl Regressor for DenseNet {
    fn dims(&self) -> (usize, usize) {
        (self.input_dim(), self.output_dim())
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &[crate::diff::Var],
        x: crate::diff::Var,
    ) -> Result<crate::diff::Var, crate::diff::DiffError> {
        self.forward(tape, bound, x)
    }
}

impl Regressor for SkipDense {
    fn dims(&self) -> (usize, usize) {
        (self.input_dim(), self.output_dim())
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &[crate::diff::Var],
        x: crate::diff::Var,
    ) -> Result<crate::diff::Var, crate::diff::DiffError> {
        self.forward(tape, bound, x)
    }
}

/// Shared Adam loop over a dense net with MSE against minibatches drawn by
/// `draw`. The learning rate decays linearly to a tenth of its start value.
/// Returns the per-step loss.
fn fit_dense<M: Regressor>(
    net: &mut M,
    steps: usize,
    lr: f32,
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>, usize),
) -> Result<Vec<f32>> {
    let (din, dout) = (net.dims().0, net.dims().1);
    let mut adam = AdamState::new(lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        adam.learning_rate = lr * (1.0 - 0.9 * step as f32 / steps as f32);
        let (x, y, rows) = draw(rng);
        net.zero_grad();
        let mut tape: Tape = Tape::new();
        let vars = net.bind(&mut tape);
        let xv = tape.constant(&[rows, din], x)?;
        let yv = tape.constant(&[rows, dout], y)?;
        let pred = net.forward_tape(&mut tape, &vars, xv)?;
        let loss = tape.mse(pred, yv)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "training loss became non-finite at step {step}"
            )));
        }
        tape.backward(loss)?;
        tape.accumulate_into(&vars, net.params_mut())?;
        adam.step(net.params_mut())?;
        losses.push(value);
    }
    Ok(losses)
}

fn check_paired(a: &FeatureSet, b: &FeatureSet, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "{what}: paired sets have {} and {} rows",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Tanh,
            steps: 2000,
            batch: 256,
            learning_rate: 1e-3,
            seed: 5,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("mapping batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("mapping learning rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("mapping hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn spec(&self, input: usize, output: usize) -> DenseNetSpec {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(output);
        DenseNetSpec::uniform(widths, self.activation, self.seed)
    }
}

/// `F_c`: regression from the CLIP-like domain into the style domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingNet {
    net: SkipDense,
    input_norm: Standardizer,
    output_norm: Standardizer,
    trained: bool,
}

impl MappingNet {
    pub fn new(clip_dim: usize, style_dim: usize, cfg: &MappingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            net: SkipDense::new(cfg.spec(clip_dim, style_dim))?,
            input_norm: Standardizer::identity(clip_dim),
            output_norm: Standardizer::identity(style_dim),
            trained: false,
        })
    }

    pub fn net(&self) -> &SkipDense {
        &self.net
    }

    pub fn clip_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn style_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Maps a row-major batch.
    pub fn map_rows(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let xn = self.input_norm.forward(x);
        self.output_norm.inverse(&self.net.predict(&xn, rows))
    }

    pub fn map_vector(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.clip_dim() {
            return Err(Error::invalid(format!(
                "mapping expects {}-dim input, got {}",
                self.clip_dim(),
                x.len()
            )));
        }
        Ok(self.map_rows(x, 1))
    }

    pub fn apply(&self, set: &FeatureSet) -> Result<FeatureSet> {
        if set.dim != self.clip_dim() {
            return Err(Error::invalid(format!(
                "mapping expects {}-dim features, got {}",
                self.clip_dim(),
                set.dim
            )));
        }
        FeatureSet::new(
            Domain::ClipMapped,
            self.style_dim(),
            self.map_rows(&set.data, set.len()),
            set.provenance,
        )
    }

    /// Net parameters followed by the input and output normalisations.
    pub fn checkpoint_tensors(&self) -> Vec<DiffTensor> {
        let mut out: Vec<DiffTensor> = self.net.params().into_iter().cloned().collect();
        out.extend(self.input_norm.to_tensors());
        out.extend(self.output_norm.to_tensors());
        out
    }

    pub fn from_checkpoint(spec: DenseNetSpec, mut tensors: Vec<DiffTensor>) -> Result<Self> {
        if tensors.len() < 4 {
            return Err(Error::invalid("mapping checkpoint is missing normalisation tensors"));
        }
        let norms = tensors.split_off(tensors.len() - 4);
        let net = SkipDense::from_params(spec, tensors)?;
        let input_norm = Standardizer::from_tensors(&norms[0], &norms[1])?;
        let output_norm = Standardizer::from_tensors(&norms[2], &norms[3])?;
        if input_norm.dim() != net.input_dim() || output_norm.dim() != net.output_dim() {
            return Err(Error::invalid("mapping normalisation widths do not match the net"));
        }
        Ok(Self {
            net,
            input_norm,
            output_norm,
            trained: true,
        })
    }
}

/// Fits `F_c` by minimising the mean squared error to the paired VGG-like rows:
/// a closed-form least-squares skip path, then Adam on the whole net.
/// Returns the net and its loss history in normalised units; entry 0 is the
/// full-set loss at initialisation, then one entry per Adam step.
pub fn train_mapping(clip: &FeatureSet, vgg: &FeatureSet, cfg: &MappingConfig) -> Result<(MappingNet, Vec<f32>)> {
    check_paired(clip, vgg, "train_mapping")?;
    let mut mapping = MappingNet::new(clip.dim, vgg.dim, cfg)?;
    mapping.trained = true;
    if cfg.steps == 0 {
        return Ok((mapping, Vec::new()));
    }
    mapping.input_norm = Standardizer::fit(&[&clip.data], clip.dim);
    mapping.output_norm = Standardizer::fit(&[&vgg.data], vgg.dim);
    let xs = mapping.input_norm.forward(&clip.data);
    let ys = mapping.output_norm.forward(&vgg.data);
    let (dc, dv, m) = (clip.dim, vgg.dim, clip.len());
    let init_pred = mapping.net.predict(&xs, m);
    let init_loss = (init_pred
        .iter()
        .zip(&ys)
        .map(|(&p, &y)| ((p - y) as f64).powi(2))
        .sum::<f64>()
        / init_pred.len() as f64) as f32;
    mapping.net.fit_skip(&xs, &ys, m)?;
    let batch = cfg.batch.min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let losses = fit_dense(&mut mapping.net, cfg.steps, cfg.learning_rate, &mut rng, |rng| {
        let mut x = Vec::with_capacity(batch * dc);
        let mut y = Vec::with_capacity(batch * dv);
        for _ in 0..batch {
            let i = rng.random_range(0..m);
            x.extend_from_slice(&xs[i * dc..(i + 1) * dc]);
            y.extend_from_slice(&ys[i * dv..(i + 1) * dv]);
        }
        (x, y, batch)
    })?;
    Ok((mapping, std::iter::once(init_loss).chain(losses).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Euler steps per round, `dt = 1 / H`.
    pub euler_steps: usize,
    pub rounds: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            euler_steps: 8,
            rounds: 3,
            train_steps: 3000,
            batch: 256,
            learning_rate: 1e-3,
            seed: 11,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.euler_steps == 0 {
            return Err(Error::invalid("euler steps H must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("flow rounds r must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("flow batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("flow learning rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("flow hidden widths must be positive"));
        }
        Ok(())
    }

    /// Seed used for round `k` (0-based).
    pub fn round_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn velocity_spec(&self, dim: usize, seed: u64) -> DenseNetSpec {
        let mut widths = vec![dim + TIME_FEATURES];
        widths.extend(&self.hidden);
        widths.push(dim);
        DenseNetSpec::uniform(widths, self.activation, seed)
    }
}

/// Anything that can be integrated: a batch velocity `v(x, t)`.
pub trait Velocity {
    fn dim(&self) -> usize;
    /// Velocities for `rows` row-major points at time `t`.
    fn velocity(&self, x: &[f32], rows: usize, t: f32) -> Vec<f32>;
}

/// Adapts a per-point closure `f(x, t)` to [`Velocity`].
pub struct FnVelocity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f32], f32) -> Vec<f32>> Velocity for FnVelocity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f32], _rows: usize, t: f32) -> Vec<f32> {
        x.chunks(self.dim).flat_map(|row| (self.f)(row, t)).collect()
    }
}

/// Learned `v(x, t)`, evaluated in the normalised coordinates it was trained in.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    net: DenseNet,
    norm: Standardizer,
}

impl VelocityField {
    pub fn new(dim: usize, cfg: &FlowConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut net = DenseNet::new(cfg.velocity_spec(dim, seed))?;
        // Start from the zero field, so a round with nothing left to fix
        // stays close to the identity map.
        let last = net.params_mut().len() - 2;
        net.params_mut()[last].data_mut().fill(0.0);
        Ok(Self {
            net,
            norm: Standardizer::identity(dim),
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    fn net_input(&self, xn: &[f32], rows: usize, t: f32) -> Vec<f32> {
        let d = self.dim();
        let te = time_embedding(t);
        let mut out = Vec::with_capacity(rows * (d + TIME_FEATURES));
        for row in xn.chunks(d) {
            out.extend_from_slice(row);
            out.extend_from_slice(&te);
        }
        out
    }

    pub fn checkpoint_tensors(&self) -> Vec<DiffTensor> {
        let mut out: Vec<DiffTensor> = self.net.params().into_iter().cloned().collect();
        out.extend(self.norm.to_tensors());
        out
    }

    pub fn from_checkpoint(spec: DenseNetSpec, mut tensors: Vec<DiffTensor>) -> Result<Self> {
        if tensors.len() < 2 {
            return Err(Error::invalid("velocity checkpoint is missing normalisation tensors"));
        }
        let norms = tensors.split_off(tensors.len() - 2);
        let net = DenseNet::from_params(spec, tensors)?;
        let norm = Standardizer::from_tensors(&norms[0], &norms[1])?;
        if norm.dim() + TIME_FEATURES != net.input_dim() || norm.dim() != net.output_dim() {
            return Err(Error::invalid("velocity normalisation width does not match the net"));
        }
        Ok(Self { net, norm })
    }
}

impl Velocity for VelocityField {
    fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn velocity(&self, x: &[f32], rows: usize, t: f32) -> Vec<f32> {
        let xn = self.norm.forward(x);
        let out = self.net.predict(&self.net_input(&xn, rows, t), rows);
        self.norm.scale_out(&out)
    }
}

/// Regresses `v(X_t, t)` onto `target - start` with `t ~ U[0, 1]` and
/// `X_t = (1 - t) start + t target`, rows paired by index. Uses `cfg.seed`.
pub fn train_velocity(start: &FeatureSet, target: &FeatureSet, cfg: &FlowConfig) -> Result<(VelocityField, Vec<f32>)> {
    train_velocity_seeded(start, target, cfg, cfg.seed)
}

pub(crate) fn train_velocity_seeded(
    start: &FeatureSet,
    target: &FeatureSet,
    cfg: &FlowConfig,
    seed: u64,
) -> Result<(VelocityField, Vec<f32>)> {
    check_paired(start, target, "train_velocity")?;
    if start.dim != target.dim {
        return Err(Error::invalid(format!(
            "train_velocity: start is {}-dim but target is {}-dim",
            start.dim, target.dim
        )));
    }
    let d = start.dim;
    let m = start.len();
    let mut field = VelocityField::new(d, cfg, seed)?;
    field.norm = Standardizer::fit(&[&start.data, &target.data], d);
    let s = field.norm.forward(&start.data);
    let g = field.norm.forward(&target.data);
    let batch = cfg.batch.min(m);
    let din = d + TIME_FEATURES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F10E);
    let losses = fit_dense(&mut field.net, cfg.train_steps, cfg.learning_rate, &mut rng, |rng| {
        let mut x = Vec::with_capacity(batch * din);
        let mut y = Vec::with_capacity(batch * d);
        for _ in 0..batch {
            let i = rng.random_range(0..m);
            let t: f32 = rng.random();
            let (a, b) = (&s[i * d..(i + 1) * d], &g[i * d..(i + 1) * d]);
            x.extend(interpolate(a, b, t));
            x.extend_from_slice(&time_embedding(t));
            y.extend(a.iter().zip(b).map(|(&a, &b)| b - a));
        }
        (x, y, batch)
    })?;
    Ok((field, losses))
}

fn euler_step(v: &impl Velocity, x: &mut [f32], rows: usize, i: usize, h: usize) -> Result<()> {
    let dt = 1.0 / h as f32;
    let vel = v.velocity(x, rows, i as f32 / h as f32);
    for (xi, vi) in x.iter_mut().zip(vel) {
        *xi += vi * dt;
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "euler step {}: non-finite value in row {}",
            i + 1,
            j / v.dim()
        )));
    }
    Ok(())
}

/// `X_{i+1} = X_i + v(X_i, i/H) / H`; returns all `H + 1` points.
pub fn euler_integrate(v: &impl Velocity, x0: &[f32], h: usize) -> Result<Vec<Vec<f32>>> {
    if h == 0 {
        return Err(Error::invalid("euler steps H must be at least 1"));
    }
    if x0.len() != v.dim() {
        return Err(Error::invalid(format!(
            "field is {}-dim, start point is {}-dim",
            v.dim(),
            x0.len()
        )));
    }
    let mut traj = Vec::with_capacity(h + 1);
    let mut x = x0.to_vec();
    traj.push(x.clone());
    for i in 0..h {
        euler_step(v, &mut x, 1, i, h)?;
        traj.push(x.clone());
    }
    Ok(traj)
}

/// Endpoints only, for a row-major batch.
pub fn integrate_rows(v: &impl Velocity, x0: &[f32], h: usize) -> Result<Vec<f32>> {
    if h == 0 {
        return Err(Error::invalid("euler steps H must be at least 1"));
    }
    let d = v.dim();
    if !x0.len().is_multiple_of(d) {
        return Err(Error::invalid(format!(
            "{} values are not a batch of {d}-vectors",
            x0.len()
        )));
    }
    let rows = x0.len() / d;
    let mut x = x0.to_vec();
    for i in 0..h {
        euler_step(v, &mut x, rows, i, h)?;
    }
    Ok(x)
}

pub(crate) fn integrate_set(v: &impl Velocity, set: &FeatureSet, h: usize) -> Result<FeatureSet> {
    let end = integrate_rows(v, &set.data, h)?;
    FeatureSet::new(set.domain, set.dim, end, set.provenance)
}

#[cfg(test)]
mod tests;
