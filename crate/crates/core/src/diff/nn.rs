use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::{DiffError, DiffTensor, Real, Tape, Var};

/// Anything that owns trainable tensors in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&DiffTensor>;
    fn params_mut(&mut self) -> Vec<&mut DiffTensor>;

    /// Records every parameter on `tape`, in `params()` order.
    fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.leaf(p)).collect()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(DiffTensor::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Freezes or unfreezes every parameter.
    fn set_trainable(&mut self, flag: bool) {
        self.params_mut().into_iter().for_each(|p| p.set_requires_grad(flag));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    pub fn apply_tape<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Result<Var, DiffError> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::None => Ok(x),
        }
    }

    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::None => "none",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "none" => Ok(Activation::None),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Architecture of a fully connected stack. `activations[i]` follows hidden
/// layer `i`; the output layer is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl DenseNetSpec {
    /// Same activation on every hidden layer.
    pub fn uniform(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Self {
        let hidden = layer_widths.len().saturating_sub(2);
        Self {
            layer_widths,
            activations: vec![activation; hidden],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        if self.layer_widths.len() < 2 {
            return Err(DiffError::Config(
                "dense net needs at least input and output widths".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(DiffError::Config("dense net widths must be positive".into()));
        }
        if self.activations.len() != self.layer_widths.len() - 2 {
            return Err(DiffError::Config(format!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                self.layer_widths.len() - 2
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

/// Glorot-uniform draw from a ChaCha8 stream keyed by `(seed, stream)`.
pub fn glorot(seed: u64, stream: u64, fan_in: usize, fan_out: usize, count: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    spec: DenseNetSpec,
    // [W0, b0, W1, b1, ...], W as [in, out]
    params: Vec<DiffTensor>,
}

impl DenseNet {
    pub fn new(spec: DenseNetSpec) -> Result<Self, DiffError> {
        spec.validate()?;
        let mut params = Vec::new();
        for (i, pair) in spec.layer_widths.windows(2).enumerate() {
            let (fi, fo) = (pair[0], pair[1]);
            params.push(DiffTensor::param(
                &[fi, fo],
                glorot(spec.seed, i as u64, fi, fo, fi * fo),
            )?);
            params.push(DiffTensor::param(&[fo], vec![0.0; fo])?);
        }
        Ok(Self { spec, params })
    }

    /// Rebuilds a net from stored parameters; shapes must match `spec`.
    pub fn from_params(spec: DenseNetSpec, params: Vec<DiffTensor>) -> Result<Self, DiffError> {
        let fresh = Self::new(spec.clone())?;
        if fresh.params.len() != params.len() || fresh.params.iter().zip(&params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(DiffError::Config(
                "parameter shapes do not match the dense net spec".into(),
            ));
        }
        let params = params
            .into_iter()
            .map(|p| {
                let shape = p.shape().to_vec();
                DiffTensor::param(&shape, p.into_data())
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &DenseNetSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Forward pass of `x: [B, in]` using parameters already bound to `tape`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Var, DiffError> {
        let layers = self.spec.layer_widths.len() - 1;
        let mut h = x;
        for l in 0..layers {
            h = tape.matmul(h, bound[2 * l])?;
            h = tape.add_row(h, bound[2 * l + 1])?;
            if l + 1 < layers {
                h = self.spec.activations[l].apply_tape(tape, h)?;
            }
        }
        Ok(h)
    }

    /// Tape-free inference on a row-major batch `[batch, in]`.
    pub fn predict(&self, x: &[f32], batch: usize) -> Vec<f32> {
        let layers = self.spec.layer_widths.len() - 1;
        let mut h = x.to_vec();
        for l in 0..layers {
            let (fi, fo) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
            let w = self.params[2 * l].data();
            let b = self.params[2 * l + 1].data();
            let mut out = vec![0.0f32; batch * fo];
            kernels::matmul_acc(&h, w, &mut out, batch, fi, fo);
            for row in out.chunks_mut(fo) {
                row.iter_mut().zip(b).for_each(|(v, &bias)| *v += bias);
            }
            if l + 1 < layers {
                let act = self.spec.activations[l];
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = out;
        }
        h
    }
}

impl Module for DenseNet {
    fn params(&self) -> Vec<&DiffTensor> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.params.iter_mut().collect()
    }
}

/// One convolution block: square kernel, stride, zero padding, activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

/// A plain stack of convolutions over a single `[C, H, W]` image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    layers: Vec<ConvLayerSpec>,
    // [W0, b0, W1, b1, ...], W as [Cout, Cin, k, k]
    params: Vec<DiffTensor>,
}

impl ConvNet {
    pub fn new(layers: Vec<ConvLayerSpec>, seed: u64) -> Result<Self, DiffError> {
        if layers.is_empty() {
            return Err(DiffError::Config("conv net needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(DiffError::Config(format!(
                    "conv layer chain breaks: {} -> {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        let mut params = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let kk = l.kernel * l.kernel;
            let (fi, fo) = (l.in_channels * kk, l.out_channels * kk);
            let w = glorot(seed, i as u64, fi, fo, l.out_channels * fi);
            params.push(DiffTensor::param(
                &[l.out_channels, l.in_channels, l.kernel, l.kernel],
                w,
            )?);
            params.push(DiffTensor::param(&[l.out_channels], vec![0.0; l.out_channels])?);
        }
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[ConvLayerSpec] {
        &self.layers
    }

    /// Returns the activation after every layer.
    pub fn forward_all<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Vec<Var>, DiffError> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.conv2d(h, bound[2 * i], bound[2 * i + 1], l.stride, l.padding)?;
            h = l.activation.apply_tape(tape, h)?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// Tape-free forward of one `[C, h, w]` image; returns every layer's
    /// activation with its spatial size. `None` if the image is too small.
    pub fn predict_all(&self, x: &[f32], mut h: usize, mut w: usize) -> Option<Vec<(Vec<f32>, usize, usize)>> {
        let mut outs: Vec<(Vec<f32>, usize, usize)> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let g = ConvGeom {
                in_channels: l.in_channels,
                height: h,
                width: w,
                kernel: l.kernel,
                stride: l.stride,
                padding: l.padding,
            };
            let input = outs.last().map_or(x, |o| o.0.as_slice());
            let (mut y, ho, wo) = kernels::conv2d(input, self.params[2 * i].data(), self.params[2 * i + 1].data(), &g)?;
            y.iter_mut().for_each(|v| *v = l.activation.apply(*v));
            (h, w) = (ho, wo);
            outs.push((y, ho, wo));
        }
        Some(outs)
    }

    /// Output spatial size after each layer for an `h x w` input.
    pub fn output_sizes(&self, mut h: usize, mut w: usize) -> Option<Vec<(usize, usize)>> {
        let mut sizes = Vec::new();
        for l in &self.layers {
            let g = ConvGeom {
                in_channels: l.in_channels,
                height: h,
                width: w,
                kernel: l.kernel,
                stride: l.stride,
                padding: l.padding,
            };
            (h, w) = g.out_hw()?;
            sizes.push((h, w));
        }
        Some(sizes)
    }
}

impl Module for ConvNet {
    fn params(&self) -> Vec<&DiffTensor> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.params.iter_mut().collect()
    }
}
