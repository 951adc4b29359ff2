use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::sparse::SparseRows;
use super::{DiffError, DiffTensor, Real};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Ln(usize),
    Clamp(usize, f32, f32),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
    },
    ChannelMoments(usize),
    AvgPool2(usize),
    Sparse {
        x: usize,
        map: Rc<SparseRows>,
        channels: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Ln(a)
            | Op::Clamp(a, _, _)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::ChannelMoments(a)
            | Op::AvgPool2(a) => vec![a],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Sparse { x, .. } => vec![x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
///
/// Nodes only reference earlier nodes, so the recorded graph is acyclic and
/// [`Tape::backward`] is one reverse sweep.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Tape<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op) -> Result<Var, DiffError> {
        if let Some(pos) = value.iter().position(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite {
                op: op_name,
                index: pos,
            });
        }
        let requires_grad = match op {
            Op::Leaf => false,
            _ => op.inputs().iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a copy of `t`; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &DiffTensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().iter().map(|&v| T::from_f32(v)).collect(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records constant data that takes no gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Result<Var, DiffError> {
        let t = DiffTensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Records data that takes a gradient (useful for input sensitivities).
    pub fn variable(&mut self, shape: &[usize], data: Vec<f32>) -> Result<Var, DiffError> {
        let t = DiffTensor::param(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Records native-precision data that takes no gradient.
    pub fn constant_native(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var, DiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "constant",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: data,
            op: Op::Leaf,
            requires_grad: false,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records native-precision data that takes a gradient.
    pub fn variable_native(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var, DiffError> {
        let v = self.constant_native(shape, data)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f32 {
        self.nodes[v.0].value[0].as_f32()
    }

    pub fn scalar_native(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn value_f32(&self, v: Var) -> Vec<f32> {
        self.nodes[v.0].value.iter().map(|x| x.as_f32()).collect()
    }

    /// Gradient accumulated into `v` by all `backward` calls so far.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a.0, b.0))
    }

    /// `x[.., n] + bias[n]`, broadcast over leading dimensions.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let n = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != n || n == 0 {
            return Err(shape_err("add_row", format!("{:?} + {:?}", sx, sb)));
        }
        let b = self.value(bias).to_vec();
        let out: Vec<T> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&b).map(|(&x, &b)| x + b).collect::<Vec<_>>())
            .collect();
        self.push("add_row", sx, out, Op::AddRow(x.0, bias.0))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let shape = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", shape, out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let shape = self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        self.push("sub", shape, out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", shape, out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var, DiffError> {
        let f = T::from_f32(s);
        let out = self.value(a).iter().map(|&x| x * f).collect();
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var, DiffError> {
        let f = T::from_f32(s);
        let out = self.value(a).iter().map(|&x| x + f).collect();
        self.push("add_scalar", self.shape(a).to_vec(), out, Op::AddScalar(a.0))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op) -> Result<Var, DiffError> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(name, self.shape(a).to_vec(), out, op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("relu", a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("tanh", a, T::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("sigmoid", a, kernels::sigmoid, Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("softplus", a, kernels::softplus, Op::Softplus(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("ln", a, T::ln, Op::Ln(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Result<Var, DiffError> {
        let (l, h) = (T::from_f32(lo), T::from_f32(hi));
        self.unary("clamp", a, |x| x.max(l).min(h), Op::Clamp(a.0, lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("square", a, |x| x * x, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = T::from_f64(self.value(a).iter().map(|&x| x.as_f64()).sum::<f64>());
        self.push("sum", vec![], vec![s], Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err("mean", "empty input".into()));
        }
        let s = T::from_f64(self.value(a).iter().map(|&x| x.as_f64()).sum::<f64>() / n as f64);
        self.push("mean", vec![], vec![s], Op::Mean(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(a), shape)));
        }
        let out = self.value(a).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(a.0))
    }

    /// Mean squared difference, a common composite.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// 2D convolution of `x: [C, H, W]` with `w: [Cout, C, k, k]` and `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var, DiffError> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let describe = || {
            format!(
                "input {:?}, kernel {:?}, bias {:?}, stride {}, padding {}",
                sx, sw, sb, stride, padding
            )
        };
        if sx.len() != 3 || sw.len() != 4 || sb.len() != 1 || sw[1] != sx[0] || sw[2] != sw[3] || sb[0] != sw[0] {
            return Err(shape_err("conv2d", describe()));
        }
        let geom = ConvGeom {
            in_channels: sx[0],
            height: sx[1],
            width: sx[2],
            kernel: sw[2],
            stride,
            padding,
        };
        let (out, ho, wo) = kernels::conv2d(self.value(x), self.value(w), self.value(b), &geom)
            .ok_or_else(|| shape_err("conv2d", describe()))?;
        self.push(
            "conv2d",
            vec![sw[0], ho, wo],
            out,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
            },
        )
    }

    /// Per-channel population mean and std of `x: [C, ...]`, as `[2, C]`
    /// (means in row 0, stds in row 1).
    pub fn channel_moments(&mut self, x: Var) -> Result<Var, DiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || sx[0] == 0 || sx[1..].iter().product::<usize>() == 0 {
            return Err(shape_err("channel_moments", format!("{:?}", sx)));
        }
        let c = sx[0];
        let (m, s) = kernels::channel_moments(self.value(x), c);
        let out = m.iter().chain(&s).map(|&v| T::from_f64(v)).collect();
        self.push("channel_moments", vec![2, c], out, Op::ChannelMoments(x.0))
    }

    /// 2x2 average pooling of `[C, H, W]` (odd trailing row/column dropped).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, DiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || sx[1] < 2 || sx[2] < 2 {
            return Err(shape_err("avg_pool2", format!("{:?}", sx)));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = vec![T::zero(); c * ho * wo];
        let quarter = T::from_f32(0.25);
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = ch * h * w;
                    let s = xv[base + 2 * y * w + 2 * xx]
                        + xv[base + 2 * y * w + 2 * xx + 1]
                        + xv[base + (2 * y + 1) * w + 2 * xx]
                        + xv[base + (2 * y + 1) * w + 2 * xx + 1];
                    out[(ch * ho + y) * wo + xx] = quarter * s;
                }
            }
        }
        self.push("avg_pool2", vec![c, ho, wo], out, Op::AvgPool2(x.0))
    }

    /// Applies a fixed sparse map to per-item attributes `x: [cols, C]`,
    /// returning channel-major `[C, rows]`.
    pub fn sparse_apply(&mut self, x: Var, map: Rc<SparseRows>) -> Result<Var, DiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || sx[0] != map.cols() {
            return Err(shape_err(
                "sparse_apply",
                format!("{:?} with map of {} columns", sx, map.cols()),
            ));
        }
        let channels = sx[1];
        let out = map.apply_channel_major(self.value(x), channels);
        let rows = map.rows();
        self.push(
            "sparse_apply",
            vec![channels, rows],
            out,
            Op::Sparse { x: x.0, map, channels },
        )
    }

    /// Reverse sweep from the scalar `loss`. Gradients add onto whatever
    /// previous sweeps left behind.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(DiffError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut fresh: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        fresh[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = fresh[id].take() else { continue };
            if !self.nodes[id].requires_grad && !matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            self.propagate(id, &g, &mut fresh);
            match &mut self.grads[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &x)| *a += x),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], fresh: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let mut send = |target: usize, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[target].requires_grad {
                return;
            }
            let buf = fresh[target].get_or_insert_with(|| vec![T::zero(); nodes[target].value.len()]);
            f(buf);
        };
        let val = |i: usize| nodes[i].value.as_slice();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = nodes[b].shape[1];
                send(a, &mut |buf| kernels::matmul_grad_a(g, val(b), buf, m, k, n));
                send(b, &mut |buf| kernels::matmul_grad_b(val(a), g, buf, m, k, n));
            }
            Op::AddRow(x, b) => {
                let n = nodes[b].value.len();
                send(x, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
                send(b, &mut |buf| {
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                    }
                });
            }
            Op::Add(a, b) => {
                send(a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
                send(b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
            }
            Op::Sub(a, b) => {
                send(a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
                send(b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d -= s));
            }
            Op::Mul(a, b) => {
                send(a, &mut |buf| {
                    for ((d, &s), &y) in buf.iter_mut().zip(g).zip(val(b)) {
                        *d += s * y;
                    }
                });
                send(b, &mut |buf| {
                    for ((d, &s), &x) in buf.iter_mut().zip(g).zip(val(a)) {
                        *d += s * x;
                    }
                });
            }
            Op::Scale(a, f) => {
                let f = T::from_f32(f);
                send(a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s * f))
            }
            Op::AddScalar(a) | Op::Reshape(a) => send(a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s)),
            Op::Relu(a) => send(a, &mut |buf| {
                for ((d, &s), &x) in buf.iter_mut().zip(g).zip(val(a)) {
                    if x > T::zero() {
                        *d += s;
                    }
                }
            }),
            Op::Tanh(a) => send(a, &mut |buf| {
                for ((d, &s), &y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *d += s * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => send(a, &mut |buf| {
                for ((d, &s), &y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *d += s * y * (T::one() - y);
                }
            }),
            Op::Softplus(a) => send(a, &mut |buf| {
                for ((d, &s), &x) in buf.iter_mut().zip(g).zip(val(a)) {
                    *d += s * kernels::sigmoid(x);
                }
            }),
            Op::Ln(a) => send(a, &mut |buf| {
                for ((d, &s), &x) in buf.iter_mut().zip(g).zip(val(a)) {
                    *d += s / x;
                }
            }),
            Op::Clamp(a, lo, hi) => send(a, &mut |buf| {
                let (lo, hi) = (T::from_f32(lo), T::from_f32(hi));
                for ((d, &s), &x) in buf.iter_mut().zip(g).zip(val(a)) {
                    if x >= lo && x <= hi {
                        *d += s;
                    }
                }
            }),
            Op::Square(a) => send(a, &mut |buf| {
                let two = T::from_f32(2.0);
                for ((d, &s), &x) in buf.iter_mut().zip(g).zip(val(a)) {
                    *d += two * s * x;
                }
            }),
            Op::Sum(a) => send(a, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = T::from_f64(nodes[a].value.len() as f64);
                send(a, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Conv2d { x, w, b, geom } => {
                let (ho, wo) = (node.shape[1], node.shape[2]);
                let cout = node.shape[0];
                let hw = ho * wo;
                let rows = geom.col_rows();
                send(b, &mut |buf| {
                    for (o, d) in buf.iter_mut().enumerate() {
                        *d += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
                    }
                });
                if nodes[w].requires_grad {
                    let cols = kernels::im2col(val(x), &geom, ho, wo);
                    send(w, &mut |buf| kernels::matmul_grad_a(g, &cols, buf, cout, rows, hw));
                }
                if nodes[x].requires_grad {
                    let mut cols_grad = vec![T::zero(); rows * hw];
                    kernels::matmul_grad_b(val(w), g, &mut cols_grad, cout, rows, hw);
                    send(x, &mut |buf| kernels::col2im_acc(&cols_grad, &geom, ho, wo, buf));
                }
            }
            Op::ChannelMoments(x) => {
                let c = node.shape[1];
                let xv = val(x);
                let n = xv.len() / c;
                let nt = T::from_f64(n as f64);
                send(x, &mut |buf| {
                    for ch in 0..c {
                        let mean = node.value[ch];
                        let std = node.value[c + ch];
                        let (gm, gs) = (g[ch], g[c + ch]);
                        let row = &xv[ch * n..(ch + 1) * n];
                        let drow = &mut buf[ch * n..(ch + 1) * n];
                        for (d, &v) in drow.iter_mut().zip(row) {
                            let mut acc = gm / nt;
                            if std > T::zero() {
                                acc += gs * (v - mean) / (nt * std);
                            }
                            *d += acc;
                        }
                    }
                });
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = (nodes[x].shape[0], nodes[x].shape[1], nodes[x].shape[2]);
                let (ho, wo) = (node.shape[1], node.shape[2]);
                send(x, &mut |buf| {
                    for ch in 0..c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let s = T::from_f32(0.25) * g[(ch * ho + y) * wo + xx];
                                let base = ch * h * w;
                                buf[base + 2 * y * w + 2 * xx] += s;
                                buf[base + 2 * y * w + 2 * xx + 1] += s;
                                buf[base + (2 * y + 1) * w + 2 * xx] += s;
                                buf[base + (2 * y + 1) * w + 2 * xx + 1] += s;
                            }
                        }
                    }
                });
            }
            Op::Sparse { x, ref map, channels } => {
                send(x, &mut |buf| map.apply_transpose_acc(g, channels, buf));
            }
        }
    }

    /// Adds the gradients held by `vars` into the matching parameters.
    pub fn accumulate_into(&self, vars: &[Var], params: Vec<&mut DiffTensor>) -> Result<(), DiffError> {
        if vars.len() != params.len() {
            return Err(shape_err(
                "accumulate_into",
                format!("{} vars for {} params", vars.len(), params.len()),
            ));
        }
        for (v, p) in vars.iter().zip(params) {
            if !p.requires_grad() {
                continue;
            }
            match self.grad(*v) {
                Some(g) => p.accumulate_grad(&g.iter().map(|x| x.as_f32()).collect::<Vec<_>>())?,
                None => p.accumulate_grad(&vec![0.0; p.len()])?,
            }
        }
        Ok(())
    }
}
