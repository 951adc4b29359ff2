//! Plain slice kernels shared by the tape and by tape-free inference paths.

use super::Real;

/// `out[m,n] += a[m,k] * b[k,n]`
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub fn matmul_grad_a<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub fn matmul_grad_b<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Geometry of a 2D convolution over a `[C, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if self.kernel == 0 || self.stride == 0 || ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds the input into a `[C*k*k, Ho*Wo]` column matrix.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let k = g.kernel;
    let cols = ho * wo;
    let mut out = vec![T::zero(); g.col_rows() * cols];
    for c in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = (c * g.height + iy as usize) * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = x[src_row + ix as usize];
                    }
                }
            }
        }
    }
    out
}

/// Scatters a column-matrix gradient back onto the input layout.
pub fn col2im_acc<T: Real>(cols_grad: &[T], g: &ConvGeom, ho: usize, wo: usize, out: &mut [T]) {
    let k = g.kernel;
    let cols = ho * wo;
    for c in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = (c * g.height + iy as usize) * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        out[dst_row + ix as usize] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution; `weight` is `[Cout, C*k*k]`, returns `[Cout, Ho*Wo]`.
pub fn conv2d<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Option<(Vec<T>, usize, usize)> {
    let (ho, wo) = g.out_hw()?;
    let cout = bias.len();
    let cols = im2col(x, g, ho, wo);
    let mut out = vec![T::zero(); cout * ho * wo];
    for (o, &b) in bias.iter().enumerate() {
        out[o * ho * wo..(o + 1) * ho * wo].fill(b);
    }
    matmul_acc(weight, &cols, &mut out, cout, g.col_rows(), ho * wo);
    Some((out, ho, wo))
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Per-channel population mean and std of a `[C, n]` block, computed in f64.
pub fn channel_moments<T: Real>(x: &[T], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / channels;
    let mut means = Vec::with_capacity(channels);
    let mut stds = Vec::with_capacity(channels);
    for c in 0..channels {
        let row = &x[c * n..(c + 1) * n];
        let mean = row.iter().map(|&v| v.as_f64()).sum::<f64>() / n as f64;
        let var = row.iter().map(|&v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        means.push(mean);
        stds.push(var.sqrt());
    }
    (means, stds)
}
