use super::Real;

/// Row-compressed sparse weight matrix, `rows x cols`.
///
/// Used to express fixed linear maps such as alpha-compositing weights,
/// where each output pixel is a weighted sum of a few per-primitive
/// attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    weights: Vec<f32>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            offsets: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Appends one row given as `(column, weight)` pairs.
    pub fn push_row<I: IntoIterator<Item = (usize, f32)>>(&mut self, entries: I) {
        for (c, w) in entries {
            debug_assert!(c < self.cols);
            self.indices.push(c as u32);
            self.weights.push(w);
        }
        self.offsets.push(self.indices.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        self.indices[a..b]
            .iter()
            .zip(&self.weights[a..b])
            .map(|(&c, &w)| (c as usize, w))
    }

    /// Applies the map to `x: [cols, channels]`, producing channel-major
    /// `[channels, rows]`.
    pub fn apply_channel_major<T: Real>(&self, x: &[T], channels: usize) -> Vec<T> {
        let rows = self.rows();
        let mut out = vec![T::zero(); channels * rows];
        for r in 0..rows {
            for (c, w) in self.row(r) {
                let src = &x[c * channels..(c + 1) * channels];
                let w = T::from_f32(w);
                for (ch, &v) in src.iter().enumerate() {
                    out[ch * rows + r] += w * v;
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::apply_channel_major`].
    pub fn apply_transpose_acc<T: Real>(&self, g: &[T], channels: usize, out: &mut [T]) {
        let rows = self.rows();
        for r in 0..rows {
            for (c, w) in self.row(r) {
                let w = T::from_f32(w);
                let dst = &mut out[c * channels..(c + 1) * channels];
                for (ch, d) in dst.iter_mut().enumerate() {
                    *d += w * g[ch * rows + r];
                }
            }
        }
    }

    /// Composes `other * self`, i.e. first this map, then `other` on its rows.
    pub fn then(&self, other: &SparseRows) -> SparseRows {
        assert_eq!(other.cols, self.rows(), "sparse composition shape mismatch");
        let mut out = SparseRows::new(self.cols);
        let mut acc: Vec<f32> = vec![0.0; self.cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..other.rows() {
            for (mid, w) in other.row(r) {
                for (c, w2) in self.row(mid) {
                    if acc[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c] += w * w2;
                }
            }
            touched.sort_unstable();
            out.push_row(touched.iter().map(|&c| (c, acc[c])));
            for &c in &touched {
                acc[c] = 0.0;
            }
            touched.clear();
        }
        out
    }
}
