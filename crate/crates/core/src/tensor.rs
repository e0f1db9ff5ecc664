//! Dense double-precision containers.
//!
//! Both containers store entries column-major within each channel slice and
//! slices in channel order, so the backing buffer of a [`Tensor3`] is exactly
//! its `vec(·)` (columns stacked, then slices stacked).

use std::ops::{Index, IndexMut};

/// A dense `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        m
    }

    /// Builds a matrix from its column-major vectorization.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.data[c * rows + r] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major vectorization.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self * x` for a vector `x` of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (c, &xc) in x.iter().enumerate() {
            let col = &self.data[c * self.rows..(c + 1) * self.rows];
            for (o, &a) in out.iter_mut().zip(col) {
                *o += a * xc;
            }
        }
        out
    }

    /// `selfᵀ * x` for a vector `x` of length `rows`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        (0..self.cols)
            .map(|c| {
                self.data[c * self.rows..(c + 1) * self.rows]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for k in 0..self.cols {
                let b = rhs[(k, j)];
                if b == 0.0 {
                    continue;
                }
                for i in 0..self.rows {
                    out.data[j * self.rows + i] += self.data[k * self.rows + i] * b;
                }
            }
        }
        out
    }

    /// Single-channel tensor view of this matrix (copies).
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[c * self.rows + r]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[c * self.rows + r]
    }
}

/// A dense `rows x cols x channels` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self::filled(rows, cols, channels, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            channels,
            data: vec![value; rows * cols * channels],
        }
    }

    /// Builds a tensor from its vectorization (column-major slices, channel order).
    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols * channels, "buffer length");
        Self {
            rows,
            cols,
            channels,
            data,
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(rows, cols, channels);
        for ch in 0..channels {
            for c in 0..cols {
                for r in 0..rows {
                    t[(r, c, ch)] = f(r, c, ch);
                }
            }
        }
        t
    }

    /// Stacks equally shaped matrices as channels.
    pub fn from_slices(slices: &[Matrix]) -> Self {
        let first = slices.first().expect("at least one slice");
        let (rows, cols) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(rows * cols * slices.len());
        for s in slices {
            assert_eq!((s.rows(), s.cols()), (rows, cols), "slice shape");
            data.extend_from_slice(s.as_slice());
        }
        Self {
            rows,
            cols,
            channels: slices.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The vectorization `vec(·)`: column-major slices stacked in channel order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Column-major entries of channel `ch`.
    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.rows * self.cols;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    /// Copy of channel `ch` as a matrix.
    pub fn slice(&self, ch: usize) -> Matrix {
        Matrix::from_col_major(self.rows, self.cols, self.channel(ch).to_vec())
    }

    pub fn set_slice(&mut self, ch: usize, m: &Matrix) {
        assert_eq!((m.rows(), m.cols()), (self.rows, self.cols));
        self.channel_mut(ch).copy_from_slice(m.as_slice());
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// Elementwise product with an equally shaped tensor.
    pub fn hadamard(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.shape(), other.shape());
        Tensor3 {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, (r, c, ch): (usize, usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols && ch < self.channels);
        &self.data[(ch * self.cols + c) * self.rows + r]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (r, c, ch): (usize, usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols && ch < self.channels);
        &mut self.data[(ch * self.cols + c) * self.rows + r]
    }
}
