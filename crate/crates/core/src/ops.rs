//! Tensor operators the model and its backward pass are built from.
//!
//! `⊛` is valid cross-correlation (no kernel flip); its adjoint in the backward
//! pass uses the 180°-rotated kernel. Pooling is non-overlapping mean pooling,
//! whose adjoint is [`upsample`].

use crate::error::{Axis, DimensionError, Relation};
use crate::tensor::{Matrix, Tensor3};

/// Accumulates the valid cross-correlation of one column-major slice `z`
/// (`zr x zc`) with one kernel slice `k` (`kr x kc`) into `out`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn correlate_add(
    out: &mut [f64],
    z: &[f64],
    zr: usize,
    zc: usize,
    k: &[f64],
    kr: usize,
    kc: usize,
    stride: usize,
) {
    let or = (zr - kr) / stride + 1;
    let oc = (zc - kc) / stride + 1;
    debug_assert_eq!(out.len(), or * oc);
    for q in 0..kc {
        for b in 0..oc {
            let zcol = &z[(b * stride + q) * zr..(b * stride + q + 1) * zr];
            let ocol = &mut out[b * or..(b + 1) * or];
            for p in 0..kr {
                let w = k[q * kr + p];
                if w == 0.0 {
                    continue;
                }
                for (a, o) in ocol.iter_mut().enumerate() {
                    *o += zcol[a * stride + p] * w;
                }
            }
        }
    }
}

fn check_conv(
    rows: usize,
    cols: usize,
    kernel_rows: usize,
    kernel_cols: usize,
    stride: usize,
) -> Result<(), DimensionError> {
    let err = |axis, relation| DimensionError {
        layer: 0,
        axis,
        relation,
    };
    if stride == 0 {
        return Err(err(None, Relation::Zero { what: "stride" }));
    }
    for (axis, extent, kernel) in [
        (Axis::Rows, rows, kernel_rows),
        (Axis::Cols, cols, kernel_cols),
    ] {
        if kernel == 0 {
            return Err(err(
                Some(axis),
                Relation::Zero {
                    what: "kernel size",
                },
            ));
        }
        if kernel > extent {
            return Err(err(
                Some(axis),
                Relation::KernelExceedsInput { extent, kernel },
            ));
        }
        let remainder = (extent - kernel) % stride;
        if remainder != 0 {
            return Err(err(
                Some(axis),
                Relation::StrideMisfit {
                    extent,
                    kernel,
                    stride,
                    remainder,
                },
            ));
        }
    }
    Ok(())
}

/// Strided valid cross-correlation of `z` with the kernel `k`, summed over channels.
///
/// Output is `((z.rows-k)/stride+1) x ((z.cols-k)/stride+1)`.
pub fn conv_valid(z: &Tensor3, k: &Tensor3, stride: usize) -> Result<Matrix, DimensionError> {
    if k.channels() != z.channels() {
        return Err(DimensionError {
            layer: 0,
            axis: None,
            relation: Relation::ShapeMismatch {
                what: "kernel channels",
                expected: (k.rows(), k.cols(), z.channels()),
                found: k.shape(),
            },
        });
    }
    check_conv(z.rows(), z.cols(), k.rows(), k.cols(), stride)?;
    let or = (z.rows() - k.rows()) / stride + 1;
    let oc = (z.cols() - k.cols()) / stride + 1;
    let mut out = vec![0.0; or * oc];
    for ch in 0..z.channels() {
        correlate_add(
            &mut out,
            z.channel(ch),
            z.rows(),
            z.cols(),
            k.channel(ch),
            k.rows(),
            k.cols(),
            stride,
        );
    }
    Ok(Matrix::from_col_major(or, oc, out))
}

/// `out(a, b) = m(rows-1-a, cols-1-b)`.
pub fn rotate180(m: &Matrix) -> Matrix {
    let mut data = m.as_slice().to_vec();
    data.reverse();
    Matrix::from_col_major(m.rows(), m.cols(), data)
}

/// Replicates every entry into a `p x p` block holding `entry / p²`.
pub fn upsample(m: &Tensor3, p: usize) -> Tensor3 {
    let scale = 1.0 / (p * p) as f64;
    let (r, c, ch) = m.shape();
    let mut out = Tensor3::zeros(p * r, p * c, ch);
    for k in 0..ch {
        for col in 0..p * c {
            for row in 0..p * r {
                out[(row, col, k)] = m[(row / p, col / p, k)] * scale;
            }
        }
    }
    out
}

/// Non-overlapping `p x p` mean pooling.
pub fn avg_pool(y: &Tensor3, p: usize) -> Result<Tensor3, DimensionError> {
    if p == 0 {
        return Err(DimensionError {
            layer: 0,
            axis: None,
            relation: Relation::Zero { what: "pool size" },
        });
    }
    for (axis, extent) in [(Axis::Rows, y.rows()), (Axis::Cols, y.cols())] {
        if extent % p != 0 {
            return Err(DimensionError {
                layer: 0,
                axis: Some(axis),
                relation: Relation::PoolDivides { extent, pool: p },
            });
        }
    }
    let (r, c, ch) = (y.rows() / p, y.cols() / p, y.channels());
    let scale = 1.0 / (p * p) as f64;
    let mut out = Tensor3::zeros(r, c, ch);
    for k in 0..ch {
        for col in 0..y.cols() {
            for row in 0..y.rows() {
                out[(row / p, col / p, k)] += y[(row, col, k)];
            }
        }
    }
    out.scale(scale);
    Ok(out)
}

/// Inserts `s-1` zero rows/columns between neighbouring entries of `delta`,
/// then pads a zero border of width `k-1`.
///
/// Output is `(s(r-1)+2k-1) x (s(c-1)+2k-1)` with `delta(a, b)` placed at
/// `(k-1+a·s, k-1+b·s)`. With `k = 1` this is pure dilation, the form used for
/// kernel gradients.
pub fn dilate_and_pad(delta: &Matrix, s: usize, k: usize) -> Matrix {
    assert!(s >= 1 && k >= 1, "stride and kernel size must be positive");
    let (r, c) = (delta.rows(), delta.cols());
    let rows = s * (r - 1) + 2 * k - 1;
    let cols = s * (c - 1) + 2 * k - 1;
    let mut out = Matrix::zeros(rows, cols);
    for b in 0..c {
        for a in 0..r {
            out[(k - 1 + a * s, k - 1 + b * s)] = delta[(a, b)];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Softmax,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(x)(1-σ(x))`, evaluated as `σ(x)σ(-x)` so it stays accurate in the tails.
#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// `σ(x)(1-σ(x))(1-2σ(x))`.
#[inline]
pub fn sigmoid_second(x: f64) -> f64 {
    let (a, b) = (sigmoid(x), sigmoid(-x));
    a * b * (b - a)
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Applies `kind` to a flat buffer; softmax treats the buffer as one vector.
pub fn activate(x: &[f64], kind: Activation) -> Vec<f64> {
    match kind {
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Softmax => softmax(x),
    }
}

/// Elementwise sigmoid of a tensor.
pub fn sigmoid_tensor(x: &Tensor3) -> Tensor3 {
    x.map(sigmoid)
}

/// The diagonal matrix `G(z)` with `G_ii = σ(z_i)(1-σ(z_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagonal(pub Vec<f64>);

impl Diagonal {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        self.0.iter().zip(x).map(|(g, v)| g * v).collect()
    }

    /// `G M` for `M` with `dim` rows.
    pub fn mul_matrix(&self, m: &Matrix) -> Matrix {
        assert_eq!(m.rows(), self.dim());
        Matrix::from_fn(m.rows(), m.cols(), |r, c| self.0[r] * m[(r, c)])
    }

    /// `N G` for `N` with `dim` columns.
    pub fn right_mul(&self, n: &Matrix) -> Matrix {
        assert_eq!(n.cols(), self.dim());
        Matrix::from_fn(n.rows(), n.cols(), |r, c| n[(r, c)] * self.0[c])
    }

    pub fn dense(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(d, d, |r, c| if r == c { self.0[r] } else { 0.0 })
    }
}

pub fn sigmoid_gate(z: &[f64]) -> Diagonal {
    Diagonal(z.iter().map(|&v| sigmoid_prime(v)).collect())
}

/// The sparse `d² x d` matrix `Q(z)`: entry `((i-1)d+i, i)` (1-based) holds
/// `σ(z_i)(1-σ(z_i))(1-2σ(z_i))`, everything else is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    values: Vec<f64>,
}

impl Curvature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `(row, col, value)` of the `d` structurally nonzero entries, 0-based.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let d = self.dim();
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i * d + i, i, v))
    }

    /// `Q M` for `M` with `d` rows; result is `d² x M.cols`.
    pub fn mul_matrix(&self, m: &Matrix) -> Matrix {
        let d = self.dim();
        assert_eq!(m.rows(), d);
        let mut out = Matrix::zeros(d * d, m.cols());
        for (row, col, v) in self.nonzeros() {
            for c in 0..m.cols() {
                out[(row, c)] = v * m[(col, c)];
            }
        }
        out
    }

    /// `N Q` for `N` with `d²` columns; result is `N.rows x d`.
    pub fn right_mul(&self, n: &Matrix) -> Matrix {
        let d = self.dim();
        assert_eq!(n.cols(), d * d);
        let mut out = Matrix::zeros(n.rows(), d);
        for (row, col, v) in self.nonzeros() {
            for r in 0..n.rows() {
                out[(r, col)] = n[(r, row)] * v;
            }
        }
        out
    }

    pub fn dense(&self) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros(d * d, d);
        for (row, col, v) in self.nonzeros() {
            out[(row, col)] = v;
        }
        out
    }
}

pub fn sigmoid_curvature(z: &[f64]) -> Curvature {
    Curvature {
        values: z.iter().map(|&v| sigmoid_second(v)).collect(),
    }
}

#[cfg(test)]
mod proptests;
