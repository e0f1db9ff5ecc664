//! Forward pass, loss and the two backpropagation modes.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{arch_hash, validate, Architecture, DerivedDims};
use crate::error::{DimensionError, Error, Relation, Result};
use crate::ops::{
    activate, avg_pool, correlate_add, dilate_and_pad, rotate180, sigmoid_prime, sigmoid_tensor,
    upsample, Activation,
};
use crate::tensor::{Matrix, Tensor3};

/// Which derivative of the output activation drives the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Uses `diag(σ'(u))` whatever the head is.
    #[default]
    Paper,
    /// Uses the true Jacobian of the head (`diag(v) - vvᵀ` for softmax).
    Exact,
}

/// All trainable parameters as one flat vector in canonical order: every
/// kernel of layer 1 (each as its `vec`), then layer 2, ..., then
/// `vec(W_{l+1})` column-major. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    data: Vec<f64>,
}

pub type Weights = ParamSet;
pub type Gradient = ParamSet;

impl ParamSet {
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn distance(&self, other: &ParamSet) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Intermediate quantities of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor3,
    /// Pre-activations `X_(i)`, one per conv layer.
    pub pre: Vec<Tensor3>,
    /// Activations `Y_(i) = σ(X_(i))`.
    pub act: Vec<Tensor3>,
    /// Pooled maps `Z_(i)`.
    pub pooled: Vec<Tensor3>,
    /// `u = W_{l+1} vec(Z_(l))`.
    pub logits: Vec<f64>,
    /// `v`, the head's output.
    pub output: Vec<f64>,
    pub head: Activation,
}

impl ForwardTrace {
    /// `vec(Z_(l))`.
    pub fn features(&self) -> &[f64] {
        self.pooled.last().expect("at least one layer").as_slice()
    }

    /// Input of conv layer `i` (1-based): `Z_(i-1)`, with `Z_(0)` the sample.
    pub fn layer_input(&self, i: usize) -> &Tensor3 {
        if i == 1 {
            &self.input
        } else {
            &self.pooled[i - 2]
        }
    }
}

/// `δ_(i)` for `i = 1..=l`, stored at index `i-1`.
pub type Deltas = Vec<Tensor3>;

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    offset: usize,
    kernel: usize,
    stride: usize,
    in_channels: usize,
    out_channels: usize,
}

impl LayerLayout {
    fn kernel_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }
}

/// A validated architecture together with its parameter layout.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    dims: DerivedDims,
    layout: Vec<LayerLayout>,
    fc_offset: usize,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        let dims = validate(&arch)?;
        let mut offset = 0;
        let mut layout = Vec::with_capacity(arch.layers.len());
        for (spec, d) in arch.layers.iter().zip(&dims.layers) {
            let l = LayerLayout {
                offset,
                kernel: spec.kernel,
                stride: spec.stride,
                in_channels: d.in_channels,
                out_channels: spec.out_channels,
            };
            offset += l.kernel_len() * l.out_channels;
            layout.push(l);
        }
        Ok(Self {
            arch,
            dims,
            layout,
            fc_offset: offset,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn dims(&self) -> &DerivedDims {
        &self.dims
    }

    /// Number of conv layers `l`.
    pub fn depth(&self) -> usize {
        self.arch.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.dims.total_params
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output.dim
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        let i = self.arch.input;
        (i.rows, i.cols, i.channels)
    }

    /// Flat index range of `w_(j)`, `j = 1..=l+1`.
    pub fn layer_range(&self, j: usize) -> Range<usize> {
        assert!(
            (1..=self.depth() + 1).contains(&j),
            "layer index out of range"
        );
        if j == self.depth() + 1 {
            self.fc_offset..self.param_count()
        } else {
            let l = &self.layout[j - 1];
            l.offset..l.offset + l.kernel_len() * l.out_channels
        }
    }

    /// Flat index range of kernel `k` (0-based) of layer `i` (1-based).
    pub fn kernel_range(&self, i: usize, k: usize) -> Range<usize> {
        let l = &self.layout[i - 1];
        let start = l.offset + k * l.kernel_len();
        start..start + l.kernel_len()
    }

    /// `W_{l+1}` as a `d_{l+1} x r̃_l c̃_l d_l` matrix.
    pub fn fc_matrix(&self, w: &ParamSet) -> Matrix {
        Matrix::from_col_major(
            self.output_dim(),
            self.dims.feature_len(),
            w.data[self.fc_offset..].to_vec(),
        )
    }

    /// Kernel `k` of layer `i` as a `kernel x kernel x d_{i-1}` tensor.
    pub fn kernel_tensor(&self, w: &ParamSet, i: usize, k: usize) -> Tensor3 {
        let l = &self.layout[i - 1];
        Tensor3::from_vec(
            l.kernel,
            l.kernel,
            l.in_channels,
            w.data[self.kernel_range(i, k)].to_vec(),
        )
    }

    pub fn zeros(&self) -> ParamSet {
        ParamSet::from_vec(vec![0.0; self.param_count()])
    }

    /// Magnitude bound of every block: each kernel of layer `i` gets `b_i`, the head gets `b_{l+1}`.
    fn blocks(&self) -> Vec<(Range<usize>, f64)> {
        let mut out = Vec::new();
        for (i, spec) in self.arch.layers.iter().enumerate() {
            for k in 0..spec.out_channels {
                out.push((self.kernel_range(i + 1, k), spec.b));
            }
        }
        out.push((self.layer_range(self.depth() + 1), self.arch.output.b));
        out
    }

    /// Random weights in the admissible set: every kernel and the head matrix
    /// have Frobenius norm `norm_fraction · b`, and every stacked-kernel matrix
    /// and the head have rank at most their rank bound.
    pub fn init_weights(&self, seed: u64, norm_fraction: f64) -> Result<ParamSet> {
        if !(norm_fraction > 0.0 && norm_fraction <= 1.0) {
            return Err(Error::invalid(
                "norm_fraction",
                format!("must lie in (0, 1], got {norm_fraction}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = self.zeros();
        for (i, spec) in self.arch.layers.iter().enumerate() {
            let l = self.layout[i];
            let m = low_rank(&mut rng, l.kernel_len(), l.out_channels, spec.rank);
            w.data[self.layer_range(i + 1)].copy_from_slice(m.as_slice());
        }
        let out = &self.arch.output;
        let m = low_rank(&mut rng, out.dim, self.dims.feature_len(), out.rank);
        w.data[self.fc_offset..].copy_from_slice(m.as_slice());
        for (range, b) in self.blocks() {
            let block = &mut w.data[range];
            let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            let k = norm_fraction * b / norm;
            block.iter_mut().for_each(|x| *x *= k);
        }
        Ok(w)
    }

    /// Rescales every block whose norm exceeds its bound back onto the ball.
    /// Rank bounds are not enforced here.
    pub fn project(&self, w: &mut ParamSet) {
        for (range, b) in self.blocks() {
            let block = &mut w.data[range];
            let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > b {
                let k = b / norm;
                block.iter_mut().for_each(|x| *x *= k);
            }
        }
    }

    /// Whether every block satisfies its norm bound up to relative slack `tol`.
    pub fn within_bounds(&self, w: &ParamSet, tol: f64) -> bool {
        self.blocks().into_iter().all(|(range, b)| {
            let norm = w.data[range].iter().map(|x| x * x).sum::<f64>().sqrt();
            norm <= b * (1.0 + tol)
        })
    }

    fn check_input(&self, input: &Tensor3) -> Result<()> {
        let expected = self.input_shape();
        if input.shape() != expected {
            return Err(Error::Dimension(DimensionError {
                layer: 0,
                axis: None,
                relation: Relation::ShapeMismatch {
                    what: "input",
                    expected,
                    found: input.shape(),
                },
            }));
        }
        if let Some(&bad) = input.as_slice().iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InputOutOfRange(bad));
        }
        Ok(())
    }

    fn check_params(&self, w: &ParamSet) {
        assert_eq!(w.len(), self.param_count(), "parameter vector length");
    }

    pub fn forward(&self, w: &ParamSet, input: &Tensor3, head: Activation) -> Result<ForwardTrace> {
        self.check_params(w);
        self.check_input(input)?;
        let p = self.arch.pool_size;
        let mut pre = Vec::with_capacity(self.depth());
        let mut act = Vec::with_capacity(self.depth());
        let mut pooled: Vec<Tensor3> = Vec::with_capacity(self.depth());
        for (i, (l, d)) in self.layout.iter().zip(&self.dims.layers).enumerate() {
            let z = if i == 0 { input } else { &pooled[i - 1] };
            let mut x = Tensor3::zeros(d.conv_rows, d.conv_cols, l.out_channels);
            for k in 0..l.out_channels {
                let kernel = &w.data[self.kernel_range(i + 1, k)];
                let out = x.channel_mut(k);
                for j in 0..l.in_channels {
                    let ks = l.kernel * l.kernel;
                    correlate_add(
                        out,
                        z.channel(j),
                        d.in_rows,
                        d.in_cols,
                        &kernel[j * ks..(j + 1) * ks],
                        l.kernel,
                        l.kernel,
                        l.stride,
                    );
                }
            }
            let y = sigmoid_tensor(&x);
            let zi = avg_pool(&y, p)?;
            pre.push(x);
            act.push(y);
            pooled.push(zi);
        }
        let fc = &w.data[self.fc_offset..];
        let out_dim = self.output_dim();
        let mut logits = vec![0.0; out_dim];
        for (c, &zc) in pooled
            .last()
            .expect("at least one layer")
            .as_slice()
            .iter()
            .enumerate()
        {
            for (u, &a) in logits.iter_mut().zip(&fc[c * out_dim..(c + 1) * out_dim]) {
                *u += a * zc;
            }
        }
        let output = activate(&logits, head);
        Ok(ForwardTrace {
            input: input.clone(),
            pre,
            act,
            pooled,
            logits,
            output,
            head,
        })
    }

    /// Gradient and deltas under [`GradientMode::Paper`].
    pub fn backprop_paper(
        &self,
        w: &ParamSet,
        trace: &ForwardTrace,
        y: &[f64],
    ) -> (Gradient, Deltas) {
        let du: Vec<f64> = trace
            .logits
            .iter()
            .zip(&trace.output)
            .zip(y)
            .map(|((&u, &v), &t)| sigmoid_prime(u) * (v - t))
            .collect();
        self.backward(w, trace, &du, rotate180)
    }

    /// [`Network::backprop_paper`] with the kernel rotation swapped out; used by
    /// mutation tests of the gradient checker.
    #[doc(hidden)]
    pub fn backprop_paper_with_rotation(
        &self,
        w: &ParamSet,
        trace: &ForwardTrace,
        y: &[f64],
        rotate: fn(&Matrix) -> Matrix,
    ) -> (Gradient, Deltas) {
        let du: Vec<f64> = trace
            .logits
            .iter()
            .zip(&trace.output)
            .zip(y)
            .map(|((&u, &v), &t)| sigmoid_prime(u) * (v - t))
            .collect();
        self.backward(w, trace, &du, rotate)
    }

    /// Gradient of `½‖v-y‖²` under [`GradientMode::Exact`].
    pub fn backprop_exact(&self, w: &ParamSet, trace: &ForwardTrace, y: &[f64]) -> Gradient {
        let resid: Vec<f64> = trace.output.iter().zip(y).map(|(v, t)| v - t).collect();
        let du: Vec<f64> = match trace.head {
            Activation::Sigmoid => trace
                .logits
                .iter()
                .zip(&resid)
                .map(|(&u, &r)| sigmoid_prime(u) * r)
                .collect(),
            Activation::Softmax => {
                let v = &trace.output;
                let vr: f64 = v.iter().zip(&resid).map(|(a, b)| a * b).sum();
                v.iter()
                    .zip(&resid)
                    .map(|(&vi, &ri)| vi * (ri - vr))
                    .collect()
            }
        };
        self.backward(w, trace, &du, rotate180).0
    }

    pub fn backprop(
        &self,
        w: &ParamSet,
        trace: &ForwardTrace,
        y: &[f64],
        mode: GradientMode,
    ) -> Gradient {
        match mode {
            GradientMode::Paper => self.backprop_paper(w, trace, y).0,
            GradientMode::Exact => self.backprop_exact(w, trace, y),
        }
    }

    /// Loss `½‖v-y‖²` and its gradient for one sample. `y` need not be one-hot.
    pub fn loss_and_gradient(
        &self,
        w: &ParamSet,
        input: &Tensor3,
        y: &[f64],
        head: Activation,
        mode: GradientMode,
    ) -> Result<(f64, Gradient)> {
        let trace = self.forward(w, input, head)?;
        let loss = half_sq_dist(&trace.output, y);
        Ok((loss, self.backprop(w, &trace, y, mode)))
    }

    /// Loss only, without the backward pass.
    pub fn sample_loss(
        &self,
        w: &ParamSet,
        input: &Tensor3,
        y: &[f64],
        head: Activation,
    ) -> Result<f64> {
        let trace = self.forward(w, input, head)?;
        Ok(half_sq_dist(&trace.output, y))
    }

    /// Backward pass from `du = ∂f/∂u`.
    fn backward(
        &self,
        w: &ParamSet,
        trace: &ForwardTrace,
        du: &[f64],
        rotate: fn(&Matrix) -> Matrix,
    ) -> (Gradient, Deltas) {
        let out_dim = self.output_dim();
        let p = self.arch.pool_size;
        let mut grad = self.zeros();
        let fc = &w.data[self.fc_offset..];
        let feats = trace.features();

        let mut dz = vec![0.0; feats.len()];
        {
            let g = &mut grad.data[self.fc_offset..];
            for (c, &zc) in feats.iter().enumerate() {
                let col = &fc[c * out_dim..(c + 1) * out_dim];
                let gcol = &mut g[c * out_dim..(c + 1) * out_dim];
                let mut acc = 0.0;
                for r in 0..out_dim {
                    gcol[r] = du[r] * zc;
                    acc += col[r] * du[r];
                }
                dz[c] = acc;
            }
        }

        let l = self.depth();
        let last = &self.dims.layers[l - 1];
        let dz = Tensor3::from_vec(last.pooled_rows, last.pooled_cols, last.out_channels, dz);
        let mut deltas: Vec<Tensor3> = vec![Tensor3::zeros(0, 0, 0); l];
        deltas[l - 1] = gated(&upsample(&dz, p), &trace.pre[l - 1]);

        for i in (1..=l).rev() {
            let lay = self.layout[i - 1];
            let d = self.dims.layers[i - 1];
            let (k, s) = (lay.kernel, lay.stride);
            let ks = k * k;
            let z_prev = trace.layer_input(i);
            let delta = &deltas[i - 1];

            for kk in 0..lay.out_channels {
                let dil = dilate_and_pad(&delta.slice(kk), s, 1);
                let range = self.kernel_range(i, kk);
                let g = &mut grad.data[range];
                for j in 0..lay.in_channels {
                    correlate_add(
                        &mut g[j * ks..(j + 1) * ks],
                        z_prev.channel(j),
                        d.in_rows,
                        d.in_cols,
                        dil.as_slice(),
                        dil.rows(),
                        dil.cols(),
                        1,
                    );
                }
            }

            if i > 1 {
                let padded: Vec<Matrix> = (0..lay.out_channels)
                    .map(|kk| dilate_and_pad(&delta.slice(kk), s, k))
                    .collect();
                let mut acc = Tensor3::zeros(d.in_rows, d.in_cols, lay.in_channels);
                for (kk, pd) in padded.iter().enumerate() {
                    let kernel = &w.data[self.kernel_range(i, kk)];
                    for j in 0..lay.in_channels {
                        let rot = rotate(&Matrix::from_col_major(
                            k,
                            k,
                            kernel[j * ks..(j + 1) * ks].to_vec(),
                        ));
                        correlate_add(
                            acc.channel_mut(j),
                            pd.as_slice(),
                            pd.rows(),
                            pd.cols(),
                            rot.as_slice(),
                            k,
                            k,
                            1,
                        );
                    }
                }
                deltas[i - 2] = gated(&upsample(&acc, p), &trace.pre[i - 2]);
            }
        }
        (grad, deltas)
    }

    /// Text serialization: a header naming the architecture hash and count,
    /// then one value per line in canonical order.
    pub fn write_weights(&self, w: &ParamSet) -> String {
        self.check_params(w);
        let mut s = format!(
            "cnnlab-weights v1\narch {}\nparams {}\n",
            arch_hash(&self.arch),
            w.len()
        );
        for x in &w.data {
            s.push_str(&format!("{x:?}\n"));
        }
        s
    }

    pub fn read_weights(&self, text: &str) -> Result<ParamSet> {
        let mismatch = |m: String| Error::WeightsMismatch(m);
        let mut lines = text.lines();
        if lines.next() != Some("cnnlab-weights v1") {
            return Err(mismatch("missing `cnnlab-weights v1` header".into()));
        }
        let hash = lines
            .next()
            .and_then(|l| l.strip_prefix("arch "))
            .ok_or_else(|| mismatch("missing `arch` line".into()))?;
        let expected = arch_hash(&self.arch);
        if hash != expected {
            return Err(mismatch(format!(
                "architecture hash {hash} differs from {expected}"
            )));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| mismatch("missing `params` line".into()))?;
        if count != self.param_count() {
            return Err(mismatch(format!(
                "{count} parameters, architecture has {}",
                self.param_count()
            )));
        }
        let data = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| mismatch(format!("bad value `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if data.len() != count {
            return Err(mismatch(format!(
                "expected {count} values, found {}",
                data.len()
            )));
        }
        Ok(ParamSet::from_vec(data))
    }
}

/// `up ⊙ σ'(pre)`.
fn gated(up: &Tensor3, pre: &Tensor3) -> Tensor3 {
    let mut out = up.clone();
    for (o, &x) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        *o *= sigmoid_prime(x);
    }
    out
}

/// `A B` with `A: rows x rank`, `B: rank x cols`, entries uniform on `[-1, 1]`.
/// Uniform `[-1, 1]` entries when `rank` is not binding, otherwise a product
/// of uniform `rows x rank` and `rank x cols` factors.
fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> Matrix {
    if rank >= rows.min(cols) {
        return Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..=1.0));
    }
    let a = Matrix::from_fn(rows, rank, |_, _| rng.gen_range(-1.0..=1.0));
    let b = Matrix::from_fn(rank, cols, |_, _| rng.gen_range(-1.0..=1.0));
    a.matmul(&b)
}

/// `½‖v-y‖²` with no check on `y`.
pub fn half_sq_dist(v: &[f64], y: &[f64]) -> f64 {
    assert_eq!(v.len(), y.len());
    0.5 * v.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// `½‖v-y‖²` for a one-hot label `y`.
pub fn loss(v: &[f64], y: &[f64]) -> Result<f64> {
    let ones = y.iter().filter(|&&t| t == 1.0).count();
    if y.len() != v.len() || ones != 1 || y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::NotOneHot);
    }
    Ok(half_sq_dist(v, y))
}

pub fn one_hot(dim: usize, class: usize) -> Vec<f64> {
    let mut y = vec![0.0; dim];
    y[class] = 1.0;
    y
}
