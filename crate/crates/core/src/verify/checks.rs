use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::data::DataModel;
use super::fd::{fd_gradient, fd_jacobian, FD_STEP};
use super::report::VerifyReport;
use super::trial_rng;
use crate::bounds::{
    delta_bound, delta_jacobian_bound, eval_beta, eval_gamma, fc_gradient_bound,
    pre_activation_jacobian_bound, pre_activation_slice_jacobian_bound, PaperConstants,
};
use crate::error::Result;
use crate::model::{half_sq_dist, one_hot, ForwardTrace, Gradient, Network, ParamSet};
use crate::ops::Activation;
use crate::tensor::{Matrix, Tensor3};

/// Analytic gradient under test: `(net, w, trace, y) -> ∇f`.
pub type Analytic = dyn Fn(&Network, &ParamSet, &ForwardTrace, &[f64]) -> Gradient + Sync;

/// Floor on the finite-difference magnitude in the relative error.
const REL_FLOOR: f64 = 1e-8;

/// Coordinates with `|fd|` at least this large are resolved well above the
/// central-difference roundoff floor `~ε_mach·|f|/h`.
const RESOLVED_FLOOR: f64 = 1e-4;

fn random_input(net: &Network, rng: &mut ChaCha8Rng) -> Tensor3 {
    let (r, c, ch) = net.input_shape();
    Tensor3::from_fn(r, c, ch, |_, _, _| rng.gen_range(0.0..=1.0))
}

/// Draws `(w, D, y)` for one trial; `norm_fraction = None` draws it uniformly from `(0, 1]`.
fn draw(
    net: &Network,
    rng: &mut ChaCha8Rng,
    norm_fraction: Option<f64>,
) -> Result<(ParamSet, Tensor3, Vec<f64>)> {
    let nf = norm_fraction.unwrap_or_else(|| 1.0 - rng.gen::<f64>());
    let w = net.init_weights(rng.gen(), nf)?;
    let x = random_input(net, rng);
    let dim = net.output_dim();
    let y = one_hot(dim, rng.gen_range(0..dim));
    Ok((w, x, y))
}

/// Compares the backward pass with central differences: paper mode under a
/// sigmoid head, exact mode under a softmax head.
pub fn gradient_check(
    net: &Network,
    trials: usize,
    seed: u64,
    tol: f64,
    head: Activation,
) -> Result<VerifyReport> {
    let analytic = move |net: &Network, w: &ParamSet, t: &ForwardTrace, y: &[f64]| match head {
        Activation::Sigmoid => net.backprop_paper(w, t, y).0,
        Activation::Softmax => net.backprop_exact(w, t, y),
    };
    gradient_check_with(net, trials, seed, tol, head, &analytic)
}

/// [`gradient_check`] against an arbitrary analytic gradient.
pub fn gradient_check_with(
    net: &Network,
    trials: usize,
    seed: u64,
    tol: f64,
    head: Activation,
    analytic: &Analytic,
) -> Result<VerifyReport> {
    let errors = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let (w, x, y) = draw(net, &mut rng, None)?;
            let trace = net.forward(&w, &x, head)?;
            let g = analytic(net, &w, &trace, &y);
            let fd = fd_gradient(net, &w, &x, &y, head, FD_STEP)?;
            let (mut rel, mut abs, mut resolved) = (0.0f64, 0.0f64, 0.0f64);
            for (a, f) in g.as_slice().iter().zip(fd.as_slice()) {
                let e = (a - f).abs();
                let r = e / f.abs().max(REL_FLOOR);
                rel = if r > rel || r.is_nan() { r } else { rel };
                abs = abs.max(e);
                if f.abs() >= RESOLVED_FLOOR {
                    resolved = resolved.max(r);
                }
            }
            Ok((rel, abs, resolved))
        })
        .collect::<Result<Vec<(f64, f64, f64)>>>()?;

    let mut report = VerifyReport::new("gradcheck", seed, trials);
    for &(e, abs, resolved) in &errors {
        report.extreme("max_rel_err", e);
        report.extreme("max_abs_err", abs);
        report.extreme("resolved_rel_err", resolved);
        report.worst_ratio = report.worst_ratio.max(e / tol);
        if e.is_nan() || e > tol {
            report.violations += 1;
        }
    }
    report.extreme("tol", tol);
    report.pass = report.violations == 0;
    Ok(report)
}

/// Scans the per-sample norm bounds on deltas, the gradient, the head gradient,
/// the loss and the residual. Softmax head, paper-mode quantities, weights at
/// full norm.
pub fn check_norm_bounds(
    net: &Network,
    trials: usize,
    seed: u64,
    consts: &PaperConstants,
) -> Result<VerifyReport> {
    let arch = net.arch();
    let l = net.depth();
    let beta = eval_beta(arch);
    let fc_bound = fc_gradient_bound(arch, consts);
    let delta_bounds: Vec<f64> = (1..=l).map(|i| delta_bound(arch, i, consts)).collect();

    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let (w, x, y) = draw(net, &mut rng, Some(1.0))?;
            let trace = net.forward(&w, &x, Activation::Softmax)?;
            let (g, deltas) = net.backprop_paper(&w, &trace, &y);
            let mut ratios = Vec::with_capacity(l + 4);
            for (i, d) in deltas.iter().enumerate() {
                ratios.push((
                    format!("delta{}_ratio", i + 1),
                    d.frobenius_sq() / delta_bounds[i],
                ));
            }
            let fc_sq: f64 = g.as_slice()[net.layer_range(l + 1)]
                .iter()
                .map(|v| v * v)
                .sum();
            ratios.push(("grad_ratio".into(), g.norm() / beta));
            ratios.push(("fc_grad_ratio".into(), fc_sq / fc_bound));
            let resid_sq = 2.0 * half_sq_dist(&trace.output, &y);
            ratios.push(("loss_ratio".into(), 0.5 * resid_sq));
            ratios.push(("residual_ratio".into(), resid_sq / 2.0));
            Ok(ratios)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = VerifyReport::new("norm-bounds", seed, trials);
    for ratios in per_trial {
        let mut violated = false;
        for (name, r) in ratios {
            report.extreme(&name, r);
            report.worst_ratio = report.worst_ratio.max(r);
            violated |= r.is_nan() || r > 1.0;
        }
        report.violations += violated as usize;
    }
    report.extreme("beta", beta);
    report.pass = report.violations == 0;
    Ok(report)
}

/// Finite-difference Jacobians of every pre-activation `X_(i)` and of the
/// paper-mode `δ_l` with respect to each weight block `w_(j)`, `j <= i`,
/// checked against their closed-form bounds. Softmax head.
pub fn check_jacobian_bounds(
    net: &Network,
    trials: usize,
    seed: u64,
    consts: &PaperConstants,
) -> Result<VerifyReport> {
    let arch = net.arch();
    let l = net.depth();
    let dims = net.dims().clone();

    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let (w, x, y) = draw(net, &mut rng, Some(1.0))?;
            let mut ratios: Vec<(String, f64)> = Vec::new();
            for j in 1..=l {
                let stack = |p: &ParamSet| -> Result<Vec<f64>> {
                    let trace = net.forward(p, &x, Activation::Softmax)?;
                    let (_, deltas) = net.backprop_paper(p, &trace, &y);
                    let mut out = Vec::new();
                    for pre in &trace.pre[j - 1..] {
                        out.extend_from_slice(pre.as_slice());
                    }
                    out.extend_from_slice(deltas[l - 1].as_slice());
                    Ok(out)
                };
                let jac = fd_jacobian(stack, &w, net.layer_range(j), FD_STEP)?;
                let mut row = 0;
                for i in j..=l {
                    let d = dims.layers[i - 1];
                    let slice_len = d.conv_rows * d.conv_cols;
                    let mut total = 0.0;
                    let mut worst_slice: f64 = 0.0;
                    for _ in 0..d.out_channels {
                        let s = row_block_sq(&jac, row, slice_len);
                        total += s;
                        worst_slice = worst_slice.max(s);
                        row += slice_len;
                    }
                    ratios.push((
                        format!("x{i}_w{j}_ratio"),
                        total / pre_activation_jacobian_bound(arch, i, j),
                    ));
                    ratios.push((
                        format!("x{i}_slice_w{j}_ratio"),
                        worst_slice / pre_activation_slice_jacobian_bound(arch, i, j),
                    ));
                }
                let delta_len = jac.rows() - row;
                let dsq = row_block_sq(&jac, row, delta_len);
                ratios.push((
                    format!("delta{l}_w{j}_ratio"),
                    dsq / delta_jacobian_bound(arch, j, consts),
                ));
            }
            Ok(ratios)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = VerifyReport::new("jacobian-bounds", seed, trials);
    for ratios in per_trial {
        let mut violated = false;
        for (name, r) in ratios {
            report.extreme(&name, r);
            report.worst_ratio = report.worst_ratio.max(r);
            violated |= r.is_nan() || r > 1.0;
        }
        report.violations += violated as usize;
    }
    report.pass = report.violations == 0;
    Ok(report)
}

/// Squared Frobenius norm of rows `start..start+len` of `m`.
fn row_block_sq(m: &Matrix, start: usize, len: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..m.cols() {
        for r in start..start + len {
            s += m[(r, c)] * m[(r, c)];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianOptions {
    /// Central-difference step on the exact gradient.
    pub step: f64,
    /// Fail (rather than flag) ratios above 1.
    pub strict: bool,
    /// Largest accepted `‖H-Hᵀ‖_F/‖H‖_F` before symmetrization.
    pub max_asymmetry: f64,
}

impl Default for HessianOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            strict: false,
            max_asymmetry: 1e-3,
        }
    }
}

/// Numerical Hessian at one point: central differences of the exact gradient.
pub(crate) fn numerical_hessian(
    net: &Network,
    w: &ParamSet,
    x: &Tensor3,
    y: &[f64],
    head: Activation,
    step: f64,
) -> Result<Matrix> {
    let grad = |p: &ParamSet| -> Result<Vec<f64>> {
        let trace = net.forward(p, x, head)?;
        Ok(net.backprop_exact(p, &trace, y).into_vec())
    };
    fd_jacobian(grad, w, 0..w.len(), step)
}

/// `(‖H-Hᵀ‖_F/‖H‖_F, ‖(H+Hᵀ)/2‖_F)`.
pub(crate) fn symmetry_stats(h: &Matrix) -> (f64, f64) {
    let n = h.rows();
    let (mut skew, mut sym, mut total) = (0.0, 0.0, 0.0);
    for c in 0..n {
        for r in 0..n {
            let (a, b) = (h[(r, c)], h[(c, r)]);
            skew += (a - b) * (a - b);
            sym += 0.25 * (a + b) * (a + b);
            total += a * a;
        }
    }
    let asym = if total > 0.0 {
        (skew / total).sqrt()
    } else {
        0.0
    };
    (asym, sym.sqrt())
}

/// Monitors `‖∇²f‖_F / γ` on random draws (softmax head, exact mode).
/// Ratios above 1 are flagged; the check fails on non-finite ratios, ratios
/// above 10 (above 1 when strict), or an asymmetric numerical Hessian.
pub fn hessian_ratio(
    net: &Network,
    trials: usize,
    seed: u64,
    consts: &PaperConstants,
    opts: &HessianOptions,
) -> Result<VerifyReport> {
    let gamma = eval_gamma(net.arch(), consts);
    let stats = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let (w, x, y) = draw(net, &mut rng, None)?;
            let h = numerical_hessian(net, &w, &x, &y, Activation::Softmax, opts.step)?;
            let (asym, norm) = symmetry_stats(&h);
            Ok((norm / gamma, asym))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let ceiling = if opts.strict { 1.0 } else { 10.0 };
    let mut report = VerifyReport::new("hessian-ratio", seed, trials);
    report.ceiling = Some(ceiling);
    let mut ratios: Vec<f64> = stats.iter().map(|s| s.0).collect();
    for &(ratio, asym) in &stats {
        report.worst_ratio = report.worst_ratio.max(ratio);
        if ratio > 1.0 {
            report.flagged += 1;
        }
        if !(ratio.is_finite() && ratio <= ceiling && asym <= opts.max_asymmetry) {
            report.violations += 1;
        }
    }
    ratios.sort_by(f64::total_cmp);
    if let (Some(&lo), Some(&hi)) = (ratios.first(), ratios.last()) {
        report.extreme("ratio_min", lo);
        report.extreme("ratio_median", ratios[ratios.len() / 2]);
        report.extreme("ratio_max", hi);
    }
    for &(_, asym) in &stats {
        report.extreme("asymmetry_max", asym);
    }
    report.extreme("gamma", gamma);
    report.pass = report.violations == 0;
    Ok(report)
}

/// Sample-index block reserved for population surrogates.
pub(crate) const REFERENCE_BASE: u64 = 1 << 60;

/// Mean loss over `samples` at `w`, summed in sample order.
pub(crate) fn mean_loss(
    net: &Network,
    w: &ParamSet,
    samples: &[super::Sample],
    head: Activation,
) -> Result<f64> {
    let mut s = 0.0;
    for smp in samples {
        s += net.sample_loss(w, &smp.input, &smp.label, head)?;
    }
    Ok(s / samples.len() as f64)
}

/// Empirical upper tail of `Q̃_n(w) - Q̂(w)` against `exp(-2nt²/α²)` with a
/// 3σ binomial allowance, one field per threshold `t`. Softmax head.
#[allow(clippy::too_many_arguments)]
pub fn hoeffding_tail(
    dm: &DataModel,
    w: &ParamSet,
    n: usize,
    trials: usize,
    t_grid: &[f64],
    ref_n: usize,
    seed: u64,
    consts: &PaperConstants,
) -> Result<VerifyReport> {
    let net = dm.network();
    let head = Activation::Softmax;
    let reference = dm.samples(REFERENCE_BASE..REFERENCE_BASE + ref_n as u64);
    let population = mean_loss(net, w, &reference, head)?;
    let deviations = (0..trials)
        .into_par_iter()
        .map(|t| {
            let start = (t * n) as u64;
            let batch = dm.samples(start..start + n as u64);
            Ok(mean_loss(net, w, &batch, head)? - population)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut report = VerifyReport::new("hoeffding-tail", seed, trials);
    for &t in t_grid {
        let bound = (-2.0 * n as f64 * t * t / (consts.alpha * consts.alpha))
            .exp()
            .min(1.0);
        let allowance = bound + 3.0 * (bound * (1.0 - bound) / trials as f64).sqrt();
        let freq = deviations.iter().filter(|&&d| d > t).count() as f64 / trials as f64;
        report.extreme(&format!("freq_t{t}"), freq);
        report.extreme(&format!("bound_t{t}"), bound);
        report.worst_ratio = report.worst_ratio.max(freq / allowance);
        if freq > allowance {
            report.violations += 1;
        }
    }
    report.extreme("population_risk", population);
    report.extreme(
        "max_deviation",
        deviations.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    report.pass = report.violations == 0;
    Ok(report)
}
