//! Closed-form evaluators: sample-complexity quantities, the four uniform
//! convergence bounds, the per-lemma norm bounds used by the verification
//! suites, and two comparator bounds (fully connected DNN, Rademacher).
//!
//! All logarithms are natural.

use crate::arch::{validate, Architecture, DerivedDims, ThetaVariant};
use crate::error::{Error, Result};

/// Numeric constants entering the bounds. The universal constants default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperConstants {
    /// Bound on `‖S(v-y)‖²`, 1/8.
    pub theta: f64,
    /// Curvature constant of the `δ_l` Jacobian bound, 3/64.
    pub theta_tilde: f64,
    /// Range of the loss in the Hoeffding tail.
    pub alpha: f64,
    pub c_f_prime: f64,
    pub c_g: f64,
    pub c_g_prime: f64,
    pub c_v: f64,
    pub c_v_prime: f64,
    pub c_h: f64,
    pub c_n: f64,
    /// Third-derivative constant of the Hessian threshold.
    pub nu: f64,
}

impl Default for PaperConstants {
    fn default() -> Self {
        Self {
            theta: 1.0 / 8.0,
            theta_tilde: 3.0 / 64.0,
            alpha: 1.0,
            c_f_prime: 1.0,
            c_g: 1.0,
            c_g_prime: 1.0,
            c_v: 1.0,
            c_v_prime: 1.0,
            c_h: 1.0,
            c_n: 1.0,
            nu: 1.0,
        }
    }
}

impl PaperConstants {
    /// Overrides one universal constant by name (`c_g`, `c_f_prime`/`c_f'`, ...).
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::invalid(
                key,
                format!("constant must be a positive real, got {value}"),
            ));
        }
        let slot = match key {
            "c_f'" | "c_f_prime" => &mut self.c_f_prime,
            "c_g" => &mut self.c_g,
            "c_g'" | "c_g_prime" => &mut self.c_g_prime,
            "c_v" => &mut self.c_v,
            "c_v'" | "c_v_prime" => &mut self.c_v_prime,
            "c_h" => &mut self.c_h,
            "c_n" => &mut self.c_n,
            "nu" => &mut self.nu,
            _ => return Err(Error::invalid(key, "unknown constant")),
        };
        *slot = value;
        Ok(())
    }

    /// `(name, value)` pairs in a fixed order, for reports.
    pub fn entries(&self) -> [(&'static str, f64); 11] {
        [
            ("theta", self.theta),
            ("theta_tilde", self.theta_tilde),
            ("alpha", self.alpha),
            ("c_f_prime", self.c_f_prime),
            ("c_g", self.c_g),
            ("c_g_prime", self.c_g_prime),
            ("c_v", self.c_v),
            ("c_v_prime", self.c_v_prime),
            ("c_h", self.c_h),
            ("c_n", self.c_n),
            ("nu", self.nu),
        ]
    }
}

/// Inputs to [`eval_bounds`] besides the architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundQuery {
    pub n: u64,
    /// Failure probability `ε`.
    pub eps: f64,
    /// Hessian eigenvalue gap; enables the stationary-point bound and the third threshold.
    pub zeta: Option<f64>,
    /// Target squared gradient norm of the stationarity threshold; defaults to `eps`.
    pub stationarity: Option<f64>,
    pub theta_variant: ThetaVariant,
}

impl BoundQuery {
    pub fn new(n: u64, eps: f64) -> Self {
        Self {
            n,
            eps,
            zeta: None,
            stationarity: None,
            theta_variant: ThetaVariant::Main,
        }
    }
}

/// Whether `n` reaches each sample-size threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub uniform_risk: bool,
    pub uniform_gradient: bool,
    pub uniform_hessian: bool,
    /// Present only when `ζ` is supplied.
    pub stationary_points: Option<bool>,
    pub stationarity_transfer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: u64,
    pub eps: f64,
    pub rho: f64,
    pub theta: usize,
    pub d: usize,
    pub beta: f64,
    pub gamma: f64,
    /// `√((θρ+ln(4/ε))/(2n))`.
    pub gen_bound: f64,
    /// `c_g β √K`, `K = (2d+θρ+ln(4/ε))/(2n)`.
    pub grad_bound: f64,
    /// `c_v γ √K`.
    pub hess_bound: f64,
    /// `(2 c_g β / ζ) √K`.
    pub stat_bound: Option<f64>,
    pub thresholds: Thresholds,
    pub constants: PaperConstants,
}

/// `d_j b_j² (k_j-s_j+1)² / (16p²)`, the per-layer contraction factor.
fn contraction(arch: &Architecture, j: usize) -> f64 {
    let l = &arch.layers[j - 1];
    let p = arch.pool_size as f64;
    let ks = (l.kernel - l.stride + 1) as f64;
    l.out_channels as f64 * l.b * l.b * ks * ks / (16.0 * p * p)
}

/// `Π_{s=from}^{to} contraction(s)`; empty products are 1.
fn contraction_product(arch: &Architecture, from: usize, to: usize) -> f64 {
    (from..=to).map(|s| contraction(arch, s)).product()
}

fn validated(arch: &Architecture) -> DerivedDims {
    validate(arch).expect("bounds require a validated architecture")
}

/// `ρ = Σ ln(√d_i b_i (k_i-s_i+1)/(4p)) + ln b_{l+1} + ln(n/(128p²))`.
pub fn eval_rho(arch: &Architecture, n: u64) -> f64 {
    let p = arch.pool_size as f64;
    let layers: f64 = arch
        .layers
        .iter()
        .map(|l| {
            ((l.out_channels as f64).sqrt() * l.b * (l.kernel - l.stride + 1) as f64 / (4.0 * p))
                .ln()
        })
        .sum();
    layers + arch.output.b.ln() + (n as f64 / (128.0 * p * p)).ln()
}

/// Smallest real `n` with `ρ = 0`.
pub fn rho_root(arch: &Architecture) -> f64 {
    (-eval_rho(arch, 1)).exp()
}

/// `β²` in the main-text form:
/// `r_l c_l d_l/(8p²) + Σ_i b²_{l+1} d_{i-1}/(8p² b_i² d_i) r_{i-1}c_{i-1} Π_{j=i}^l contraction(j)`,
/// with `r_0 = r̃_0` the input size.
pub fn beta_sq(arch: &Architecture) -> f64 {
    let dims = validated(arch);
    let p2 = (arch.pool_size * arch.pool_size) as f64;
    let l = arch.layers.len();
    let last = dims.layers[l - 1];
    let head = (last.conv_rows * last.conv_cols * last.out_channels) as f64 / (8.0 * p2);
    let b_out2 = arch.output.b * arch.output.b;
    let sum: f64 = (1..=l)
        .map(|i| {
            let spec = &arch.layers[i - 1];
            let d = dims.layers[i - 1];
            let (r_prev, c_prev) = if i == 1 {
                (arch.input.rows, arch.input.cols)
            } else {
                (dims.layers[i - 2].conv_rows, dims.layers[i - 2].conv_cols)
            };
            b_out2 * d.in_channels as f64 / (8.0 * p2 * spec.b * spec.b * spec.out_channels as f64)
                * (r_prev * c_prev) as f64
                * contraction_product(arch, i, l)
        })
        .sum();
    head + sum
}

pub fn eval_beta(arch: &Architecture) -> f64 {
    beta_sq(arch).sqrt()
}

/// `β²` in the supplement form `ϑ r̃_l c̃_l d_l + Σ ϑ b²_{l+1} d_{i-1}/(p² b_i² d_i) r_{i-1}c_{i-1} Π`.
pub fn beta_sq_supplement(arch: &Architecture, consts: &PaperConstants) -> f64 {
    let dims = validated(arch);
    let p2 = (arch.pool_size * arch.pool_size) as f64;
    let l = arch.layers.len();
    let b_out2 = arch.output.b * arch.output.b;
    let head = consts.theta * dims.feature_len() as f64;
    let sum: f64 = (1..=l)
        .map(|i| {
            let spec = &arch.layers[i - 1];
            let d = dims.layers[i - 1];
            let (r_prev, c_prev) = if i == 1 {
                (arch.input.rows, arch.input.cols)
            } else {
                (dims.layers[i - 2].conv_rows, dims.layers[i - 2].conv_cols)
            };
            consts.theta * b_out2 * d.in_channels as f64
                / (p2 * spec.b * spec.b * spec.out_channels as f64)
                * (r_prev * c_prev) as f64
                * contraction_product(arch, i, l)
        })
        .sum();
    head + sum
}

/// `Π_{s=1}^l d_s b_s² (k_s-s_s+1)² / (8√2 p²)`.
fn hessian_product(arch: &Architecture) -> f64 {
    let p2 = (arch.pool_size * arch.pool_size) as f64;
    arch.layers
        .iter()
        .map(|l| {
            let ks = (l.kernel - l.stride + 1) as f64;
            l.out_channels as f64 * l.b * l.b * ks * ks / (8.0 * 2f64.sqrt() * p2)
        })
        .product()
}

/// `γ² = ϑ b²_{l+1} d_0²/(b_1⁴ d_1²) l² r_0² c_0² [Π d_s b_s²(k_s-s_s+1)²/(8√2p²)]²`.
pub fn gamma_sq(arch: &Architecture, consts: &PaperConstants) -> f64 {
    let first = &arch.layers[0];
    let l = arch.layers.len() as f64;
    let d0 = arch.input.channels as f64;
    let d1 = first.out_channels as f64;
    let rc = (arch.input.rows * arch.input.cols) as f64;
    let prod = hessian_product(arch);
    consts.theta * arch.output.b.powi(2) * d0 * d0 / (first.b.powi(4) * d1 * d1)
        * l
        * l
        * rc
        * rc
        * prod
        * prod
}

pub fn eval_gamma(arch: &Architecture, consts: &PaperConstants) -> f64 {
    gamma_sq(arch, consts).sqrt()
}

/// `b_{l+1} + Σ d_i b_i`.
fn total_magnitude(arch: &Architecture) -> f64 {
    arch.output.b
        + arch
            .layers
            .iter()
            .map(|l| l.out_channels as f64 * l.b)
            .sum::<f64>()
}

fn max_conv_area(dims: &DerivedDims) -> f64 {
    dims.layers
        .iter()
        .map(|d| (d.conv_rows * d.conv_cols) as f64)
        .fold(0.0, f64::max)
}

/// Evaluates every bound and threshold predicate at sample size `q.n`.
pub fn eval_bounds(
    arch: &Architecture,
    q: &BoundQuery,
    consts: &PaperConstants,
) -> Result<BoundReport> {
    let dims = validate(arch)?;
    if !(q.eps > 0.0 && q.eps < 1.0) {
        return Err(Error::invalid(
            "eps",
            format!("must lie in (0, 1), got {}", q.eps),
        ));
    }
    if q.n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if let Some(z) = q.zeta {
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::invalid(
                "zeta",
                format!("must be a positive real, got {z}"),
            ));
        }
    }
    let stationarity = q.stationarity.unwrap_or(q.eps);
    if !(stationarity.is_finite() && stationarity > 0.0) {
        return Err(Error::invalid("stationarity", "must be a positive real"));
    }

    let rho = eval_rho(arch, q.n);
    if rho <= 0.0 {
        return Err(Error::NonPositiveRho { rho, n: q.n });
    }
    let theta = crate::arch::freedom_degree(arch, q.theta_variant)?;
    let d = dims.total_params;
    let (n, eps) = (q.n as f64, q.eps);
    let (thf, df) = (theta as f64, d as f64);
    let log4 = (4.0 / eps).ln();

    let beta = eval_beta(arch);
    let gamma = eval_gamma(arch, consts);
    let gen_bound = ((thf * rho + log4) / (2.0 * n)).sqrt();
    let k = ((2.0 * df + thf * rho + log4) / (2.0 * n)).sqrt();
    let grad_bound = consts.c_g * beta * k;
    let hess_bound = consts.c_v * gamma * k;
    let stat_bound = q.zeta.map(|z| 2.0 * consts.c_g * beta / z * k);

    let l = arch.layers.len() as f64;
    let mag = total_magnitude(arch);
    let b_out = arch.output.b;
    let b1 = arch.layers[0].b;
    let d0 = arch.input.channels as f64;
    let r0c0d0 = (arch.input.rows * arch.input.cols) as f64 * d0;
    let max_area = max_conv_area(&dims);
    let shape_term = l * l * b_out * b_out * mag * mag * r0c0d0.powi(4) / (d0.powi(4) * b1.powi(8));

    let uniform_risk =
        n >= consts.c_f_prime * l * l * mag * mag * max_area.sqrt() / (thf * rho * eps * eps);
    let uniform_gradient =
        n >= consts.c_g_prime * shape_term / ((df * 6f64.ln() + thf * rho) * eps * eps * max_area);
    let uniform_hessian = n
        >= consts.c_v_prime * consts.nu * consts.nu
            / (df * rho * eps * eps)
            / hessian_product(arch);
    let stationary_points = q.zeta.map(|z| {
        let geometry = (df + thf * rho) / (z * z);
        let sampling = shape_term / (df * rho * eps * eps * max_area);
        n >= consts.c_h * geometry.max(sampling)
    });
    let stationarity_transfer = n >= (df * rho + log4) * beta * beta / stationarity;

    Ok(BoundReport {
        n: q.n,
        eps,
        rho,
        theta,
        d,
        beta,
        gamma,
        gen_bound,
        grad_bound,
        hess_bound,
        stat_bound,
        thresholds: Thresholds {
            uniform_risk,
            uniform_gradient,
            uniform_hessian,
            stationary_points,
            stationarity_transfer,
        },
        constants: *consts,
    })
}

/// Upper bound on `‖δ_i‖²_F`: `ϑ b²_{l+1}/(16p²) Π_{s=i+1}^l contraction(s)`.
pub fn delta_bound(arch: &Architecture, i: usize, consts: &PaperConstants) -> f64 {
    let p2 = (arch.pool_size * arch.pool_size) as f64;
    consts.theta * arch.output.b.powi(2) / (16.0 * p2)
        * contraction_product(arch, i + 1, arch.layers.len())
}

/// Upper bound on `‖∇_{W_(l+1)} f‖²_F`: `ϑ r̃_l c̃_l d_l`.
pub fn fc_gradient_bound(arch: &Architecture, consts: &PaperConstants) -> f64 {
    consts.theta * validated(arch).feature_len() as f64
}

/// `r̃_{j-1} c̃_{j-1} d_{j-1} (k_j-s_j+1)² Π_{s=j+1}^{i} contraction(s)`.
fn jacobian_core(arch: &Architecture, dims: &DerivedDims, i: usize, j: usize) -> f64 {
    let d = dims.layers[j - 1];
    let spec = &arch.layers[j - 1];
    let ks = (spec.kernel - spec.stride + 1) as f64;
    (d.in_rows * d.in_cols * d.in_channels) as f64 * ks * ks * contraction_product(arch, j + 1, i)
}

/// Upper bound on `‖∂vec(X_(i))/∂w_(j)‖²_F` for `j <= i`.
pub fn pre_activation_jacobian_bound(arch: &Architecture, i: usize, j: usize) -> f64 {
    assert!(1 <= j && j <= i && i <= arch.layers.len());
    let dims = validated(arch);
    let di = dims.layers[i - 1];
    (di.out_channels * di.conv_rows * di.conv_cols) as f64 * jacobian_core(arch, &dims, i, j)
}

/// Upper bound on `max_s ‖∂vec(X_(i)^s)/∂w_(j)‖²_F` for `j <= i`.
pub fn pre_activation_slice_jacobian_bound(arch: &Architecture, i: usize, j: usize) -> f64 {
    assert!(1 <= j && j <= i && i <= arch.layers.len());
    let dims = validated(arch);
    let di = dims.layers[i - 1];
    (di.conv_rows * di.conv_cols) as f64 * jacobian_core(arch, &dims, i, j)
}

/// Upper bound on `‖∂δ_l/∂w_(j)‖²_F` for `j <= l`.
pub fn delta_jacobian_bound(arch: &Architecture, j: usize, consts: &PaperConstants) -> f64 {
    let l = arch.layers.len();
    let p2 = (arch.pool_size * arch.pool_size) as f64;
    consts.theta_tilde * arch.output.b.powi(4) / (16.0 * p2)
        * pre_activation_jacobian_bound(arch, l, j)
}

/// A fully connected network, for the comparator bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnnSpec {
    /// Number of hidden layers `l` (the network has `l+1` weight layers).
    pub l: usize,
    /// Total parameter count.
    pub d: usize,
    pub max_width: usize,
    pub r_hat: f64,
    pub tau: f64,
}

/// Reads a DNN description `{"l", "d", "max_width", "r_hat", "tau"}`.
pub fn parse_dnn(text: &str) -> Result<DnnSpec> {
    serde_json::from_str(text).map_err(|e| Error::Schema {
        path: "dnn".into(),
        message: e.to_string(),
    })
}

/// `c_n τ √((1+c_r l) max_width) √((d ln(n(l+1)) + ln(4/ε))/n)`,
/// `c_r = max(r̂²/16, (r̂²/16)^l)`.
pub fn eval_dnn_bound(dnn: &DnnSpec, n: u64, eps: f64, consts: &PaperConstants) -> Result<f64> {
    if dnn.l == 0 || dnn.d == 0 || dnn.max_width == 0 {
        return Err(Error::invalid("dnn", "l, d and max_width must be positive"));
    }
    if !(dnn.r_hat > 0.0 && dnn.tau > 0.0) {
        return Err(Error::invalid("dnn", "r_hat and tau must be positive"));
    }
    if !(eps > 0.0 && eps < 1.0) || n == 0 {
        return Err(Error::invalid("eps", "need 0 < eps < 1 and n >= 1"));
    }
    let l = dnn.l as f64;
    let ratio = dnn.r_hat * dnn.r_hat / 16.0;
    let c_r = ratio.max(ratio.powi(dnn.l as i32));
    let n_f = n as f64;
    let complexity = (dnn.d as f64 * (n_f * (l + 1.0)).ln() + (4.0 / eps).ln()) / n_f;
    Ok(consts.c_n * dnn.tau * ((1.0 + c_r * l) * dnn.max_width as f64).sqrt() * complexity.sqrt())
}

/// Inputs of the Rademacher-complexity comparator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherParams {
    /// Bound on the input norm.
    pub b_x: f64,
    /// Per-layer weight bound.
    pub b: f64,
    pub p: usize,
    pub l: usize,
    pub r0: usize,
    pub c0: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherBound {
    pub complexity: f64,
    pub margin_excess: f64,
}

/// `R_m = b_x (2pb)^{l+1} √(ln(r0c0)) / √n`, and the margin-bound excess
/// `8d(2d-1)/γ_m R_m + √(ln log₂(2/γ_m)/n) + √(ln(2/ε)/n)`.
/// A negative `ln log₂(2/γ_m)` (for `1 < γ_m < 2`) contributes zero.
pub fn eval_rademacher(
    params: &RademacherParams,
    n: u64,
    margin: f64,
    eps: f64,
) -> Result<RademacherBound> {
    if margin >= 2.0 {
        return Err(Error::invalid(
            "margin",
            format!("must be below 2 so that log2(2/margin) > 0, got {margin}"),
        ));
    }
    if margin.is_nan() || margin <= 0.0 || !(eps > 0.0 && eps < 1.0) || n == 0 {
        return Err(Error::invalid(
            "margin",
            "need margin > 0, 0 < eps < 1, n >= 1",
        ));
    }
    let n_f = n as f64;
    let complexity = params.b_x
        * (2.0 * params.p as f64 * params.b).powi(params.l as i32 + 1)
        * ((params.r0 * params.c0) as f64).ln().sqrt()
        / n_f.sqrt();
    let k = params.out_dim as f64;
    let margin_term = ((2.0 / margin).log2().ln() / n_f).max(0.0).sqrt();
    let margin_excess = 8.0 * k * (2.0 * k - 1.0) / margin * complexity
        + margin_term
        + ((2.0 / eps).ln() / n_f).sqrt();
    Ok(RademacherBound {
        complexity,
        margin_excess,
    })
}

#[cfg(test)]
mod proptests;
