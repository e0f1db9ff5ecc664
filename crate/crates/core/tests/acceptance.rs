//! End-to-end acceptance run. Prints one `criterion N: PASS|FAIL` line per
//! criterion and exits non-zero when any of them fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cnnlab_core::arch::{freedom_degree, param_count, parse_arch, random_architecture, validate};
use cnnlab_core::bounds::{eval_bounds, BoundQuery, PaperConstants};
use cnnlab_core::model::one_hot;
use cnnlab_core::ops::{
    conv_valid, dilate_and_pad, sigmoid_curvature, sigmoid_gate, softmax, upsample,
};
use cnnlab_core::verify::{
    check_jacobian_bounds, check_norm_bounds, convergence_experiment, gradient_check,
    hessian_ratio, hoeffding_tail, stationary_experiment, ConvergenceOptions, DataModel,
    HessianOptions, StationaryOptions, VerifyReport,
};
use cnnlab_core::{Activation, Architecture, Matrix, Network, Tensor3, ThetaVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn arch(name: &str) -> Architecture {
    let path = format!("{}/../../archs/{name}.json", env!("CARGO_MANIFEST_DIR"));
    parse_arch(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn net(name: &str) -> Network {
    Network::new(arch(name)).unwrap()
}

fn random_archs(seed: u64, count: usize) -> Vec<Architecture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_architecture(&mut rng, 3).unwrap())
        .collect()
}

fn field(r: &VerifyReport, name: &str) -> String {
    format!("{name}={:.3e}", r.get(name).unwrap_or(f64::NAN))
}

fn gradcheck() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["a1", "a2"] {
        let r = gradient_check(&net(name), 100, 7, 1e-6, Activation::Sigmoid).unwrap();
        pass &= r.pass;
        parts.push(format!(
            "{name}: failing={}/100 {} {} {}",
            r.violations,
            field(&r, "max_rel_err"),
            field(&r, "max_abs_err"),
            field(&r, "resolved_rel_err")
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    parts.push(format!("{:.1}s", elapsed.as_secs_f64()));
    Outcome::new(pass, parts.join("; "))
}

fn head_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = net(if case % 2 == 0 { "a1" } else { "a2" });
        let w = n.init_weights(rng.gen(), rng.gen_range(0.05..1.0)).unwrap();
        let (r, c, ch) = n.input_shape();
        let x = Tensor3::from_fn(r, c, ch, |_, _, _| rng.gen_range(0.0..1.0));
        let y = one_hot(n.output_dim(), rng.gen_range(0..n.output_dim()));
        let t = n.forward(&w, &x, Activation::Sigmoid).unwrap();
        let paper = n.backprop_paper(&w, &t, &y).0;
        let exact = n.backprop_exact(&w, &t, &y);
        for (a, b) in paper.as_slice().iter().zip(exact.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut pass = worst <= 1e-12;
    let mut parts = vec![format!("paper vs exact max_abs_diff={worst:.3e}")];
    for name in ["a1", "a2"] {
        let r = gradient_check(&net(name), 100, 7, 1e-6, Activation::Softmax).unwrap();
        pass &= r.pass;
        parts.push(format!(
            "softmax {name}: failing={}/100 {} {} {}",
            r.violations,
            field(&r, "max_rel_err"),
            field(&r, "max_abs_err"),
            field(&r, "resolved_rel_err")
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn norm_bounds() -> Outcome {
    let consts = PaperConstants::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["a1", "a2"] {
        let r = check_norm_bounds(&net(name), 1000, 1, &consts).unwrap();
        pass &= r.pass;
        parts.push(format!(
            "{name}: violations={} worst_ratio={:.3}",
            r.violations, r.worst_ratio
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-5.0..5.0))
}

fn operator_properties() -> Outcome {
    const CASES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures: Vec<(&str, usize)> = Vec::new();
    let mut count = |name: &'static str, ok: bool| {
        if !ok {
            match failures.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => *c += 1,
                None => failures.push((name, 1)),
            }
        }
    };
    let slack = 1.0 + 1e-12;
    for _ in 0..CASES {
        let dim = rng.gen_range(1..12);
        let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let cols = rng.gen_range(1..5);
        let m = random_matrix(&mut rng, dim, cols);
        let n = random_matrix(&mut rng, cols, dim);
        let g = sigmoid_gate(&z);
        count(
            "gate_left",
            g.mul_matrix(&m).frobenius_sq() <= m.frobenius_sq() / 16.0 * slack,
        );
        count(
            "gate_right",
            g.right_mul(&n).frobenius_sq() <= n.frobenius_sq() / 16.0 * slack,
        );

        let q = sigmoid_curvature(&z);
        let c = 64.0 / 6561.0;
        let m = random_matrix(&mut rng, dim, cols);
        let n = random_matrix(&mut rng, cols, dim * dim);
        count(
            "curvature_left",
            q.mul_matrix(&m).frobenius_sq() <= c * m.frobenius_sq() * slack,
        );
        count(
            "curvature_right",
            q.right_mul(&n).frobenius_sq() <= c * n.frobenius_sq() * slack,
        );

        let (r, cc, ch, p) = (
            rng.gen_range(1..7),
            rng.gen_range(1..7),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
        );
        let t = Tensor3::from_fn(r, cc, ch, |_, _, _| rng.gen_range(-3.0..3.0));
        let expect = t.frobenius_sq() / (p * p) as f64;
        count(
            "upsample",
            (upsample(&t, p).frobenius_sq() - expect).abs() <= 1e-12 * expect.max(1.0),
        );

        let k = rng.gen_range(1..6);
        let s = rng.gen_range(1..=k);
        let (dr, dc) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let delta = random_matrix(&mut rng, dr, dc);
        let padded = dilate_and_pad(&delta, s, k);
        let kernel = Tensor3::from_fn(k, k, 1, |_, _, _| rng.gen_range(-2.0..2.0));
        let out = conv_valid(&padded.to_tensor(), &kernel, 1).unwrap();
        let ks = (k - s + 1) as f64;
        count(
            "dilated_correlation",
            out.frobenius_sq()
                <= ks * ks * kernel.frobenius_sq() * delta.frobenius_sq() * slack + 1e-300,
        );

        let u: Vec<f64> = (0..rng.gen_range(1..8))
            .map(|_| rng.gen_range(-50.0..50.0))
            .collect();
        let v = softmax(&u);
        let y = one_hot(v.len(), rng.gen_range(0..v.len()));
        let res: f64 = v.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        count("softmax_residual", (0.0..=2.0).contains(&res));
    }
    let detail = if failures.is_empty() {
        format!("{CASES} cases x 7 properties, 0 violations")
    } else {
        format!("violations: {failures:?}")
    };
    Outcome::new(failures.is_empty(), detail)
}

/// `(d, θ)` recomputed from the raw specification, without the library's
/// derived dimensions: each weight matrix `m1 x m2` of rank `r` costs
/// `r(m1+m2+1)` degrees of freedom.
fn counting_oracle(a: &Architecture) -> (usize, usize) {
    let (mut rows, mut cols, mut ch) = (a.input.rows, a.input.cols, a.input.channels);
    let (mut d, mut theta) = (0, 0);
    for l in &a.layers {
        d += l.kernel * l.kernel * ch * l.out_channels;
        theta += l.rank * (l.kernel * l.kernel * ch + l.out_channels + 1);
        rows = ((rows - l.kernel) / l.stride + 1) / a.pool_size;
        cols = ((cols - l.kernel) / l.stride + 1) / a.pool_size;
        ch = l.out_channels;
    }
    let feat = rows * cols * ch;
    d += feat * a.output.dim;
    theta += a.output.rank * (feat + a.output.dim + 1);
    (d, theta)
}

fn counting() -> Outcome {
    let mut mismatches = 0;
    for a in random_archs(5, 50) {
        let (d, theta) = counting_oracle(&a);
        let instantiated = Network::new(a.clone()).unwrap().zeros().len();
        if param_count(&a).unwrap() != d
            || instantiated != d
            || freedom_degree(&a, ThetaVariant::Main).unwrap() != theta
        {
            mismatches += 1;
        }
    }
    let a1 = arch("a1");
    let (d, theta) = (
        param_count(&a1).unwrap(),
        freedom_degree(&a1, ThetaVariant::Main).unwrap(),
    );
    Outcome::new(
        mismatches == 0 && d == 90 && theta == 116,
        format!("50 random architectures, {mismatches} mismatches; a1 d={d} theta={theta}"),
    )
}

fn size_identity() -> Outcome {
    let (mut layers, mut literal, mut dilated, mut padded) = (0, 0, 0, 0);
    let archs = random_archs(6, 100);
    for a in &archs {
        let dims = validate(a).unwrap();
        for (l, d) in a.layers.iter().zip(&dims.layers) {
            let (k, s) = (l.kernel, l.stride);
            layers += 1;
            literal += usize::from(s * (d.conv_rows - 1) + 2 * k - 1 == d.in_rows + 1 - k);
            dilated += usize::from(s * (d.conv_rows - 1) + 1 == d.in_rows + 1 - k);
            padded += usize::from(s * (d.conv_rows - 1) + 2 * k - 1 == d.in_rows + k - 1);
        }
    }
    Outcome::new(
        literal == layers,
        format!(
            "{} architectures, {layers} layers: s(r-1)+2k-1 == r_in-k+1 on {literal}; \
             s(r-1)+1 == r_in-k+1 on {dilated}; s(r-1)+2k-1 == r_in+k-1 on {padded}",
            archs.len()
        ),
    )
}

fn goldens() -> Outcome {
    let mut q = BoundQuery::new(1024, 0.05);
    q.zeta = Some(0.1);
    let r = eval_bounds(&arch("a1"), &q, &PaperConstants::default()).unwrap();
    let stat = r.stat_bound.unwrap_or(f64::NAN);
    let pass = (r.rho - 0.0589).abs() <= 1e-4
        && (r.beta - 1.5910).abs() <= 1e-4
        && r.gamma == 4.5
        && (r.gen_bound - 0.0740).abs() <= 2e-4
        && (r.grad_bound - 0.486).abs() <= 1e-3
        && (stat - 9.72).abs() <= 0.02;
    Outcome::new(
        pass,
        format!(
            "rho={:.6} beta={:.6} gamma={} gen={:.6} grad={:.6} stat={:.6}",
            r.rho, r.beta, r.gamma, r.gen_bound, r.grad_bound, stat
        ),
    )
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let dm = DataModel::new(net("a1"), 3).unwrap();
    let opts = ConvergenceOptions {
        n_list: vec![64, 128, 256, 512, 1024, 2048],
        trials: 20,
        points: 32,
        ref_factor: 16,
        seed: 3,
        ..Default::default()
    };
    let r = convergence_experiment(&dm, &opts).unwrap();
    let elapsed = start.elapsed();
    let slope = r.slope_risk.unwrap_or(f64::NAN);
    let pass =
        (-0.65..=-0.35).contains(&slope) && r.bounds_hold() && elapsed <= Duration::from_secs(600);
    Outcome::new(
        pass,
        format!(
            "slope_risk={slope:.3} slope_grad={:.3} bounds_hold={} n_ref={} {:.1}s",
            r.slope_grad.unwrap_or(f64::NAN),
            r.bounds_hold(),
            r.n_ref,
            elapsed.as_secs_f64()
        ),
    )
}

fn tail() -> Outcome {
    let n = net("a1");
    let w = n.init_weights(3, 1.0).unwrap();
    let dm = DataModel::new(n, 3).unwrap();
    let ts = [0.05, 0.1, 0.2];
    let r = hoeffding_tail(
        &dm,
        &w,
        256,
        2000,
        &ts,
        16 * 256,
        3,
        &PaperConstants::default(),
    )
    .unwrap();
    let freqs: Vec<String> = ts
        .iter()
        .map(|t| {
            let f = r.get(&format!("freq_t{t}")).unwrap_or(f64::NAN);
            let b = r.get(&format!("bound_t{t}")).unwrap_or(f64::NAN);
            format!("t={t}: freq={f:.4} bound={b:.4}")
        })
        .collect();
    Outcome::new(r.pass, freqs.join("; "))
}

fn jacobian() -> Outcome {
    let r = check_jacobian_bounds(&net("a1"), 100, 1, &PaperConstants::default()).unwrap();
    Outcome::new(
        r.pass,
        format!(
            "violations={} worst_ratio={:.3}",
            r.violations, r.worst_ratio
        ),
    )
}

fn hessian() -> Outcome {
    let r = hessian_ratio(
        &net("a1"),
        50,
        1,
        &PaperConstants::default(),
        &HessianOptions::default(),
    )
    .unwrap();
    Outcome::new(
        r.pass,
        format!(
            "ratio min={:.3} median={:.3} max={:.3} flagged={} {}",
            r.get("ratio_min").unwrap_or(f64::NAN),
            r.get("ratio_median").unwrap_or(f64::NAN),
            r.get("ratio_max").unwrap_or(f64::NAN),
            r.flagged,
            field(&r, "asymmetry_max")
        ),
    )
}

fn stationary() -> Outcome {
    let start = Instant::now();
    let dm = DataModel::new(net("a1"), 3).unwrap();
    let opts = StationaryOptions {
        n_list: vec![128, 256, 512, 1024, 2048],
        ref_n: 16 * 2048,
        restarts: 5,
        seed: 3,
        ..Default::default()
    };
    let r = stationary_experiment(&dm, &opts).unwrap();
    let elapsed = start.elapsed();
    let slope = r.slope.unwrap_or(f64::NAN);
    let pass = (-0.8..=-0.2).contains(&slope) && elapsed <= Duration::from_secs(900);
    let dists: Vec<String> = r
        .records
        .iter()
        .map(|x| format!("{}:{:.4}", x.n, x.distance))
        .collect();
    Outcome::new(
        pass,
        format!(
            "slope={slope:.3} distances [{}] {:.1}s",
            dists.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 12] = [
        gradcheck,
        head_consistency,
        norm_bounds,
        operator_properties,
        counting,
        size_identity,
        goldens,
        convergence,
        tail,
        jacobian,
        hessian,
        stationary,
    ];
    let mut failed = 0;
    for (i, run) in criteria.iter().enumerate() {
        let o = run();
        println!(
            "criterion {}: {} {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
