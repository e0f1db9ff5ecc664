use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cnnlab_core::arch::{arch_hash, freedom_degree, parse_arch, validate};
use cnnlab_core::bounds::{
    eval_bounds, eval_dnn_bound, eval_rademacher, parse_dnn, BoundQuery, BoundReport,
    PaperConstants, RademacherParams,
};
use cnnlab_core::verify::{
    check_jacobian_bounds, check_norm_bounds, convergence_experiment, gradient_check,
    hessian_ratio, hoeffding_tail, ConvergenceOptions, ConvergenceRecord, DataModel,
    HessianOptions, StationaryOptions, StationaryRecord, VerifyReport,
};
use cnnlab_core::{Activation, Architecture, Error, Network, ThetaVariant};

use crate::render::{num, yes_no, Table};
use crate::{BoundFlags, Head, Variant, Verb};

pub fn run(verb: Verb) -> Result<bool> {
    match verb {
        Verb::Describe(a) => describe(&a),
        Verb::Compare(a) => compare(&a),
        Verb::DnnCompare(a) => dnn_compare(&a),
        Verb::Gradcheck(a) => {
            validate_trials(a.trials)?;
            if a.tol.is_nan() || a.tol <= 0.0 {
                return Err(Error::InvalidValue {
                    field: "tol".into(),
                    message: "must be positive".into(),
                }
                .into());
            }
            let net = network(&a.arch)?;
            let head = match a.head {
                Head::Sigmoid => Activation::Sigmoid,
                Head::Softmax => Activation::Softmax,
            };
            finish_check(
                gradient_check(&net, a.trials, a.seed, a.tol, head)?,
                a.out.as_deref(),
            )
        }
        Verb::VerifyBounds(a) => {
            let trials = a.trials.unwrap_or(1000);
            validate_trials(trials)?;
            let consts = constants(&a.consts)?;
            let net = network(&a.arch)?;
            finish_check(
                check_norm_bounds(&net, trials, a.seed, &consts)?,
                a.out.as_deref(),
            )
        }
        Verb::JacobianCheck(a) => {
            let trials = a.trials.unwrap_or(100);
            validate_trials(trials)?;
            let consts = constants(&a.consts)?;
            let net = network(&a.arch)?;
            finish_check(
                check_jacobian_bounds(&net, trials, a.seed, &consts)?,
                a.out.as_deref(),
            )
        }
        Verb::HessianCheck(a) => {
            validate_trials(a.trials)?;
            let consts = constants(&a.consts)?;
            let net = network(&a.arch)?;
            let opts = HessianOptions {
                strict: a.strict,
                ..HessianOptions::default()
            };
            finish_check(
                hessian_ratio(&net, a.trials, a.seed, &consts, &opts)?,
                a.out.as_deref(),
            )
        }
        Verb::Converge(a) => converge(&a),
        Verb::Tail(a) => tail(&a),
        Verb::Stationary(a) => stationary(&a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_arch(path: &Path) -> Result<Architecture> {
    parse_arch(&read(path)?).with_context(|| format!("invalid architecture {}", path.display()))
}

fn network(path: &Path) -> Result<Network> {
    Ok(Network::new(load_arch(path)?)?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn validate_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidValue {
            field: "trials".into(),
            message: "must be at least 1".into(),
        }
        .into());
    }
    Ok(())
}

fn constants(overrides: &[(String, f64)]) -> Result<PaperConstants> {
    let mut c = PaperConstants::default();
    for (k, v) in overrides {
        c.set(k, *v)?;
    }
    Ok(c)
}

fn variant(v: Variant) -> ThetaVariant {
    match v {
        Variant::Main => ThetaVariant::Main,
        Variant::Supplement => ThetaVariant::Supplement,
    }
}

fn query(n: u64, zeta: Option<f64>, flags: &BoundFlags) -> BoundQuery {
    BoundQuery {
        zeta,
        theta_variant: variant(flags.theta_variant),
        ..BoundQuery::new(n, flags.eps)
    }
}

/// Bounds at `n`, or `None` when `ρ <= 0` there.
fn bounds_or_none(
    arch: &Architecture,
    q: &BoundQuery,
    c: &PaperConstants,
) -> Result<Option<BoundReport>> {
    match eval_bounds(arch, q, c) {
        Ok(b) => Ok(Some(b)),
        Err(Error::NonPositiveRho { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn constants_line(c: &PaperConstants) -> String {
    let parts: Vec<String> = c
        .entries()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    format!("constants  {}\n", parts.join(" "))
}

fn print(text: &str) {
    print!("{text}");
}

fn describe(a: &crate::DescribeArgs) -> Result<bool> {
    let arch = load_arch(&a.arch)?;
    let consts = constants(&a.bounds.consts)?;
    let dims = validate(&arch)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "architecture  {}  sha256={}",
        a.arch.display(),
        &arch_hash(&arch)[..16]
    );
    let _ = writeln!(
        out,
        "input  {} x {} x {}  pool p={}\n",
        arch.input.rows, arch.input.cols, arch.input.channels, arch.pool_size
    );
    let mut t = Table::default();
    t.row(["layer", "k", "s", "channels", "b", "rank", "conv", "pooled"]);
    for (i, (l, d)) in arch.layers.iter().zip(&dims.layers).enumerate() {
        t.row([
            (i + 1).to_string(),
            l.kernel.to_string(),
            l.stride.to_string(),
            format!("{} -> {}", d.in_channels, d.out_channels),
            l.b.to_string(),
            l.rank.to_string(),
            format!("{} x {}", d.conv_rows, d.conv_cols),
            format!("{} x {}", d.pooled_rows, d.pooled_cols),
        ]);
    }
    t.row([
        "head".to_string(),
        "-".into(),
        "-".into(),
        format!("{} -> {}", dims.feature_len(), arch.output.dim),
        arch.output.b.to_string(),
        arch.output.rank.to_string(),
        "-".into(),
        "-".into(),
    ]);
    out.push_str(&t.render());
    out.push('\n');

    let mut t = Table::default();
    let mut record = vec![
        format!("d={}", dims.total_params),
        format!("theta_main={}", freedom_degree(&arch, ThetaVariant::Main)?),
        format!(
            "theta_supplement={}",
            freedom_degree(&arch, ThetaVariant::Supplement)?
        ),
    ];
    t.row(["d".to_string(), dims.total_params.to_string()]);
    t.row([
        "theta (main)".to_string(),
        freedom_degree(&arch, ThetaVariant::Main)?.to_string(),
    ]);
    t.row([
        "theta (supplement)".to_string(),
        freedom_degree(&arch, ThetaVariant::Supplement)?.to_string(),
    ]);
    if let Some(n) = a.n {
        let q = query(n, a.zeta, &a.bounds);
        let rho = cnnlab_core::bounds::eval_rho(&arch, n);
        t.row(["n".to_string(), n.to_string()]);
        t.row(["eps".to_string(), a.bounds.eps.to_string()]);
        t.row(["rho".to_string(), num(rho)]);
        record.push(format!("n={n} eps={} rho={}", a.bounds.eps, num(rho)));
        match bounds_or_none(&arch, &q, &consts)? {
            Some(b) => {
                let rows = [
                    ("beta", b.beta),
                    ("gamma", b.gamma),
                    ("gen_bound", b.gen_bound),
                    ("grad_bound", b.grad_bound),
                    ("hess_bound", b.hess_bound),
                ];
                for (k, v) in rows {
                    t.row([k.to_string(), num(v)]);
                    record.push(format!("{k}={}", num(v)));
                }
                if let Some(s) = b.stat_bound {
                    t.row(["stat_bound".to_string(), num(s)]);
                    record.push(format!("stat_bound={}", num(s)));
                }
                let th = &b.thresholds;
                let mut preds = vec![
                    ("n >= uniform risk threshold", th.uniform_risk),
                    ("n >= uniform gradient threshold", th.uniform_gradient),
                    ("n >= uniform hessian threshold", th.uniform_hessian),
                ];
                if let Some(s) = th.stationary_points {
                    preds.push(("n >= stationary point threshold", s));
                }
                preds.push((
                    "n >= stationarity transfer threshold",
                    th.stationarity_transfer,
                ));
                for (k, v) in preds {
                    t.row([k.to_string(), yes_no(v).to_string()]);
                }
            }
            None => {
                t.row([
                    "bounds".to_string(),
                    format!("unavailable: rho <= 0 at n={n}; use a larger n"),
                ]);
            }
        }
    }
    out.push_str(&t.render());
    out.push_str(&constants_line(&consts));
    print(&out);
    write_out(a.out.as_deref(), &(record.join(" ") + "\n"))?;
    Ok(true)
}

fn compare(a: &crate::CompareArgs) -> Result<bool> {
    let consts = constants(&a.bounds.consts)?;
    let q = query(a.n, None, &a.bounds);
    let mut t = Table::default();
    t.row([
        "architecture",
        "d",
        "theta",
        "rho",
        "gen_bound",
        "grad_bound",
        "hess_bound",
    ]);
    let mut csv = String::from("architecture,d,theta,rho,gen_bound,grad_bound,hess_bound\n");
    for path in &a.arch {
        let arch = load_arch(path)?;
        let d = validate(&arch)?.total_params;
        let theta = freedom_degree(&arch, q.theta_variant)?;
        let rho = cnnlab_core::bounds::eval_rho(&arch, a.n);
        let cells: Vec<String> = match bounds_or_none(&arch, &q, &consts)? {
            Some(b) => [b.gen_bound, b.grad_bound, b.hess_bound]
                .into_iter()
                .map(num)
                .collect(),
            None => vec!["n/a".into(); 3],
        };
        let name = path.display().to_string();
        let _ = writeln!(csv, "{name},{d},{theta},{},{}", num(rho), cells.join(","));
        let mut row = vec![name, d.to_string(), theta.to_string(), num(rho)];
        row.extend(cells);
        t.row(row);
    }
    let mut out = format!("n={} eps={}\n", a.n, a.bounds.eps);
    out.push_str(&t.render());
    out.push_str(&constants_line(&consts));
    print(&out);
    write_out(a.out.as_deref(), &csv)?;
    Ok(true)
}

fn dnn_compare(a: &crate::DnnCompareArgs) -> Result<bool> {
    let arch = load_arch(&a.arch)?;
    let dnn = parse_dnn(&read(&a.dnn)?)
        .with_context(|| format!("invalid DNN description {}", a.dnn.display()))?;
    let consts = constants(&a.bounds.consts)?;
    let q = query(a.n, None, &a.bounds);
    let cnn = bounds_or_none(&arch, &q, &consts)?;
    let dnn_bound = eval_dnn_bound(&dnn, a.n, a.bounds.eps, &consts)?;
    let b_max = arch
        .layers
        .iter()
        .map(|l| l.b)
        .fold(arch.output.b, f64::max);
    let rad = eval_rademacher(
        &RademacherParams {
            b_x: a.b_x,
            b: b_max,
            p: arch.pool_size,
            l: arch.layers.len(),
            r0: arch.input.rows,
            c0: arch.input.cols,
            out_dim: arch.output.dim,
        },
        a.n,
        a.margin,
        a.bounds.eps,
    )?;
    let mut t = Table::default();
    t.row(["quantity", "value"]);
    let cnn_cell = cnn
        .as_ref()
        .map_or("n/a (rho <= 0)".to_string(), |b| num(b.gen_bound));
    t.row(["cnn gen_bound".to_string(), cnn_cell.clone()]);
    t.row(["dnn eps_n".to_string(), num(dnn_bound)]);
    t.row(["rademacher R_m".to_string(), num(rad.complexity)]);
    t.row(["margin bound excess".to_string(), num(rad.margin_excess)]);
    let mut out = format!(
        "n={} eps={} margin={} b_x={}\n",
        a.n, a.bounds.eps, a.margin, a.b_x
    );
    out.push_str(&t.render());
    out.push_str(&constants_line(&consts));
    print(&out);
    let record = format!(
        "cnn_gen_bound={cnn_cell} dnn_bound={} rademacher={} margin_excess={}\n",
        num(dnn_bound),
        num(rad.complexity),
        num(rad.margin_excess)
    );
    write_out(a.out.as_deref(), &record.replace(" (rho <= 0)", ""))?;
    Ok(true)
}

fn finish_check(report: VerifyReport, out: Option<&Path>) -> Result<bool> {
    let record = report.to_record();
    println!("{record}");
    println!("result: {}", if report.pass { "PASS" } else { "FAIL" });
    write_out(out, &(record + "\n"))?;
    Ok(report.pass)
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or("na".into(), num)
}

fn converge(a: &crate::ConvergeArgs) -> Result<bool> {
    let consts = constants(&a.bounds.consts)?;
    let dm = DataModel::new(network(&a.arch)?, a.seed)?;
    let opts = ConvergenceOptions {
        n_list: a.n_list.clone(),
        trials: a.trials,
        points: a.points,
        ref_factor: a.ref_factor,
        eps: a.bounds.eps,
        seed: a.seed,
        theta_variant: variant(a.bounds.theta_variant),
        consts,
    };
    let res = convergence_experiment(&dm, &opts)?;
    let mut csv = String::from(ConvergenceRecord::CSV_HEADER);
    csv.push('\n');
    for r in &res.records {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    let pass = res.bounds_hold();
    let mut out = csv.clone();
    let _ = writeln!(
        out,
        "slope_risk={} slope_grad={} n_ref={} bounds_hold={}",
        fmt_slope(res.slope_risk),
        fmt_slope(res.slope_grad),
        res.n_ref,
        pass
    );
    out.push_str(&constants_line(&consts));
    print(&out);
    write_out(a.out.as_deref(), &csv)?;
    Ok(pass)
}

fn tail(a: &crate::TailArgs) -> Result<bool> {
    validate_trials(a.trials)?;
    if a.n == 0 || a.ref_factor == 0 {
        return Err(Error::InvalidValue {
            field: "n".into(),
            message: "n and ref-factor must be positive".into(),
        }
        .into());
    }
    let consts = constants(&a.consts)?;
    let net = network(&a.arch)?;
    let w = match &a.weights {
        Some(p) => net.read_weights(&read(p)?)?,
        None => net.init_weights(a.seed, 1.0)?,
    };
    let dm = DataModel::new(net, a.seed)?;
    let report = hoeffding_tail(
        &dm,
        &w,
        a.n,
        a.trials,
        &a.t_list,
        a.ref_factor * a.n,
        a.seed,
        &consts,
    )?;
    finish_check(report, a.out.as_deref())
}

fn stationary(a: &crate::StationaryArgs) -> Result<bool> {
    let max_n = a.n_list.iter().copied().max().unwrap_or(0);
    let dm = DataModel::new(network(&a.arch)?, a.seed)?;
    let opts = StationaryOptions {
        n_list: a.n_list.clone(),
        ref_n: a.ref_factor * max_n,
        restarts: a.restarts,
        steps: a.steps,
        step_size: a.step_size,
        seed: a.seed,
    };
    let res = cnnlab_core::verify::stationary_experiment(&dm, &opts)?;
    let mut csv = String::from(StationaryRecord::CSV_HEADER);
    csv.push('\n');
    for r in &res.records {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    let mut out = csv.clone();
    let _ = writeln!(out, "slope={} ref_n={}", fmt_slope(res.slope), opts.ref_n);
    print(&out);
    write_out(a.out.as_deref(), &csv)?;
    Ok(true)
}
