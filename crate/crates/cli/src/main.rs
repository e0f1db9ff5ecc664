use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod render;

#[derive(Parser, Debug)]
#[command(
    name = "cnnlab",
    version,
    about = "Capacity bounds and numerical checks for small sigmoid CNNs"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Shapes, parameter counts and every bound for one architecture.
    Describe(DescribeArgs),
    /// Side-by-side bounds for several architectures.
    Compare(CompareArgs),
    /// CNN bound against the DNN and Rademacher comparators.
    DnnCompare(DnnCompareArgs),
    /// Backpropagation against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Per-sample delta, gradient and loss bounds.
    VerifyBounds(CheckArgs),
    /// Feature-map and delta Jacobian bounds via finite differences.
    JacobianCheck(CheckArgs),
    /// Numerical Hessian norm relative to gamma.
    HessianCheck(HessianArgs),
    /// Empirical uniform-convergence curve.
    Converge(ConvergeArgs),
    /// Empirical loss tail against the Hoeffding bound.
    Tail(TailArgs),
    /// Distance between empirical and reference stationary points.
    Stationary(StationaryArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Head {
    Sigmoid,
    Softmax,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Variant {
    Main,
    Supplement,
}

#[derive(Args, Debug)]
struct BoundFlags {
    /// Failure probability.
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = Variant::Main)]
    theta_variant: Variant,
    /// Constant override such as `c_g=2`; repeatable.
    #[arg(long = "const", value_name = "KEY=VALUE", value_parser = parse_const)]
    consts: Vec<(String, f64)>,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    #[arg(long)]
    arch: PathBuf,
    /// Sample size; bounds are printed only when given.
    #[arg(long)]
    n: Option<u64>,
    /// Hessian eigenvalue gap for the stationary-point bound.
    #[arg(long)]
    zeta: Option<f64>,
    #[command(flatten)]
    bounds: BoundFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long, required = true)]
    arch: Vec<PathBuf>,
    #[arg(long)]
    n: u64,
    #[command(flatten)]
    bounds: BoundFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DnnCompareArgs {
    #[arg(long)]
    arch: PathBuf,
    /// DNN description `{"l", "d", "max_width", "r_hat", "tau"}`.
    #[arg(long)]
    dnn: PathBuf,
    #[arg(long)]
    n: u64,
    /// Margin of the Rademacher comparator, in (0, 2).
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Input norm bound of the Rademacher comparator.
    #[arg(long, default_value_t = 1.0)]
    b_x: f64,
    #[command(flatten)]
    bounds: BoundFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Head::Sigmoid)]
    head: Head,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Defaults to 1000 for verify-bounds and 100 for jacobian-check.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "const", value_name = "KEY=VALUE", value_parser = parse_const)]
    consts: Vec<(String, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HessianArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Fail on any ratio above 1 instead of flagging it.
    #[arg(long)]
    strict: bool,
    #[arg(long = "const", value_name = "KEY=VALUE", value_parser = parse_const)]
    consts: Vec<(String, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "64,128,256,512,1024,2048"
    )]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Weight points over which the supremum is approximated.
    #[arg(long, default_value_t = 32)]
    points: usize,
    /// Reference sample size as a multiple of the largest n.
    #[arg(long, default_value_t = 16)]
    ref_factor: usize,
    #[command(flatten)]
    bounds: BoundFlags,
    /// CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TailArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    t_list: Vec<f64>,
    /// Reference sample size as a multiple of n.
    #[arg(long, default_value_t = 16)]
    ref_factor: usize,
    /// Weight file; defaults to full-norm random weights drawn from the seed.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long = "const", value_name = "KEY=VALUE", value_parser = parse_const)]
    consts: Vec<(String, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StationaryArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048")]
    n_list: Vec<usize>,
    /// Reference sample size as a multiple of the largest n.
    #[arg(long, default_value_t = 16)]
    ref_factor: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    step_size: f64,
    /// CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_const(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|e| format!("bad value for {k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Exit codes: 0 all checks pass, 1 a check failed, 2 usage or validation error.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.verb) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let runtime = matches!(
                e.downcast_ref::<cnnlab_core::Error>(),
                Some(cnnlab_core::Error::NonFiniteLoss { .. })
            );
            ExitCode::from(if runtime { 1 } else { 2 })
        }
    }
}
