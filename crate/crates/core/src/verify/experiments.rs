use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checks::REFERENCE_BASE;
use super::data::{DataModel, Sample};
use super::report::{num, ConvergenceRecord};
use super::trial_rng;
use crate::arch::ThetaVariant;
use crate::bounds::{eval_bounds, BoundQuery, PaperConstants};
use crate::error::{Error, Result};
use crate::model::{GradientMode, Network, ParamSet};
use crate::ops::Activation;

/// Samples per partial sum. Sums over a batch are formed chunk by chunk and
/// the partials added in chunk order, so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Mean loss and mean exact-mode gradient of the softmax network over `samples`.
pub(crate) fn batch_loss_and_gradient(
    net: &Network,
    w: &ParamSet,
    samples: &[Sample],
) -> Result<(f64, ParamSet)> {
    let partials = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = ParamSet::from_vec(vec![0.0; w.len()]);
            for s in chunk {
                let (f, g) = net.loss_and_gradient(
                    w,
                    &s.input,
                    &s.label,
                    Activation::Softmax,
                    GradientMode::Exact,
                )?;
                loss += f;
                grad.axpy(1.0, &g);
            }
            Ok((loss, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut grad = ParamSet::from_vec(vec![0.0; w.len()]);
    for (f, g) in partials {
        loss += f;
        grad.axpy(1.0, &g);
    }
    let inv = 1.0 / samples.len() as f64;
    grad.scale(inv);
    Ok((loss * inv, grad))
}

/// Least-squares slope of `ln y` against `ln x`, ignoring non-positive pairs.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone)]
pub struct ConvergenceOptions {
    pub n_list: Vec<usize>,
    pub trials: usize,
    /// Weight points per trial over which the sup is approximated.
    pub points: usize,
    /// Reference sample size as a multiple of the largest `n`.
    pub ref_factor: usize,
    pub eps: f64,
    pub seed: u64,
    pub theta_variant: ThetaVariant,
    pub consts: PaperConstants,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            n_list: vec![64, 128, 256, 512, 1024],
            trials: 20,
            points: 8,
            ref_factor: 16,
            eps: 0.05,
            seed: 0,
            theta_variant: ThetaVariant::Main,
            consts: PaperConstants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub records: Vec<ConvergenceRecord>,
    pub slope_risk: Option<f64>,
    pub slope_grad: Option<f64>,
    pub n_ref: usize,
}

impl ConvergenceResult {
    /// Every deviation lies below its bound wherever a bound exists.
    pub fn bounds_hold(&self) -> bool {
        self.records.iter().all(|r| {
            r.bound_risk.is_none_or(|b| r.deviation_risk <= b)
                && r.bound_grad.is_none_or(|b| r.deviation_grad <= b)
        })
    }
}

/// Sample-index block of trial `trial` at the `n_idx`-th sample size.
fn trial_block(n_idx: usize, trial: usize) -> u64 {
    ((n_idx as u64) << 48) | ((trial as u64) << 24)
}

/// Empirical uniform-convergence curve: for each `n`, the mean over trials of
/// the largest risk and gradient deviations from a reference sample across a
/// set of random weight points.
pub fn convergence_experiment(
    dm: &DataModel,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceResult> {
    let net = dm.network();
    let max_n = opts.n_list.iter().copied().max().unwrap_or(0);
    if max_n == 0 || opts.trials == 0 || opts.points == 0 {
        return Err(Error::invalid(
            "n-list",
            "needs positive sample sizes, trials and points",
        ));
    }
    if max_n >= 1 << 24 || opts.trials >= 1 << 24 {
        return Err(Error::invalid(
            "n-list",
            "sample sizes and trials must stay below 2^24",
        ));
    }
    let n_ref = opts.ref_factor.max(1) * max_n;
    let reference = dm.samples(REFERENCE_BASE..REFERENCE_BASE + n_ref as u64);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let points = (0..opts.points)
        .map(|_| {
            let nf = 1.0 - rng.gen::<f64>();
            net.init_weights(rng.gen(), nf)
        })
        .collect::<Result<Vec<_>>>()?;
    let population = points
        .iter()
        .map(|w| batch_loss_and_gradient(net, w, &reference))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(opts.n_list.len());
    for (n_idx, &n) in opts.n_list.iter().enumerate() {
        let per_trial = (0..opts.trials)
            .into_par_iter()
            .map(|t| {
                let start = trial_block(n_idx, t);
                let batch = dm.samples(start..start + n as u64);
                let (mut risk, mut grad) = (0.0f64, 0.0f64);
                for (w, (q, g)) in points.iter().zip(&population) {
                    let (qn, gn) = batch_loss_and_gradient(net, w, &batch)?;
                    risk = risk.max((qn - q).abs());
                    grad = grad.max(gn.distance(g));
                }
                Ok((risk, grad))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = opts.trials as f64;
        let deviation_risk = per_trial.iter().map(|p| p.0).sum::<f64>() / m;
        let deviation_grad = per_trial.iter().map(|p| p.1).sum::<f64>() / m;

        let q = BoundQuery {
            theta_variant: opts.theta_variant,
            ..BoundQuery::new(n as u64, opts.eps)
        };
        let bounds = match eval_bounds(net.arch(), &q, &opts.consts) {
            Ok(b) => Some(b),
            Err(Error::NonPositiveRho { .. }) => None,
            Err(e) => return Err(e),
        };
        records.push(ConvergenceRecord {
            n,
            deviation_risk,
            deviation_grad,
            bound_risk: bounds.as_ref().map(|b| b.gen_bound),
            bound_grad: bounds.as_ref().map(|b| b.grad_bound),
            trials: opts.trials,
            seed: opts.seed,
            n_ref,
        });
    }

    let ns: Vec<f64> = records.iter().map(|r| r.n as f64).collect();
    let risks: Vec<f64> = records.iter().map(|r| r.deviation_risk).collect();
    let grads: Vec<f64> = records.iter().map(|r| r.deviation_grad).collect();
    Ok(ConvergenceResult {
        slope_risk: loglog_slope(&ns, &risks),
        slope_grad: loglog_slope(&ns, &grads),
        records,
        n_ref,
    })
}

#[derive(Debug, Clone)]
pub struct StationaryOptions {
    pub n_list: Vec<usize>,
    /// Sample size standing in for the population; every `n` must not exceed it.
    pub ref_n: usize,
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            n_list: vec![64, 128, 256, 512, 1024],
            ref_n: 4096,
            restarts: 5,
            steps: 200,
            step_size: 2.0,
            seed: 0,
        }
    }
}

/// Medians over restarts at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryRecord {
    pub n: usize,
    /// `‖w_n - w_ref‖₂`.
    pub distance: f64,
    /// `‖∇Q̂(w_n)‖²`, the reference-sample gradient at the empirical solution.
    pub population_grad_sq: f64,
    /// `4‖∇Q̃_n(w_n)‖²`.
    pub empirical_grad_sq: f64,
    pub restarts: usize,
    pub seed: u64,
    pub ref_n: usize,
}

impl StationaryRecord {
    pub const CSV_HEADER: &'static str =
        "n,distance,population_grad_sq,empirical_grad_sq_x4,restarts,seed,ref_n";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            num(self.distance),
            num(self.population_grad_sq),
            num(self.empirical_grad_sq),
            self.restarts,
            self.seed,
            self.ref_n
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    pub records: Vec<StationaryRecord>,
    /// Log-log slope of the median distance against `n`.
    pub slope: Option<f64>,
}

/// Projected gradient descent on the mean loss over `samples`.
fn descend(
    net: &Network,
    start: &ParamSet,
    samples: &[Sample],
    opts: &StationaryOptions,
    trial: usize,
) -> Result<ParamSet> {
    let mut w = start.clone();
    for step in 0..opts.steps {
        let (loss, g) = batch_loss_and_gradient(net, &w, samples)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { trial, step });
        }
        w.axpy(-opts.step_size, &g);
        net.project(&mut w);
    }
    Ok(w)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Distance between the empirical and reference stationary points reached by
/// projected gradient descent from a common start.
///
/// Restart `r` starts from its own weights at half norm and uses its own
/// sample block; the sample of size `n` is the first `n` reference samples of
/// that block, so `n = ref_n` reproduces the reference point exactly.
pub fn stationary_experiment(dm: &DataModel, opts: &StationaryOptions) -> Result<StationaryResult> {
    let net = dm.network();
    if opts.restarts == 0
        || opts.n_list.is_empty()
        || opts.n_list.iter().any(|&n| n == 0 || n > opts.ref_n)
    {
        return Err(Error::invalid(
            "n-list",
            "needs restarts and sample sizes in 1..=ref_n",
        ));
    }
    if opts.ref_n >= 1 << 32 {
        return Err(Error::invalid("ref-n", "must stay below 2^32"));
    }
    if !(opts.step_size.is_finite() && opts.step_size > 0.0) {
        return Err(Error::invalid("step-size", "must be a positive real"));
    }

    // runs[r][i] = (distance, population_grad_sq, empirical_grad_sq) for n_list[i].
    let runs = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = trial_rng(opts.seed, r);
            let start = net.init_weights(rng.gen(), 0.5)?;
            let base = (r as u64) << 32;
            let samples = dm.samples(base..base + opts.ref_n as u64);
            let w_ref = descend(net, &start, &samples, opts, r)?;
            opts.n_list
                .iter()
                .map(|&n| {
                    let w_n = descend(net, &start, &samples[..n], opts, r)?;
                    let (_, g_pop) = batch_loss_and_gradient(net, &w_n, &samples)?;
                    let (_, g_emp) = batch_loss_and_gradient(net, &w_n, &samples[..n])?;
                    Ok((w_n.distance(&w_ref), g_pop.norm_sq(), 4.0 * g_emp.norm_sq()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let records: Vec<StationaryRecord> = opts
        .n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| StationaryRecord {
            n,
            distance: median(runs.iter().map(|run| run[i].0).collect()),
            population_grad_sq: median(runs.iter().map(|run| run[i].1).collect()),
            empirical_grad_sq: median(runs.iter().map(|run| run[i].2).collect()),
            restarts: opts.restarts,
            seed: opts.seed,
            ref_n: opts.ref_n,
        })
        .collect();
    let fit: Vec<&StationaryRecord> = records.iter().filter(|r| r.n < opts.ref_n).collect();
    let slope = loglog_slope(
        &fit.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &fit.iter().map(|r| r.distance).collect::<Vec<_>>(),
    );
    Ok(StationaryResult { records, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::a1;

    fn dm() -> DataModel {
        DataModel::new(Network::new(a1()).unwrap(), 11).unwrap()
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let d = dm();
        let net = d.network();
        let w = net.init_weights(3, 0.8).unwrap();
        let s = d.samples(0..130);
        let (f, g) = batch_loss_and_gradient(net, &w, &s).unwrap();
        let mut acc = ParamSet::from_vec(vec![0.0; w.len()]);
        let mut fl = 0.0;
        for x in &s {
            let (fi, gi) = net
                .loss_and_gradient(
                    &w,
                    &x.input,
                    &x.label,
                    Activation::Softmax,
                    GradientMode::Exact,
                )
                .unwrap();
            fl += fi;
            acc.axpy(1.0 / 130.0, &gi);
        }
        assert!((f - fl / 130.0).abs() < 1e-12);
        assert!(g.distance(&acc) < 1e-12);
    }

    #[test]
    fn convergence_is_deterministic_and_shrinks() {
        let d = dm();
        let opts = ConvergenceOptions {
            n_list: vec![16, 256],
            trials: 4,
            points: 3,
            ref_factor: 8,
            seed: 2,
            ..Default::default()
        };
        let a = convergence_experiment(&d, &opts).unwrap();
        let b = convergence_experiment(&d, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_ref, 2048);
        assert!(a.records[1].deviation_risk < a.records[0].deviation_risk);
        assert!(a.slope_risk.unwrap() < 0.0);
        assert!(a.bounds_hold());
    }

    #[test]
    fn full_sample_recovers_reference_point() {
        let d = dm();
        let opts = StationaryOptions {
            n_list: vec![32, 128],
            ref_n: 128,
            restarts: 2,
            steps: 5,
            seed: 1,
            ..Default::default()
        };
        let res = stationary_experiment(&d, &opts).unwrap();
        assert_eq!(res.records[1].distance, 0.0);
        assert!(res.records[0].distance > 0.0);
        assert!(stationary_experiment(
            &d,
            &StationaryOptions {
                n_list: vec![256],
                ..opts
            }
        )
        .is_err());
    }
}
