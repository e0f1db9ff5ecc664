use std::fmt::Write as _;

/// Outcome of one verification suite.
///
/// Hard checks pass iff `violations == 0`. Ratio checks also carry the
/// `ceiling` they were judged against and the number of `flagged` trials
/// (ratio above 1 but within the ceiling).
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub check: String,
    pub seed: u64,
    pub trials: usize,
    pub violations: usize,
    /// Largest empirical/bound ratio over all trials and quantities.
    pub worst_ratio: f64,
    pub ceiling: Option<f64>,
    pub flagged: usize,
    /// Per-quantity extreme values, in a fixed order.
    pub extremes: Vec<(String, f64)>,
    pub pass: bool,
}

impl VerifyReport {
    pub(crate) fn new(check: &str, seed: u64, trials: usize) -> Self {
        Self {
            check: check.to_string(),
            seed,
            trials,
            violations: 0,
            worst_ratio: 0.0,
            ceiling: None,
            flagged: 0,
            extremes: Vec::new(),
            pass: false,
        }
    }

    /// Records the largest value seen for `name`, keeping first-seen order.
    pub(crate) fn extreme(&mut self, name: &str, value: f64) {
        match self.extremes.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => {
                if value > *v || value.is_nan() {
                    *v = value;
                }
            }
            None => self.extremes.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.extremes
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    /// One `key=value` record on a single line, fields in a stable order.
    pub fn to_record(&self) -> String {
        let mut s = format!(
            "check={} seed={} trials={} violations={} worst_ratio={}",
            self.check,
            self.seed,
            self.trials,
            self.violations,
            num(self.worst_ratio)
        );
        if let Some(c) = self.ceiling {
            let _ = write!(s, " ceiling={} flagged={}", num(c), self.flagged);
        }
        for (name, v) in &self.extremes {
            let _ = write!(s, " {name}={}", num(*v));
        }
        let _ = write!(s, " pass={}", self.pass);
        s
    }
}

/// Fixed-format float: 6 significant digits in scientific notation.
pub(crate) fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6e}")
    } else {
        format!("{x}")
    }
}

/// Mean deviations at one sample size, with the bounds they are compared to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub n: usize,
    /// Mean over trials of `max_j |Q̃_n(w_j) - Q̂(w_j)|`.
    pub deviation_risk: f64,
    /// Mean over trials of `max_j ‖∇Q̃_n(w_j) - ∇Q̂(w_j)‖₂`.
    pub deviation_grad: f64,
    /// Risk bound at `n`; absent when `ρ <= 0`.
    pub bound_risk: Option<f64>,
    pub bound_grad: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Size of the sample standing in for the population.
    pub n_ref: usize,
}

impl ConvergenceRecord {
    pub const CSV_HEADER: &'static str =
        "n,deviation_risk,deviation_grad,bound_risk,bound_grad,trials,seed,n_ref";

    pub fn to_csv_row(&self) -> String {
        let opt = |o: Option<f64>| o.map(num).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            num(self.deviation_risk),
            num(self.deviation_grad),
            opt(self.bound_risk),
            opt(self.bound_grad),
            self.trials,
            self.seed,
            self.n_ref
        )
    }

    pub fn to_record(&self) -> String {
        let opt = |o: Option<f64>| o.map(num).unwrap_or_else(|| "na".into());
        format!(
            "record=convergence n={} deviation_risk={} deviation_grad={} bound_risk={} bound_grad={} trials={} seed={} n_ref={}",
            self.n,
            num(self.deviation_risk),
            num(self.deviation_grad),
            opt(self.bound_risk),
            opt(self.bound_grad),
            self.trials,
            self.seed,
            self.n_ref
        )
    }
}
