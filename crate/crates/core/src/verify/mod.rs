//! Randomized verification of the model and its bounds.
//!
//! Every trial draws from its own ChaCha stream seeded with
//! `master_seed ^ trial_index`, trials run in parallel, and results are
//! aggregated in trial-index order, so reports do not depend on scheduling.

mod checks;
mod data;
mod experiments;
mod fd;
mod report;

pub use checks::{
    check_jacobian_bounds, check_norm_bounds, gradient_check, gradient_check_with, hessian_ratio,
    hoeffding_tail, Analytic, HessianOptions,
};
pub use data::{DataModel, Sample};
pub use experiments::{
    convergence_experiment, loglog_slope, stationary_experiment, ConvergenceOptions,
    ConvergenceResult, StationaryOptions, StationaryRecord, StationaryResult,
};
pub use fd::{fd_gradient, fd_jacobian, FD_STEP};
pub use report::{ConvergenceRecord, VerifyReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG of one trial: keyed by `seed ^ trial`, on the stream numbered by
/// `seed` so that different master seeds never share trial streams.
pub(crate) fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial as u64);
    rng.set_stream(seed);
    rng
}
