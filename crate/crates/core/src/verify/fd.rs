use std::ops::Range;

use crate::error::Result;
use crate::model::{Gradient, Network, ParamSet};
use crate::ops::Activation;
use crate::tensor::{Matrix, Tensor3};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `½‖v-y‖²` with respect to every parameter.
pub fn fd_gradient(
    net: &Network,
    w: &ParamSet,
    input: &Tensor3,
    y: &[f64],
    head: Activation,
    h: f64,
) -> Result<Gradient> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = w.clone();
    let mut out = vec![0.0; w.len()];
    for (idx, g) in out.iter_mut().enumerate() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = net.sample_loss(&probe, input, y, head)?;
        probe.as_mut_slice()[idx] = orig - h;
        let minus = net.sample_loss(&probe, input, y, head)?;
        probe.as_mut_slice()[idx] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Ok(ParamSet::from_vec(out))
}

/// Central-difference Jacobian of a vector-valued `f` with respect to the
/// parameters in `coords`; column `c` is `∂f/∂w_{coords.start + c}`.
pub fn fd_jacobian(
    mut f: impl FnMut(&ParamSet) -> Result<Vec<f64>>,
    w: &ParamSet,
    coords: Range<usize>,
    h: f64,
) -> Result<Matrix> {
    let mut probe = w.clone();
    let mut columns = Vec::with_capacity(coords.len());
    for idx in coords {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = f(&probe)?;
        probe.as_mut_slice()[idx] = orig - h;
        let minus = f(&probe)?;
        probe.as_mut_slice()[idx] = orig;
        columns.push(
            plus.iter()
                .zip(&minus)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let rows = columns.first().map_or(0, Vec::len);
    let cols = columns.len();
    Ok(Matrix::from_col_major(rows, cols, columns.concat()))
}
