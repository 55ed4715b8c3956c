//! Reference solvers used to validate the MPS code: exact dense evolution
//! of small systems and covariance-matrix evolution of quadratic models.

mod covariance;
mod dense;
mod sparse;

use ndarray::Array2;
use num_complex::Complex64 as C64;

pub use covariance::{covariance_evolve, CovarianceModel, Statistics};
pub use dense::{
    dense_channel, dense_evolve, dense_expect, dense_generator, dense_graph_state, dense_propagate, dense_purity,
    dense_trace, dense_unitary, density_from_state, DenseModel, DenseSpace, HILBERT_CAP, SUPER_CAP,
};
pub use sparse::Sparse;

use crate::error::{Error, Result};

/// Tolerance between successive step halvings.
pub const RK4_TOLERANCE: f64 = 1e-10;

fn rk4(rhs: &impl Fn(&Array2<C64>) -> Array2<C64>, x0: &Array2<C64>, steps: usize, h: f64) -> Array2<C64> {
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &(&k1 * (h / 2.0))));
        let k3 = rhs(&(&x + &(&k2 * (h / 2.0))));
        let k4 = rhs(&(&x + &(&k3 * h)));
        x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// RK4 over time `t` with steps of at most `dt`, halved until two
/// successive results agree within [`RK4_TOLERANCE`] (max-abs entry).
pub(crate) fn rk4_converged(
    rhs: impl Fn(&Array2<C64>) -> Array2<C64>,
    x0: &Array2<C64>,
    t: f64,
    dt: f64,
) -> Result<Array2<C64>> {
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if !(dt > 0.0 && t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("RK4 needs t, dt > 0"));
    }
    let mut steps = (t / dt).ceil().max(1.0) as usize;
    let mut prev = rk4(&rhs, x0, steps, t / steps as f64);
    for _ in 0..14 {
        steps *= 2;
        let next = rk4(&rhs, x0, steps, t / steps as f64);
        let diff = (&next - &prev).iter().map(|x| x.norm()).fold(0.0, f64::max);
        if !diff.is_finite() {
            return Err(Error::NonFinite("RK4 diverged".into()));
        }
        if diff <= RK4_TOLERANCE {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence(format!(
        "RK4 did not reach {RK4_TOLERANCE} at {steps} steps"
    )))
}
