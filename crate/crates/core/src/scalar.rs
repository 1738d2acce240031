//! One-dimensional root finding shared by the composite prox step and the
//! penalty f-step.
//!
//! Both reduce to finding `f ≥ 0` with
//!
//! ```text
//! G(f) = c0 + f + c2 · τ(f) = 0,   c2 ≥ 0,
//! ```
//!
//! where `τ` is a nondecreasing BPR cost, so `G` is strictly increasing. If
//! `G(0) ≥ 0` the answer is the boundary `f = 0`. Otherwise `f = −c0` is an
//! upper bracket because `G(−c0) = c2 τ(−c0) ≥ 0`.


use crate::network::CostParams;
use crate::{Error, Result};

pub(crate) const MAX_ITERATIONS: usize = 200;
pub(crate) const RESIDUAL_TOLERANCE: f64 = 1e-12;

/// Scale against which `|G(f)|` is compared.
pub(crate) fn residual_scale(c0: f64, c2: f64, params: &CostParams, f: f64) -> f64 {
    1.0f64.max(c0.abs()).max(f).max(c2 * params.cost_unchecked(f))
}

/// Root of `c0 + f + c2 τ(f)` on `f ≥ 0` for a BPR edge (boundary root `0`
/// when `G(0) ≥ 0`). Safeguarded Newton inside a shrinking bracket.
pub(crate) fn monotone_root(c0: f64, c2: f64, params: &CostParams, edge: usize) -> Result<f64> {
    let g = |f: f64| c0 + f + c2 * params.cost_unchecked(f);
    let g0 = g(0.0);
    if !g0.is_finite() {
        return Err(Error::ScalarNonConvergence { edge, iterations: 0 });
    }
    if g0 >= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = -c0;
    // Newton from the linearization at the lower end; converges from the
    // left for convex τ and is kept inside [lo, hi] otherwise.
    let mut f = (-g0 / (1.0 + c2 * params.cost_derivative(0.0))).min(hi);
    for it in 0..MAX_ITERATIONS {
        let val = g(f);
        let scale = residual_scale(c0, c2, params, f);
        if val.abs() <= RESIDUAL_TOLERANCE * scale {
            return Ok(f);
        }
        if val > 0.0 {
            hi = f;
        } else {
            lo = f;
        }
        if hi - lo <= f64::EPSILON * hi.max(1e-300) {
            // bracket collapsed to adjacent floats; nothing better exists
            let (vl, vh) = (g(lo).abs(), g(hi).abs());
            return Ok(if vl <= vh { lo } else { hi });
        }
        let slope = 1.0 + c2 * params.cost_derivative(f);
        let newton = f - val / slope;
        f = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if it + 1 == MAX_ITERATIONS {
            break;
        }
    }
    Err(Error::ScalarNonConvergence {
        edge,
        iterations: MAX_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_cost_root() {
        // −3 + f + (1 + f) = 0
        let p = CostParams::bpr(1.0, 1.0, 1.0, 1.0);
        assert_relative_eq!(monotone_root(-3.0, 1.0, &p, 0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn boundary_root() {
        let p = CostParams::bpr(1.0, 1.0, 1.0, 1.0);
        assert_eq!(monotone_root(-0.5, 1.0, &p, 0).unwrap(), 0.0);
    }

    #[test]
    fn quartic_root_residual() {
        let p = CostParams::bpr(2.0, 3.0, 0.15, 0.25);
        for &(c0, c2) in &[(-10.0, 1.0), (-1e4, 0.1), (-7.5, 3.0), (-1e-3, 1e-6)] {
            let f = monotone_root(c0, c2, &p, 0).unwrap();
            let r = c0 + f + c2 * p.cost(f).unwrap();
            assert!(r.abs() <= 1e-12 * residual_scale(c0, c2, &p, f), "{c0} {c2} {r}");
        }
    }

    #[test]
    fn steep_power_root() {
        let p = CostParams::bpr(1.0, 1.0, 1.0, 1.0 / 32.0);
        let f = monotone_root(-50.0, 1.0, &p, 0).unwrap();
        let r = -50.0 + f + p.cost(f).unwrap();
        assert!(r.abs() <= 1e-12 * residual_scale(-50.0, 1.0, &p, f));
    }
}
