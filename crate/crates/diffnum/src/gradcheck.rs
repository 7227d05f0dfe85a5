//! Central finite-difference gradient checking.
//!
//! The numeric side perturbs one parameter component at a time and re-runs a
//! caller-provided forward closure, so it stays independent of the reverse
//! pass it validates.

use crate::tensor::Tensor;
use crate::Real;

/// Default perturbation used throughout the test suites.
pub const DEFAULT_STEP: Real = 1e-5;

/// Relative-error floor: differences below this scale are treated as noise.
pub const DEFAULT_FLOOR: Real = 1e-6;

/// Numeric gradient of `forward` with respect to `param`, by central
/// differences. `forward` must be a pure function of the current parameter
/// values (re-seed any randomness inside it).
pub fn numeric_gradient(param: &Tensor, step: Real, mut forward: impl FnMut() -> Real) -> Vec<Real> {
    let base = param.to_vec();
    let mut grad = vec![0.0; base.len()];
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + step;
        param.set_values(&work).expect("same shape");
        let up = forward();
        work[i] = base[i] - step;
        param.set_values(&work).expect("same shape");
        let down = forward();
        work[i] = base[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    param.set_values(&base).expect("same shape");
    grad
}

/// Largest relative error between two gradients:
/// |a − n| / max(|a|, |n|, floor).
pub fn max_relative_error(analytic: &[Real], numeric: &[Real], floor: Real) -> Real {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, Real::max)
}

/// Compare the accumulated gradient of `param` against central differences of
/// `forward`. Returns the worst relative error, or a description of the
/// failure when it exceeds `tol`.
pub fn check_gradient(
    param: &Tensor,
    tol: Real,
    forward: impl FnMut() -> Real,
) -> Result<Real, String> {
    let analytic = param
        .grad()
        .unwrap_or_else(|| vec![0.0; param.numel()]);
    let numeric = numeric_gradient(param, DEFAULT_STEP, forward);
    let err = max_relative_error(&analytic, &numeric, DEFAULT_FLOOR);
    if err < tol {
        Ok(err)
    } else {
        let worst = analytic
            .iter()
            .zip(&numeric)
            .enumerate()
            .max_by(|(_, (a1, n1)), (_, (a2, n2))| {
                let e1 = (*a1 - *n1).abs() / a1.abs().max(n1.abs()).max(DEFAULT_FLOOR);
                let e2 = (*a2 - *n2).abs() / a2.abs().max(n2.abs()).max(DEFAULT_FLOOR);
                e1.partial_cmp(&e2).unwrap()
            })
            .map(|(i, (a, n))| format!("component {i}: analytic {a} vs numeric {n}"))
            .unwrap_or_default();
        Err(format!("relative error {err} exceeds {tol} ({worst})"))
    }
}
