//! Central finite-difference gradient checker.

use crate::numeric::{Scalar, Vector};

/// Per-coordinate comparison of an analytic gradient against central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport<T> {
    pub per_coord_rel_err: Vec<T>,
    pub max_rel_err: T,
    pub tol: T,
    pub passed: bool,
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate. The relative error denominator is floored at 1e-3 so
/// near-zero gradients are judged on absolute error.
pub fn finite_diff_check<T: Scalar, F: Fn(&Vector<T>) -> T>(
    f: F,
    x: &Vector<T>,
    analytic: &Vector<T>,
    step: T,
    tol: T,
) -> GradCheckReport<T> {
    assert_eq!(
        x.len(),
        analytic.len(),
        "analytic gradient length must match input"
    );
    let floor = T::from_f64_c(1e-3);
    let mut per_coord = Vec::with_capacity(x.len());
    let mut max_err = T::zero();
    let mut x_work = x.clone();
    for i in 0..x.len() {
        let orig = x_work[i];
        x_work[i] = orig + step;
        let f_plus = f(&x_work);
        x_work[i] = orig - step;
        let f_minus = f(&x_work);
        x_work[i] = orig;
        let fd = (f_plus - f_minus) / (step + step);
        let a = analytic[i];
        let denom = fd.abs().max(a.abs()).max(floor);
        let err = (fd - a).abs() / denom;
        if err > max_err {
            max_err = err;
        }
        per_coord.push(err);
    }
    GradCheckReport {
        per_coord_rel_err: per_coord,
        max_rel_err: max_err,
        tol,
        passed: max_err <= tol,
    }
}
