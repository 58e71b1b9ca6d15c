//! Central finite-difference gradient checker.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub passed: bool,
    pub max_rel_error: T,
    pub worst_index: usize,
    pub failures: usize,
    pub tol: T,
}

/// Compare `analytic_grad` against central differences of `f` at `point`.
///
/// Relative error per coordinate is `|a − n| / max(1e-8, |a| + |n|)`; the
/// check passes when the maximum over coordinates is below `tol`.
pub fn finite_diff_check<T, F>(
    mut f: F,
    analytic_grad: &[T],
    point: &[T],
    h: T,
    tol: T,
) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if analytic_grad.len() != point.len() {
        return Err(Error::dim(
            "finite_diff_check",
            point.len(),
            analytic_grad.len(),
        ));
    }
    if h <= T::zero() {
        return Err(Error::Config("finite_diff_check: h must be positive".into()));
    }
    let mut x = point.to_vec();
    let mut max_rel = T::zero();
    let mut worst = 0;
    let mut failures = 0;
    let floor = lit::<T>(1e-8);
    let two = lit::<T>(2.0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_check: non-finite evaluation at index {i}"
            )));
        }
        let numeric = (fp - fm) / (two * h);
        let a = analytic_grad[i];
        let rel = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
        if rel > tol {
            failures += 1;
        }
    }
    Ok(GradCheckReport {
        passed: failures == 0,
        max_rel_error: max_rel,
        worst_index: worst,
        failures,
        tol,
    })
}
