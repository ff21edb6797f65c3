//! Central finite-difference oracle for the reverse pass.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Denominator floor of [`relative_error`]; below it the error is absolute.
pub const REL_FLOOR: f64 = 1e-3;

/// Relative error with an absolute floor so near-zero gradients don't blow up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradient of the scalar `f(point)` from [`Tape::gradients`]
/// against `(f(x+h) − f(x−h)) / 2h`, element by element.
///
/// `f` records its computation on the tape it is given, starting from the
/// tracked input var, and returns the scalar loss var.
pub fn finite_diff_check<T, F>(f: F, point: &Tensor<T>, h: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let indices: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_at(f, point, h, &indices)
}

/// As [`finite_diff_check`] but perturbs only the listed flat indices.
pub fn finite_diff_check_at<T, F>(f: F, point: &Tensor<T>, h: f64, indices: &[usize]) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.variable(point.clone());
    let loss = f(&mut tape, x)?;
    let grads = tape.gradients(loss)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor<T>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.variable(p);
        let l = f(&mut t, v)?;
        Ok(t.value(l)[0].as_f64())
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for &i in indices {
        let mut plus = point.clone();
        plus.data_mut()[i] += T::lit(h);
        let mut minus = point.clone();
        minus.data_mut()[i] -= T::lit(h);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i].as_f64();
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        report.checked += 1;
    }
    Ok(report)
}
