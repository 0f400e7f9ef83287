//! Backtracking gradient ascent shared by the policy routines.

use crate::error::{Error, Result};
use crate::scalar::{self, Real};

#[derive(Debug, Clone)]
pub(crate) struct Ascent<T> {
    pub x: Vec<T>,
    pub steps: usize,
    pub grad_norm: T,
    pub trace: Vec<T>,
}

/// Maximizes `f` from `x0`. A trial step that lowers `f` is retried at half size;
/// the step doubles back toward `rate` after each accepted step. Stops at `max_steps`,
/// when the gradient norm reaches `grad_tolerance`, or when no halving helps.
pub(crate) fn gradient_ascent<T: Real>(
    what: &str,
    x0: Vec<T>,
    rate: T,
    max_steps: usize,
    grad_tolerance: T,
    mut f: impl FnMut(&[T]) -> T,
    mut grad: impl FnMut(&[T]) -> Vec<T>,
) -> Result<Ascent<T>> {
    let mut x = x0;
    let mut value = f(&x);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{what} objective at start")));
    }
    let mut trace = vec![value];
    let mut step = rate;
    let mut steps = 0;
    let mut grad_norm;
    loop {
        let g = grad(&x);
        grad_norm = scalar::norm(&g);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("{what} gradient at step {steps}")));
        }
        if steps >= max_steps || grad_norm <= grad_tolerance {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = x.clone();
            scalar::axpy(step, &g, &mut trial);
            let v = f(&trial);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{what} objective at step {steps}")));
            }
            if v >= value {
                x = trial;
                value = v;
                accepted = true;
                break;
            }
            step = step / T::lit(2.0);
        }
        if !accepted {
            break;
        }
        steps += 1;
        trace.push(value);
        step = (step * T::lit(2.0)).min(rate);
    }
    Ok(Ascent {
        x,
        steps,
        grad_norm,
        trace,
    })
}
