//! Finite-difference machinery: Hessian-vector products from a gradient
//! oracle, plus the gradient checker used throughout the test suites.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;

/// Default probe step for finite differences around `wrt`:
/// `1e-4 · (1 + ‖wrt‖∞)` balances truncation against round-off in `f64`.
pub fn default_fd_step(wrt: &[f64]) -> f64 {
    1e-4 * (1.0 + mathx::inf_norm(wrt))
}

/// Central-difference Hessian-vector product
/// `(∇f(wrt + step·v) − ∇f(wrt − step·v)) / (2·step)`,
/// accurate to O(step²). `grad_fn` must return the exact gradient at the
/// probe point.
pub fn hvp_fd(
    grad_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    wrt: &[f64],
    v: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if v.len() != wrt.len() {
        return Err(Error::Shape(alloc::format!(
            "hvp_fd: point has {} entries, direction {}",
            wrt.len(),
            v.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Config("hvp_fd: step must be positive".into()));
    }
    let mut probe = vec![0.0; wrt.len()];
    for i in 0..wrt.len() {
        probe[i] = wrt[i] + step * v[i];
    }
    let g_hi = grad_fn(&probe)?;
    for i in 0..wrt.len() {
        probe[i] = wrt[i] - step * v[i];
    }
    let g_lo = grad_fn(&probe)?;
    let mut out = g_hi;
    for i in 0..out.len() {
        out[i] = (out[i] - g_lo[i]) / (2.0 * step);
        if !out[i].is_finite() {
            return Err(Error::NonFinite(alloc::format!(
                "hvp_fd output entry {i}"
            )));
        }
    }
    Ok(out)
}

/// Central-difference gradient of a scalar function — the oracle against
/// which reverse-mode gradients are validated.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    at: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; at.len()];
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + step;
        let hi = f(&probe)?;
        probe[i] = at[i] - step;
        let lo = f(&probe)?;
        probe[i] = at[i];
        g[i] = (hi - lo) / (2.0 * step);
    }
    Ok(g)
}

/// Largest mixed absolute/relative deviation between a gradient and its
/// finite-difference reference: `max_i |a_i − b_i| / (1 + |b_i|)`.
pub fn max_grad_error(got: &[f64], want: &[f64]) -> f64 {
    debug_assert_eq!(got.len(), want.len());
    let mut worst = 0.0;
    for i in 0..got.len() {
        let e = mathx::abs(got[i] - want[i]) / (1.0 + mathx::abs(want[i]));
        if e > worst {
            worst = e;
        }
    }
    worst
}
