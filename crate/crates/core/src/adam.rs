//! The Adam update rule with bias correction.

use alloc::format;
use alloc::sync::Arc;

use crate::error::{Error, Result};
use crate::mathx;
use crate::params::{Layout, ParamVector};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Exponential-moving-average state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: ParamVector,
    pub second_moment: ParamVector,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(layout: Arc<Layout>) -> Self {
        AdamState {
            first_moment: ParamVector::zeros(layout.clone()),
            second_moment: ParamVector::zeros(layout),
            step_count: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPS,
        }
    }
}

/// One Adam step, returning updated parameters and state.
///
/// The returned parameters move opposite the gradient; to *ascend*, negate
/// the gradient first (see [`adam_step_in_place`] used by the trainers).
pub fn adam_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &AdamState,
    lr: f64,
) -> Result<(ParamVector, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    adam_step_in_place(&mut p, &grad.values, &mut s, lr, 1.0)?;
    Ok((p, s))
}

/// In-place Adam step on `params` using `grad_sign * grad` as the gradient.
///
/// `grad_sign = 1.0` descends, `-1.0` ascends. This is the hot path: no
/// allocation, single pass.
pub fn adam_step_in_place(
    params: &mut ParamVector,
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    grad_sign: f64,
) -> Result<()> {
    if grad.len() != params.len()
        || !params.same_layout(&state.first_moment)
        || !params.same_layout(&state.second_moment)
    {
        return Err(Error::Shape(format!(
            "adam: params {} / grad {} / moments {}",
            params.len(),
            grad.len(),
            state.first_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    // Bias corrections 1/(1-βᵗ), computed once per step.
    let c1 = 1.0 / (1.0 - powi(b1, t));
    let c2 = 1.0 / (1.0 - powi(b2, t));
    let m = &mut state.first_moment.values;
    let v = &mut state.second_moment.values;
    for i in 0..params.len() {
        let g = grad_sign * grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        params.values[i] -= lr * m_hat / (mathx::sqrt(v_hat) + state.epsilon);
    }
    Ok(())
}

fn powi(base: f64, mut exp: i32) -> f64 {
    // Exact repeated squaring; avoids std-only f64::powi under no_std.
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}
