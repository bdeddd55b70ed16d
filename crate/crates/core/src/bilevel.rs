//! Bilevel trainers: the IGA response-gradient method and its baselines.
//!
//! The leader (generator) minimizes `F`; the follower (discriminator)
//! maximizes `f`. Four training methods share one outer-loop skeleton:
//!
//! * `alternating` — simultaneous ascent/descent on the direct gradients,
//!   the classic GAN update with no response term;
//! * `iga` — K inner ascent steps, then the rank-1 response correction
//!   built from two inner products (no solver state at all);
//! * `cg` — conjugate-gradient solve of the follower curvature system over
//!   finite-difference Hessian-vector products;
//! * `neumann` — truncated Neumann-series approximation of the same
//!   inverse-curvature product.
//!
//! All per-step solver allocations pass through [`WorkspaceMeter`] so the
//! methods' memory footprints can be compared honestly. Timing goes through
//! the [`Clock`] trait; the default [`NullClock`] reports zero, which keeps
//! training output byte-identical across machines.

use core::cell::Cell;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::adam::{adam_step_in_place, AdamState};
use crate::error::{Error, Result};
use crate::fd::{default_fd_step, hvp_fd};
use crate::mathx;
use crate::objectives::{Batch, BilevelObjective, Wants};
use crate::params::ParamVector;

pub const DEFAULT_INNER_STEPS: usize = 5;
pub const MAX_INNER_STEPS: usize = 100;
pub const DEFAULT_LR_G: f64 = 1e-3;
pub const DEFAULT_LR_D: f64 = 1e-4;
pub const DEFAULT_DAMPING: f64 = 1e-8;
pub const DEFAULT_CG_ITERS: usize = 10;
pub const DEFAULT_CG_TOL: f64 = 1e-6;
pub const DEFAULT_NEUMANN_ITERS: usize = 10;
/// Neumann step scale. The follower curvature is negative-semidefinite at a
/// follower optimum, so the series converges only for *negative* scales
/// (|1 + scale·λ| < 1 for the positive eigenvalues λ of the negated
/// curvature).
pub const DEFAULT_NEUMANN_SCALE: f64 = -0.01;

/// Monotonic time source. Implementations live with the caller; the core
/// crate only needs differences of `now_ms` readings.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero. Training with it reports `wall_ms = 0`,
/// which keeps CSV output byte-identical run to run.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

/// Live/peak accountant for hypergradient workspace.
///
/// Scope: the gradient result vectors the outer step holds, solver state
/// (CG direction/residual vectors, Neumann accumulators) and
/// finite-difference probe buffers. Tape internals, the inner follower
/// loop and argument-marshaling copies are outside the scope — they are
/// identical across methods and would only add a method-independent
/// constant. Interior mutability lets the solver and its operator closures
/// share one meter.
#[derive(Debug, Clone, Default)]
pub struct WorkspaceMeter {
    live_bytes: Cell<usize>,
    peak_bytes: Cell<usize>,
}

impl WorkspaceMeter {
    pub fn new() -> Self {
        WorkspaceMeter::default()
    }

    /// Records `n_f64` freshly held f64 slots.
    pub fn grab(&self, n_f64: usize) {
        let live = self.live_bytes.get() + 8 * n_f64;
        self.live_bytes.set(live);
        if live > self.peak_bytes.get() {
            self.peak_bytes.set(live);
        }
    }

    /// Records `n_f64` slots released before the step finished.
    pub fn release(&self, n_f64: usize) {
        self.live_bytes
            .set(self.live_bytes.get().saturating_sub(8 * n_f64));
    }

    /// Marks the end of an outer step; everything still live is dropped.
    pub fn step_done(&self) {
        self.live_bytes.set(0);
    }

    pub fn live_bytes(&self) -> usize {
        self.live_bytes.get()
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes.get()
    }

    /// Clears both counters (used between warmup and measured profiling).
    pub fn reset(&self) {
        self.live_bytes.set(0);
        self.peak_bytes.set(0);
    }
}

/// Outer-loop training method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Alternating,
    Iga,
    Cg { iters: usize, tol: f64 },
    Neumann { iters: usize, scale: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Alternating => "alternating",
            Method::Iga => "iga",
            Method::Cg { .. } => "cg",
            Method::Neumann { .. } => "neumann",
        }
    }

    pub fn default_cg() -> Method {
        Method::Cg {
            iters: DEFAULT_CG_ITERS,
            tol: DEFAULT_CG_TOL,
        }
    }

    pub fn default_neumann() -> Method {
        Method::Neumann {
            iters: DEFAULT_NEUMANN_ITERS,
            scale: DEFAULT_NEUMANN_SCALE,
        }
    }
}

/// Hyperparameters shared by every method.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Inner follower ascent steps per outer step (K).
    pub inner_steps: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Damping added to the response-scalar denominator.
    pub damping: f64,
    /// Evaluate the outer gradients on a fresh minibatch (slot K) rather
    /// than reusing the last inner-loop minibatch.
    pub fresh_outer_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inner_steps: DEFAULT_INNER_STEPS,
            lr_g: DEFAULT_LR_G,
            lr_d: DEFAULT_LR_D,
            damping: DEFAULT_DAMPING,
            fresh_outer_batch: true,
        }
    }
}

impl TrainConfig {
    /// Zero learning rates are allowed (they freeze the trajectory, which
    /// is occasionally useful in tests); negative values are not.
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps < 1 || self.inner_steps > MAX_INNER_STEPS {
            return Err(Error::Config(format!(
                "inner_steps must be in 1..={MAX_INNER_STEPS}, got {}",
                self.inner_steps
            )));
        }
        if self.lr_g < 0.0 || self.lr_d < 0.0 || self.damping < 0.0 {
            return Err(Error::Config(
                "learning rates and damping must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic minibatch provider. `slot` distinguishes draws within one
/// outer iteration (inner steps use slots `0..K`, the outer evaluation uses
/// slot `K`), so a batch is a pure function of `(iteration, slot)` and
/// trajectories replay exactly.
pub trait BatchSource {
    fn batch(&self, iteration: u64, slot: u32) -> Result<Batch>;
}

/// Batch source for objectives that ignore data (analytic toys).
#[derive(Debug, Clone, Copy, Default)]
pub struct NullBatchSource;

impl BatchSource for NullBatchSource {
    fn batch(&self, _iteration: u64, _slot: u32) -> Result<Batch> {
        Ok(Batch::empty())
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub gen: ParamVector,
    pub disc: ParamVector,
    pub opt_gen: AdamState,
    pub opt_disc: AdamState,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(gen: ParamVector, disc: ParamVector) -> TrainState {
        let opt_gen = AdamState::new(gen.layout.clone());
        let opt_disc = AdamState::new(disc.layout.clone());
        TrainState {
            gen,
            disc,
            opt_gen,
            opt_disc,
            iteration: 0,
        }
    }
}

/// One outer step's log record.
#[derive(Debug, Clone, Copy)]
pub struct TrajPoint {
    pub iteration: u64,
    /// Leader loss F at the outer evaluation point.
    pub leader: f64,
    /// Follower loss f at the outer evaluation point.
    pub follower: f64,
    /// ‖total leader gradient‖₂ (direct + response).
    pub grad_norm_g: f64,
    /// ‖∂f/∂θ_D‖₂ at the outer evaluation point.
    pub grad_norm_d: f64,
    /// The response inner-product ratio (zero for non-IGA methods).
    pub brc_scalar: f64,
    pub wall_ms: f64,
    /// True when the total leader gradient vanished exactly (the
    /// shared-objective cancellation) or the response denominator was zero.
    pub degenerate: bool,
}

/// The response coefficient `⟨∇_D f, ∇_D F⟩ / (⟨∇_D f, ∇_D f⟩ + damping)`.
/// The response gradient is `−coefficient · ∇_G f`.
///
/// A zero denominator (possible only with `damping = 0`) yields 0, i.e. no
/// response correction; callers can detect it via
/// [`response_gradient_from_parts`].
pub fn brc_scalar(f_disc: &[f64], big_f_disc: &[f64], damping: f64) -> f64 {
    let denom = mathx::dot(f_disc, f_disc) + damping;
    if denom == 0.0 {
        return 0.0;
    }
    mathx::dot(f_disc, big_f_disc) / denom
}

/// Response gradient assembled from raw gradient vectors.
#[derive(Debug, Clone)]
pub struct ResponseGradient {
    pub values: Vec<f64>,
    /// The inner-product ratio actually applied.
    pub scalar: f64,
    /// Set when `⟨∇_D f, ∇_D f⟩ + damping` was exactly zero.
    pub degenerate_denominator: bool,
}

/// Computes the rank-1 response gradient `−scalar · ∇_G f` from its parts.
/// Works on plain vectors so the algebra is testable without any network.
pub fn response_gradient_from_parts(
    f_gen: &[f64],
    f_disc: &[f64],
    big_f_disc: &[f64],
    damping: f64,
) -> ResponseGradient {
    let degenerate = mathx::dot(f_disc, f_disc) + damping == 0.0;
    let scalar = brc_scalar(f_disc, big_f_disc, damping);
    let values = if degenerate {
        vec![0.0; f_gen.len()]
    } else {
        f_gen.iter().map(|&v| -scalar * v).collect()
    };
    ResponseGradient {
        values,
        scalar,
        degenerate_denominator: degenerate,
    }
}

/// Direct leader gradient plus response correction, on plain vectors.
pub fn total_generator_gradient_from_parts(
    big_f_gen: &[f64],
    f_gen: &[f64],
    f_disc: &[f64],
    big_f_disc: &[f64],
    damping: f64,
) -> Vec<f64> {
    let r = response_gradient_from_parts(f_gen, f_disc, big_f_disc, damping);
    let mut out = big_f_gen.to_vec();
    for (o, v) in out.iter_mut().zip(&r.values) {
        *o += v;
    }
    out
}

/// Runs `steps` Adam ascent steps on the follower loss, batches drawn from
/// slots `0..steps` of `iteration`. The optimizer state persists across
/// calls, so successive outer iterations warm-start the follower.
/// Returns the last follower loss value seen.
pub fn inner_maximize(
    objective: &dyn BilevelObjective,
    gen: &ParamVector,
    disc: &mut ParamVector,
    opt_disc: &mut AdamState,
    lr_d: f64,
    steps: usize,
    batches: &dyn BatchSource,
    iteration: u64,
) -> Result<f64> {
    if steps < 1 {
        return Err(Error::Config("inner_steps must be at least 1".into()));
    }
    let mut last = 0.0;
    for k in 0..steps {
        let batch = batches.batch(iteration, k as u32)?;
        let e = objective.eval(gen, disc, &batch, Wants::follower_disc())?;
        last = e.follower_val;
        let grad = e.follower_grad_disc.expect("requested follower/disc gradient");
        adam_step_in_place(disc, &grad, opt_disc, lr_d, -1.0)?;
        if !disc.is_finite() {
            return Err(Error::NonFinite(format!(
                "follower parameters at outer iteration {iteration}, inner step {k}"
            )));
        }
    }
    Ok(last)
}

/// Outcome of a linear solve inside a hypergradient estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveInfo {
    pub iters_run: usize,
    pub converged: bool,
    /// CG hit a direction of non-positive curvature and returned early.
    pub breakdown: bool,
    /// Final residual norm relative to the right-hand side norm.
    pub residual_ratio: f64,
}

/// Conjugate gradients for `A x = b` with `A` symmetric positive definite,
/// available only through `apply_a`. Stops when `‖r‖ ≤ tol·‖b‖` or after
/// `iters` iterations. A direction of non-positive curvature ends the solve
/// early with the current iterate and `breakdown = true`.
///
/// The returned solution vector stays accounted on `meter`; the caller
/// releases it (or ends the step) when done.
pub fn cg_solve(
    apply_a: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    iters: usize,
    tol: f64,
    meter: &WorkspaceMeter,
) -> Result<(Vec<f64>, SolveInfo)> {
    let n = b.len();
    let b_norm = mathx::l2_norm(b);
    let mut info = SolveInfo::default();
    let mut x = vec![0.0; n];
    meter.grab(n);
    if b_norm == 0.0 {
        info.converged = true;
        return Ok((x, info));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    meter.grab(2 * n);
    let mut rs = mathx::dot(&r, &r);
    for _ in 0..iters {
        if mathx::sqrt(rs) <= tol * b_norm {
            info.converged = true;
            break;
        }
        let ap = apply_a(&p)?;
        meter.grab(n);
        let curvature = mathx::dot(&p, &ap);
        if curvature <= 0.0 {
            info.breakdown = true;
            meter.release(n);
            break;
        }
        let alpha = rs / curvature;
        mathx::axpy(alpha, &p, &mut x);
        mathx::axpy(-alpha, &ap, &mut r);
        meter.release(n);
        let rs_new = mathx::dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
        info.iters_run += 1;
    }
    if !info.converged && mathx::sqrt(rs) <= tol * b_norm {
        info.converged = true;
    }
    info.residual_ratio = mathx::sqrt(rs) / b_norm;
    meter.release(2 * n);
    Ok((x, info))
}

/// Truncated Neumann series `scale · Σ_{j<iters} (I − scale·H)^j r` for
/// `H⁻¹ r`, with `H` available through `apply_h`. Errors out if an iterate
/// norm exceeds 10·‖r‖ (series diverging — pick a smaller |scale|).
///
/// As with [`cg_solve`], the returned vector stays accounted on `meter`.
pub fn neumann_apply(
    apply_h: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    r: &[f64],
    iters: usize,
    scale: f64,
    meter: &WorkspaceMeter,
) -> Result<(Vec<f64>, SolveInfo)> {
    if iters < 1 {
        return Err(Error::Config("neumann iters must be at least 1".into()));
    }
    let n = r.len();
    let r_norm = mathx::l2_norm(r);
    let mut acc = r.to_vec();
    let mut v = r.to_vec();
    meter.grab(2 * n);
    let mut info = SolveInfo {
        iters_run: 1,
        ..SolveInfo::default()
    };
    for j in 1..iters {
        let hv = apply_h(&v)?;
        meter.grab(n);
        mathx::axpy(-scale, &hv, &mut v);
        meter.release(n);
        let v_norm = mathx::l2_norm(&v);
        if v_norm > 10.0 * r_norm {
            meter.release(2 * n);
            return Err(Error::Solver(format!(
                "neumann series diverging at term {j} (‖v‖ = {v_norm:.3e} vs ‖r‖ = {r_norm:.3e}); use a smaller |scale|"
            )));
        }
        for i in 0..n {
            acc[i] += v[i];
        }
        info.iters_run += 1;
    }
    for a in acc.iter_mut() {
        *a *= scale;
    }
    info.residual_ratio = mathx::l2_norm(&v) / mathx::max(r_norm, f64::MIN_POSITIVE);
    meter.release(n);
    Ok((acc, info))
}

/// Builds a follower-curvature Hessian-vector product operator at
/// `(gen, disc)` on `batch`: central finite differences of `∇_D f` along a
/// normalized direction, rescaled by linearity. The returned closure
/// reports its transient buffers (direction, probe point, two gradient
/// evaluations) to `meter` per call.
fn curvature_operator<'a>(
    objective: &'a dyn BilevelObjective,
    gen: &'a ParamVector,
    disc: &'a ParamVector,
    batch: &'a Batch,
    meter: &'a WorkspaceMeter,
) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    let h = default_fd_step(&disc.values);
    let layout = disc.layout.clone();
    move |v: &[f64]| {
        let n = v.len();
        let v_norm = mathx::l2_norm(v);
        if v_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        meter.grab(4 * n);
        let u: Vec<f64> = v.iter().map(|&x| x / v_norm).collect();
        let mut grad_fn = |vals: &[f64]| -> Result<Vec<f64>> {
            let p = ParamVector::from_values(layout.clone(), vals.to_vec())?;
            let e = objective.eval(gen, &p, batch, Wants::follower_disc())?;
            Ok(e.follower_grad_disc.expect("requested follower/disc gradient"))
        };
        let mut hv = hvp_fd(&mut grad_fn, &disc.values, &u, h)?;
        meter.release(4 * n);
        for x in hv.iter_mut() {
            *x *= v_norm;
        }
        Ok(hv)
    }
}

/// Cross-curvature term `(∂²f/∂θ_G∂θ_D) · dir` by a forward difference of
/// `∇_G f` along `dir` in follower space. The returned vector stays
/// accounted on `meter`.
fn cross_term_fd(
    objective: &dyn BilevelObjective,
    gen: &ParamVector,
    disc: &ParamVector,
    batch: &Batch,
    base_f_gen: &[f64],
    dir: &[f64],
    meter: &WorkspaceMeter,
) -> Result<Vec<f64>> {
    let dir_norm = mathx::l2_norm(dir);
    if dir_norm == 0.0 {
        meter.grab(base_f_gen.len());
        return Ok(vec![0.0; base_f_gen.len()]);
    }
    let h = default_fd_step(&disc.values);
    meter.grab(dir.len() + base_f_gen.len());
    let probe: Vec<f64> = disc
        .values
        .iter()
        .zip(dir)
        .map(|(&d, &u)| d + h * u / dir_norm)
        .collect();
    let p = ParamVector::from_values(disc.layout.clone(), probe)?;
    let e = objective.eval(gen, &p, batch, Wants::follower_gen())?;
    let mut out = e.follower_grad_gen.expect("requested follower/gen gradient");
    for (o, &b) in out.iter_mut().zip(base_f_gen) {
        *o = dir_norm * (*o - b) / h;
    }
    meter.release(dir.len());
    Ok(out)
}

/// Response gradient via conjugate gradients: solves the negated follower
/// curvature system for `B` with right-hand side `∇_D F`, then applies the
/// cross-curvature term along `B`. The returned vector stays accounted on
/// `meter` until the caller's step ends.
pub fn hypergrad_cg(
    objective: &dyn BilevelObjective,
    gen: &ParamVector,
    disc: &ParamVector,
    batch: &Batch,
    iters: usize,
    tol: f64,
    meter: &WorkspaceMeter,
) -> Result<(Vec<f64>, SolveInfo)> {
    if iters < 1 {
        return Err(Error::Config("cg iters must be at least 1".into()));
    }
    let base = objective.eval(
        gen,
        disc,
        batch,
        Wants {
            leader_disc: true,
            follower_gen: true,
            ..Wants::default()
        },
    )?;
    let rhs = base.leader_grad_disc.expect("requested leader/disc gradient");
    let f_gen = base.follower_grad_gen.expect("requested follower/gen gradient");
    meter.grab(rhs.len() + f_gen.len());
    let mut op = curvature_operator(objective, gen, disc, batch, meter);
    let mut negated = |v: &[f64]| -> Result<Vec<f64>> {
        let mut hv = op(v)?;
        for x in hv.iter_mut() {
            *x = -*x;
        }
        Ok(hv)
    };
    let (b_vec, info) = cg_solve(&mut negated, &rhs, iters, tol, meter)?;
    let out = cross_term_fd(objective, gen, disc, batch, &f_gen, &b_vec, meter)?;
    meter.release(b_vec.len() + rhs.len() + f_gen.len());
    Ok((out, info))
}

/// Response gradient via the truncated Neumann series (same target as
/// [`hypergrad_cg`], different solver).
pub fn hypergrad_neumann(
    objective: &dyn BilevelObjective,
    gen: &ParamVector,
    disc: &ParamVector,
    batch: &Batch,
    iters: usize,
    scale: f64,
    meter: &WorkspaceMeter,
) -> Result<(Vec<f64>, SolveInfo)> {
    let base = objective.eval(
        gen,
        disc,
        batch,
        Wants {
            leader_disc: true,
            follower_gen: true,
            ..Wants::default()
        },
    )?;
    let rhs = base.leader_grad_disc.expect("requested leader/disc gradient");
    let f_gen = base.follower_grad_gen.expect("requested follower/gen gradient");
    meter.grab(rhs.len() + f_gen.len());
    // Target B = −H⁻¹ ∇_D F, i.e. the series applied to r = −∇_D F.
    let r: Vec<f64> = rhs.iter().map(|&x| -x).collect();
    meter.grab(r.len());
    let mut op = curvature_operator(objective, gen, disc, batch, meter);
    let (b_vec, info) = neumann_apply(&mut op, &r, iters, scale, meter)?;
    let out = cross_term_fd(objective, gen, disc, batch, &f_gen, &b_vec, meter)?;
    meter.release(b_vec.len() + r.len() + rhs.len() + f_gen.len());
    Ok((out, info))
}

/// Single-owner training loop driver.
pub struct Trainer<'a> {
    pub objective: &'a dyn BilevelObjective,
    pub batches: &'a dyn BatchSource,
    pub method: Method,
    pub config: TrainConfig,
    pub state: TrainState,
    pub meter: WorkspaceMeter,
    clock: &'a dyn Clock,
}

impl<'a> Trainer<'a> {
    pub fn new(
        objective: &'a dyn BilevelObjective,
        batches: &'a dyn BatchSource,
        method: Method,
        config: TrainConfig,
        state: TrainState,
        clock: &'a dyn Clock,
    ) -> Result<Trainer<'a>> {
        config.validate()?;
        if let Method::Neumann { scale, .. } = method {
            if scale >= 0.0 {
                return Err(Error::Config(
                    "neumann scale must be negative for a convergent series".into(),
                ));
            }
        }
        Ok(Trainer {
            objective,
            batches,
            method,
            config,
            state,
            meter: WorkspaceMeter::new(),
            clock,
        })
    }

    fn outer_slot(&self) -> u32 {
        if self.config.fresh_outer_batch {
            self.config.inner_steps as u32
        } else {
            (self.config.inner_steps - 1) as u32
        }
    }

    /// One outer iteration; returns its log record.
    pub fn step(&mut self) -> Result<TrajPoint> {
        let t0 = self.clock.now_ms();
        let iter = self.state.iteration;
        let point = match self.method {
            Method::Alternating => self.step_alternating(iter)?,
            Method::Iga => self.step_iga(iter)?,
            Method::Cg { iters, tol } => self.step_solver(iter, SolverKind::Cg { iters, tol })?,
            Method::Neumann { iters, scale } => {
                self.step_solver(iter, SolverKind::Neumann { iters, scale })?
            }
        };
        if !self.state.gen.is_finite() || !self.state.disc.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after outer iteration {iter} ({})",
                self.method.name()
            )));
        }
        self.meter.step_done();
        self.state.iteration += 1;
        Ok(TrajPoint {
            wall_ms: self.clock.now_ms() - t0,
            ..point
        })
    }

    /// Simultaneous-gradient baseline: both gradients are taken at the
    /// current `(θ_G, θ_D)` before either parameter moves.
    fn step_alternating(&mut self, iter: u64) -> Result<TrajPoint> {
        let d_batch = self.batches.batch(iter, 0)?;
        let e_d = self
            .objective
            .eval(&self.state.gen, &self.state.disc, &d_batch, Wants::follower_disc())?;
        let g_slot = if self.config.fresh_outer_batch {
            self.config.inner_steps as u32
        } else {
            0
        };
        let g_batch = self.batches.batch(iter, g_slot)?;
        let e_g = self
            .objective
            .eval(&self.state.gen, &self.state.disc, &g_batch, Wants::leader_gen())?;
        let grad_d = e_d.follower_grad_disc.expect("requested follower/disc gradient");
        let grad_g = e_g.leader_grad_gen.expect("requested leader/gen gradient");
        self.meter.grab(grad_d.len() + grad_g.len());
        adam_step_in_place(
            &mut self.state.disc,
            &grad_d,
            &mut self.state.opt_disc,
            self.config.lr_d,
            -1.0,
        )?;
        adam_step_in_place(
            &mut self.state.gen,
            &grad_g,
            &mut self.state.opt_gen,
            self.config.lr_g,
            1.0,
        )?;
        Ok(TrajPoint {
            iteration: iter,
            leader: e_g.leader_val,
            follower: e_d.follower_val,
            grad_norm_g: mathx::l2_norm(&grad_g),
            grad_norm_d: mathx::l2_norm(&grad_d),
            brc_scalar: 0.0,
            wall_ms: 0.0,
            degenerate: false,
        })
    }

    fn step_iga(&mut self, iter: u64) -> Result<TrajPoint> {
        inner_maximize(
            self.objective,
            &self.state.gen,
            &mut self.state.disc,
            &mut self.state.opt_disc,
            self.config.lr_d,
            self.config.inner_steps,
            self.batches,
            iter,
        )?;
        let batch = self.batches.batch(iter, self.outer_slot())?;
        let e = self
            .objective
            .eval(&self.state.gen, &self.state.disc, &batch, Wants::all())?;
        let mut total = e.leader_grad_gen.expect("requested leader/gen gradient");
        let f_gen = e.follower_grad_gen.expect("requested follower/gen gradient");
        let f_disc = e.follower_grad_disc.expect("requested follower/disc gradient");
        let big_f_disc = e.leader_grad_disc.expect("requested leader/disc gradient");
        // Exactly four gradient vectors — the method's whole workspace.
        self.meter
            .grab(total.len() + f_gen.len() + f_disc.len() + big_f_disc.len());
        let denom_zero = mathx::dot(&f_disc, &f_disc) + self.config.damping == 0.0;
        let scalar = brc_scalar(&f_disc, &big_f_disc, self.config.damping);
        // total += −scalar · ∇_G f, folded in place: no fifth vector.
        mathx::axpy(-scalar, &f_gen, &mut total);
        let degenerate = denom_zero || total.iter().all(|&v| v == 0.0);
        adam_step_in_place(
            &mut self.state.gen,
            &total,
            &mut self.state.opt_gen,
            self.config.lr_g,
            1.0,
        )?;
        Ok(TrajPoint {
            iteration: iter,
            leader: e.leader_val,
            follower: e.follower_val,
            grad_norm_g: mathx::l2_norm(&total),
            grad_norm_d: mathx::l2_norm(&f_disc),
            brc_scalar: scalar,
            wall_ms: 0.0,
            degenerate,
        })
    }

    fn step_solver(&mut self, iter: u64, kind: SolverKind) -> Result<TrajPoint> {
        inner_maximize(
            self.objective,
            &self.state.gen,
            &mut self.state.disc,
            &mut self.state.opt_disc,
            self.config.lr_d,
            self.config.inner_steps,
            self.batches,
            iter,
        )?;
        let batch = self.batches.batch(iter, self.outer_slot())?;
        let e = self.objective.eval(
            &self.state.gen,
            &self.state.disc,
            &batch,
            Wants {
                leader_gen: true,
                follower_disc: true,
                ..Wants::default()
            },
        )?;
        let mut total = e.leader_grad_gen.expect("requested leader/gen gradient");
        let f_disc = e.follower_grad_disc.expect("requested follower/disc gradient");
        self.meter.grab(total.len() + f_disc.len());
        let (response, _info) = match kind {
            SolverKind::Cg { iters, tol } => hypergrad_cg(
                self.objective,
                &self.state.gen,
                &self.state.disc,
                &batch,
                iters,
                tol,
                &self.meter,
            )?,
            SolverKind::Neumann { iters, scale } => hypergrad_neumann(
                self.objective,
                &self.state.gen,
                &self.state.disc,
                &batch,
                iters,
                scale,
                &self.meter,
            )?,
        };
        mathx::axpy(1.0, &response, &mut total);
        adam_step_in_place(
            &mut self.state.gen,
            &total,
            &mut self.state.opt_gen,
            self.config.lr_g,
            1.0,
        )?;
        Ok(TrajPoint {
            iteration: iter,
            leader: e.leader_val,
            follower: e.follower_val,
            grad_norm_g: mathx::l2_norm(&total),
            grad_norm_d: mathx::l2_norm(&f_disc),
            brc_scalar: 0.0,
            wall_ms: 0.0,
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum SolverKind {
    Cg { iters: usize, tol: f64 },
    Neumann { iters: usize, scale: f64 },
}

/// Runs `iters` outer steps of `method` and returns the final state with
/// the full trajectory.
pub fn run_training(
    objective: &dyn BilevelObjective,
    batches: &dyn BatchSource,
    method: Method,
    config: TrainConfig,
    state: TrainState,
    iters: u64,
    clock: &dyn Clock,
) -> Result<(TrainState, Vec<TrajPoint>)> {
    let mut trainer = Trainer::new(objective, batches, method, config, state, clock)?;
    let mut traj = Vec::with_capacity(iters as usize);
    for _ in 0..iters {
        traj.push(trainer.step()?);
    }
    Ok((trainer.state, traj))
}

/// Convenience wrapper for the response-gradient method.
pub fn iga_train(
    objective: &dyn BilevelObjective,
    batches: &dyn BatchSource,
    config: TrainConfig,
    state: TrainState,
    iters: u64,
    clock: &dyn Clock,
) -> Result<(TrainState, Vec<TrajPoint>)> {
    run_training(objective, batches, Method::Iga, config, state, iters, clock)
}

/// Convenience wrapper for the simultaneous-gradient baseline.
pub fn alternating_train(
    objective: &dyn BilevelObjective,
    batches: &dyn BatchSource,
    config: TrainConfig,
    state: TrainState,
    iters: u64,
    clock: &dyn Clock,
) -> Result<(TrainState, Vec<TrajPoint>)> {
    run_training(
        objective,
        batches,
        Method::Alternating,
        config,
        state,
        iters,
        clock,
    )
}

/// Per-step cost measurement: `warmup` unmeasured steps, then `timed` steps
/// whose wall times are summarized. The meter is reset after warmup, so
/// `peak_workspace_bytes` covers only the measured steps.
#[derive(Debug, Clone, Copy)]
pub struct StepCost {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub peak_workspace_bytes: usize,
    pub steps_timed: usize,
}

pub fn step_cost_profile(
    trainer: &mut Trainer<'_>,
    warmup: usize,
    timed: usize,
) -> Result<StepCost> {
    if timed < 1 {
        return Err(Error::Config("need at least one timed step".into()));
    }
    for _ in 0..warmup {
        trainer.step()?;
    }
    trainer.meter.reset();
    let mut times = Vec::with_capacity(timed);
    for _ in 0..timed {
        times.push(trainer.step()?.wall_ms);
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite wall times"));
    let median_ms = if timed % 2 == 1 {
        times[timed / 2]
    } else {
        0.5 * (times[timed / 2 - 1] + times[timed / 2])
    };
    let mean_ms = times.iter().sum::<f64>() / timed as f64;
    Ok(StepCost {
        median_ms,
        mean_ms,
        peak_workspace_bytes: trainer.meter.peak_bytes(),
        steps_timed: timed,
    })
}
