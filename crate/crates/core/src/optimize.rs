//! Numerical minimization over the complex plane shared by both
//! estimators: steepest descent with a monotone backtracking line search,
//! an exhaustive grid search used for cross-validation, and the analytic
//! gradients of both objectives.
//!
//! The line search backtracks from a trial step that is warm-started with
//! the Barzilai-Borwein ratio `s's / s'y` of the previous accepted move.
//! That adapts the step to the objective's local curvature, which differs
//! by orders of magnitude between the two objectives and across channel
//! draws; a fixed unit trial step wastes dozens of iterations on shallow
//! objectives.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::estimators::Method;
use crate::model::ObservationBatch;
use crate::{Error, Result};

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    /// Linear closed-form seed from the known symbols (default).
    ClosedForm,
    /// A fixed starting point.
    Point(Complex64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub initializer: Initializer,
    /// Stop when the gradient norm falls below this.
    pub grad_tolerance: f64,
    /// Accepted-step budget; exhausting it is reported, not an error.
    pub max_iterations: usize,
    /// Armijo sufficient-decrease fraction.
    pub backtrack_alpha: f64,
    /// Step shrink factor per backtrack.
    pub backtrack_beta: f64,
    /// Step for finite-difference gradient cross-checks.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            initializer: Initializer::ClosedForm,
            grad_tolerance: 1e-8,
            max_iterations: 500,
            backtrack_alpha: 0.3,
            backtrack_beta: 0.5,
            fd_step: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tolerance > 0.0 && self.grad_tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grad_tolerance must be positive and finite, got {}",
                self.grad_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.backtrack_alpha > 0.0 && self.backtrack_alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "backtrack_alpha must lie in (0, 1), got {}",
                self.backtrack_alpha
            )));
        }
        if !(self.backtrack_beta > 0.0 && self.backtrack_beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "backtrack_beta must lie in (0, 1), got {}",
                self.backtrack_beta
            )));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "fd_step must be positive and finite, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

/// Outcome counters of one descent run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    /// Accepted descent steps.
    pub iterations: usize,
    /// Total objective evaluations across all accepted line searches
    /// (one per trial step plus one per shrink).
    pub line_search_steps: usize,
    /// False only when the iteration budget ran out.
    pub converged: bool,
    /// Gradient norm at the final iterate.
    pub grad_norm: f64,
}

/// Minimize `objective` over the complex plane starting from `start`.
///
/// Convergence means either the gradient-norm tolerance was met or the
/// required Armijo decrease fell below the objective's floating-point
/// resolution (the iterate is stationary at double precision).  Exhausting
/// the iteration budget returns normally with `converged = false`.  A NaN
/// objective value or non-finite gradient aborts with the last finite
/// iterate; a `+inf` candidate merely shrinks the step.
pub fn steepest_descent<F, G>(
    objective: F,
    gradient: G,
    start: Complex64,
    config: &SolverConfig,
) -> Result<(Complex64, SolverStats)>
where
    F: Fn(Complex64) -> f64,
    G: Fn(Complex64) -> (f64, f64),
{
    config.validate()?;
    let mut u = start;
    let mut f = objective(u);
    if !f.is_finite() {
        return Err(Error::Diverged { last: u });
    }
    let mut ls_total = 0usize;
    let mut t_trial = 1.0_f64;
    let mut previous: Option<(Complex64, (f64, f64))> = None;

    for it in 0..config.max_iterations {
        let g = gradient(u);
        let gn2 = g.0 * g.0 + g.1 * g.1;
        let gn = gn2.sqrt();
        if !gn.is_finite() {
            return Err(Error::Diverged { last: u });
        }
        let done = |converged: bool| SolverStats {
            iterations: it,
            line_search_steps: ls_total,
            converged,
            grad_norm: gn,
        };
        if gn <= config.grad_tolerance {
            return Ok((u, done(true)));
        }
        if let Some((u_prev, g_prev)) = previous {
            let s = u - u_prev;
            let y = (g.0 - g_prev.0, g.1 - g_prev.1);
            let sty = s.re * y.0 + s.im * y.1;
            if sty > 1e-300 {
                t_trial = (s.norm_sqr() / sty).clamp(1e-12, 1e12);
            }
        }
        let mut t = t_trial;
        let mut evals_this_step = 1usize;
        loop {
            let required = config.backtrack_alpha * t * gn2;
            if required <= 2.0 * f64::EPSILON * (1.0 + f.abs()) {
                // No representable decrease is achievable any more.
                return Ok((u, done(true)));
            }
            let candidate = u - Complex64::new(t * g.0, t * g.1);
            let f_candidate = objective(candidate);
            if f_candidate.is_nan() {
                return Err(Error::Diverged { last: u });
            }
            if f_candidate <= f - required {
                previous = Some((u, g));
                u = candidate;
                f = f_candidate;
                ls_total += evals_this_step;
                t_trial = t;
                break;
            }
            t *= config.backtrack_beta;
            evals_this_step += 1;
        }
    }

    let g = gradient(u);
    let gn = (g.0 * g.0 + g.1 * g.1).sqrt();
    Ok((
        u,
        SolverStats {
            iterations: config.max_iterations,
            line_search_steps: ls_total,
            converged: false,
            grad_norm: gn,
        },
    ))
}

/// Central finite-difference gradient, for cross-checking analytic ones.
pub fn finite_difference_gradient<F>(objective: F, u: Complex64, h: f64) -> (f64, f64)
where
    F: Fn(Complex64) -> f64,
{
    let dre = objective(u + Complex64::new(h, 0.0)) - objective(u - Complex64::new(h, 0.0));
    let dim = objective(u + Complex64::new(0.0, h)) - objective(u - Complex64::new(0.0, h));
    (dre / (2.0 * h), dim / (2.0 * h))
}

/// Square search grid over the complex plane, centered so the center point
/// itself is on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub center: Complex64,
    pub half_width: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid step must be positive and finite, got {}",
                self.step
            )));
        }
        if !(self.half_width >= self.step && self.half_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid half_width must be finite and at least one step, got {}",
                self.half_width
            )));
        }
        if self.points_per_axis() < 9 {
            return Err(Error::InvalidConfig(format!(
                "grid must have at least 9 points per axis, got {}",
                self.points_per_axis()
            )));
        }
        if !self.center.is_finite() {
            return Err(Error::InvalidConfig("grid center must be finite".into()));
        }
        Ok(())
    }

    pub fn points_per_axis(&self) -> usize {
        2 * (self.half_width / self.step).floor() as usize + 1
    }
}

/// Exhaustively minimize `objective` over the grid.  Exact value ties are
/// broken toward smaller `|u|`, then smaller wrapped phase, so the result
/// is a deterministic function of the spec alone.
pub fn grid_search<F>(objective: F, spec: &GridSpec) -> Result<(Complex64, f64)>
where
    F: Fn(Complex64) -> f64,
{
    spec.validate()?;
    let m = (spec.half_width / spec.step).floor() as i64;
    let mut best: Option<(f64, f64, f64, Complex64)> = None;
    for i in -m..=m {
        for k in -m..=m {
            let u = spec.center
                + Complex64::new(i as f64 * spec.step, k as f64 * spec.step);
            let f = objective(u);
            if !f.is_finite() {
                continue;
            }
            let key = (f, u.norm(), crate::model::wrap_angle(u.arg()));
            let better = match &best {
                None => true,
                Some((bf, bn, bp, _)) => {
                    (key.0, key.1, key.2) < (*bf, *bn, *bp)
                }
            };
            if better {
                best = Some((key.0, key.1, key.2, u));
            }
        }
    }
    match best {
        Some((f, _, _, u)) => Ok((u, f)),
        None => Err(Error::Diverged { last: spec.center }),
    }
}

/// Three-stage refinement ladder used for cross-validating the descent
/// solver: a wide coarse sweep around the seed, then two nested fine grids
/// around the previous stage's argmin, ending at step 1e-3.
pub fn refinement_ladder<F>(objective: F, seed: Complex64) -> Result<(Complex64, f64)>
where
    F: Fn(Complex64) -> f64,
{
    let stages = [
        (3.0 * seed.norm().max(1.0), 0.05),
        (0.1, 0.005),
        (0.02, 0.001),
    ];
    let mut center = seed;
    let mut result = (seed, f64::INFINITY);
    for (half_width, step) in stages {
        let spec = GridSpec {
            center,
            half_width,
            step,
        };
        result = grid_search(&objective, &spec)?;
        center = result.0;
    }
    Ok(result)
}

fn envelope_terms(batch: &ObservationBatch, u: Complex64) -> (Vec<Complex64>, Vec<f64>, f64) {
    let amp = batch.config.amplification();
    let n = batch.len();
    let mut cleaned = Vec::with_capacity(n);
    let mut envelopes = Vec::with_capacity(n);
    let mut mean = 0.0;
    for i in 0..n {
        let w = batch.z[i] - amp * u * batch.t1[i];
        let e = w.norm();
        cleaned.push(w);
        envelopes.push(e);
        mean += e;
    }
    (cleaned, envelopes, mean / n as f64)
}

/// Gradient of the envelope sample variance `W_N(u)` with respect to
/// (Re u, Im u).  Samples whose residual is exactly zero contribute no
/// direction (the envelope is non-differentiable there) and are skipped.
fn envelope_variance_gradient(batch: &ObservationBatch, u: Complex64) -> (f64, f64) {
    let amp = batch.config.amplification();
    let n = batch.len();
    let (cleaned, envelopes, mean) = envelope_terms(batch, u);
    let mut dre = 0.0;
    let mut dim = 0.0;
    for i in 0..n {
        let e = envelopes[i];
        if e == 0.0 {
            continue;
        }
        let cross = batch.t1[i] * cleaned[i].conj();
        let de_re = -amp * cross.re / e;
        let de_im = amp * cross.im / e;
        let weight = envelopes[i] - mean;
        dre += weight * de_re;
        dim += weight * de_im;
    }
    let scale = 2.0 / (n as f64 - 1.0);
    (scale * dre, scale * dim)
}

/// Gradient of the full ML objective
/// `sum_i (e_i - mean)^2 / (sigma^2 c) + N ln c`, `c = A^2 |u| + 1`.
/// `radial` is the unit vector u/|u|, or (0, 0) at the origin where the
/// solver uses the zero subgradient of `|u|`.
fn ml_gradient_inner(batch: &ObservationBatch, u: Complex64, radial: (f64, f64)) -> (f64, f64) {
    let amp = batch.config.amplification();
    let sigma2 = batch.config.sigma2;
    let n = batch.len() as f64;
    let c = amp * amp * u.norm() + 1.0;
    let den = sigma2 * c;
    let (cleaned, envelopes, mean) = envelope_terms(batch, u);
    let mut m2 = 0.0;
    let mut s_re = 0.0;
    let mut s_im = 0.0;
    for i in 0..batch.len() {
        let e = envelopes[i];
        let centered = e - mean;
        m2 += centered * centered;
        if e == 0.0 {
            continue;
        }
        let cross = batch.t1[i] * cleaned[i].conj();
        s_re += centered * (-amp * cross.re / e);
        s_im += centered * (amp * cross.im / e);
    }
    let dc = amp * amp;
    let grad = |ds: f64, k: f64| {
        2.0 * ds / den - m2 * sigma2 * dc * k / (den * den) + n * dc * k / c
    };
    (grad(s_re, radial.0), grad(s_im, radial.1))
}

/// Analytic gradient of the selected objective at `u`:
/// the envelope sample variance for [`Method::Msev`], the full
/// log-likelihood objective for [`Method::Ml`].
///
/// The ML objective contains `|u|` and is not differentiable at the
/// origin; asking for its gradient there is an error.  (Inside the solver
/// the origin is handled with the zero subgradient instead.)
pub fn analytic_gradient(
    batch: &ObservationBatch,
    u: Complex64,
    method: Method,
) -> Result<(f64, f64)> {
    batch.validate()?;
    if batch.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: batch.len(),
        });
    }
    match method {
        Method::Msev => Ok(envelope_variance_gradient(batch, u)),
        Method::Ml => {
            let r = u.norm();
            if r < 1e-12 {
                return Err(Error::SingularPoint);
            }
            Ok(ml_gradient_inner(batch, u, (u.re / r, u.im / r)))
        }
    }
}

/// Gradient closure used by the solver: same as [`analytic_gradient`] but
/// with the subgradient convention at the ML objective's origin.
pub(crate) fn solver_gradient(batch: &ObservationBatch, u: Complex64, method: Method) -> (f64, f64) {
    match method {
        Method::Msev => envelope_variance_gradient(batch, u),
        Method::Ml => {
            let r = u.norm();
            let radial = if r < 1e-12 { (0.0, 0.0) } else { (u.re / r, u.im / r) };
            ml_gradient_inner(batch, u, radial)
        }
    }
}
