//! Damped Newton inside the cone and the homotopy in `s` from the trivial
//! problem to the target one.
//!
//! The family is `f_s = s f + (1 - s)`, `A_s = s A - (1 - s) g / p`. At
//! `s = 0` the constant `u = 0` is an exact root because `M_p(I / p) = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::certify_background;
use crate::grid::{ScalarField, SymTensorField};
use crate::pde::{Problem, SparseLinearSystem};
use crate::scalar::Real;
use crate::sparse::{dense_lu_solve, gmres_ilu, relative_residual, GmresOptions};
use crate::trig::{TrigPoly, Wave};

/// Systems up to this many unknowns are solved by dense LU.
pub const DENSE_LIMIT: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Sup-norm of the residual at which the iteration stops.
    pub residual_tol: f64,
    pub min_damping: f64,
    pub cone_margin_floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            residual_tol: 1e-10,
            min_damping: 1e-6,
            cone_margin_floor: 1e-10,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("residual_tol", self.residual_tol)?;
        positive("min_damping", self.min_damping)?;
        positive("cone_margin_floor", self.cone_margin_floor)?;
        if self.residual_tol >= 1.0 {
            return Err(Error::Parameter("residual_tol must be below 1".into()));
        }
        if self.min_damping > 1.0 {
            return Err(Error::Parameter("min_damping must not exceed 1".into()));
        }
        Ok(())
    }
}

/// One line of the run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub s: f64,
    pub iter: usize,
    pub residual: f64,
    /// Accepted step length; zero for the initial state.
    pub damping: f64,
    pub cone_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearMethod {
    DenseLu,
    GmresIlu0,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveReport {
    pub method: LinearMethod,
    pub iterations: usize,
    pub rel_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Residual sup-norm at the initial state and after each accepted step.
    pub residual_history: Vec<f64>,
    pub final_cone_margin: f64,
    pub damping_used: Vec<f64>,
    pub converged: bool,
    pub linear_solves: Vec<LinearSolveReport>,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history
            .last()
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

fn linear_tolerance<T: Real>() -> f64 {
    1e-12f64.max(100.0 * T::epsilon().as_f64())
}

/// Solves `matrix x = rhs` to relative residual `1e-12` (or `100 eps` for
/// lower precision types).
pub fn linear_solve<T: Real>(system: &SparseLinearSystem<T>) -> Result<Vec<T>> {
    Ok(linear_solve_with_report(system)?.0)
}

pub fn linear_solve_with_report<T: Real>(
    system: &SparseLinearSystem<T>,
) -> Result<(Vec<T>, LinearSolveReport)> {
    let a = &system.matrix;
    let b = &system.rhs;
    if a.dim() != b.len() {
        return Err(Error::LinearSolver(format!(
            "matrix has {} rows, rhs has {}",
            a.dim(),
            b.len()
        )));
    }
    let tol = linear_tolerance::<T>();
    let (x, report) = if a.dim() <= DENSE_LIMIT {
        let mut x = dense_lu_solve(a, b)?;
        let mut rel = relative_residual(a, &x, b);
        let mut iterations = 1;
        if rel > tol {
            let ax = a.matvec(&x);
            let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
            let dx = dense_lu_solve(a, &r)?;
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
            rel = relative_residual(a, &x, b);
            iterations += 1;
        }
        (
            x,
            LinearSolveReport {
                method: LinearMethod::DenseLu,
                iterations,
                rel_residual: rel,
            },
        )
    } else {
        let (x, stats) = gmres_ilu(
            a,
            b,
            GmresOptions {
                rel_tol: tol,
                ..GmresOptions::default()
            },
        )?;
        let rel_residual = relative_residual(a, &x, b);
        (
            x,
            LinearSolveReport {
                method: LinearMethod::GmresIlu0,
                iterations: stats.iterations,
                rel_residual,
            },
        )
    };
    if !(report.rel_residual <= tol) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolver(format!(
            "relative residual {:e} above {tol:e} ({:?})",
            report.rel_residual, report.method
        )));
    }
    Ok((x, report))
}

/// Newton iteration on `problem` from `u0`.
pub fn newton_solve<T: Real>(
    problem: &Problem<T>,
    u0: &ScalarField<T>,
    opts: &NewtonOptions,
) -> Result<(ScalarField<T>, NewtonReport)> {
    newton_solve_logged(problem, u0, opts, 1.0, &mut |_| {})
}

/// [`newton_solve`] that reports every accepted state to `observer`, tagged
/// with the homotopy parameter `s`.
pub fn newton_solve_logged<T: Real>(
    problem: &Problem<T>,
    u0: &ScalarField<T>,
    opts: &NewtonOptions,
    s: f64,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<(ScalarField<T>, NewtonReport)> {
    opts.validate()?;
    let floor = T::lit(opts.cone_margin_floor);
    let mut u = u0.clone();
    let mut lin = problem.linearize_with_residual(&u)?;
    if !(lin.cone_margin > floor) {
        return Err(Error::ConeViolation {
            worst_sum: lin.cone_margin.as_f64(),
            point: None,
        });
    }
    let mut res = lin.residual.sup_norm.as_f64();
    let mut report = NewtonReport {
        iterations: 0,
        residual_history: vec![res],
        final_cone_margin: lin.cone_margin.as_f64(),
        damping_used: Vec::new(),
        converged: false,
        linear_solves: Vec::new(),
    };
    observer(&IterationRecord {
        s,
        iter: 0,
        residual: res,
        damping: 0.0,
        cone_margin: report.final_cone_margin,
    });
    while !(res <= opts.residual_tol) {
        if report.iterations == opts.max_iters {
            return Ok((u, report));
        }
        let (delta, lin_report) = linear_solve_with_report(&lin.system)?;
        report.linear_solves.push(lin_report);
        let delta = ScalarField::from_raw(delta);
        let mut alpha = 1.0f64;
        let accepted = loop {
            let trial = u.axpy(T::lit(alpha), &delta);
            match problem.residual_with_margin(&trial) {
                Ok((r, m)) if m > floor && r.sup_norm.as_f64() < res => break trial,
                Ok(_) | Err(Error::ConeViolation { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
            if alpha < opts.min_damping {
                return Err(Error::StepFailure {
                    iteration: report.iterations + 1,
                    residual: res,
                });
            }
        };
        u = accepted;
        lin = problem.linearize_with_residual(&u)?;
        res = lin.residual.sup_norm.as_f64();
        report.iterations += 1;
        report.residual_history.push(res);
        report.damping_used.push(alpha);
        report.final_cone_margin = lin.cone_margin.as_f64();
        observer(&IterationRecord {
            s,
            iter: report.iterations,
            residual: res,
            damping: alpha,
            cone_margin: report.final_cone_margin,
        });
    }
    report.converged = true;
    Ok((u, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Upper bound on attempted s-steps.
    pub max_steps: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            initial_step: 0.1,
            min_step: 1e-4,
            max_step: 0.25,
            max_steps: 10_000,
        }
    }
}

impl ContinuationOptions {
    pub fn validate(&self) -> Result<()> {
        self.newton.validate()?;
        let ok = self.min_step > 0.0
            && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step
            && self.max_step <= 1.0;
        if !ok {
            return Err(Error::Parameter(format!(
                "need 0 < min_step <= initial_step <= max_step <= 1, got {} / {} / {}",
                self.min_step, self.initial_step, self.max_step
            )));
        }
        Ok(())
    }
}

/// `C_{n,p}` with `C_{n,p} M_p(I) = 1`.
pub fn normalizing_constant(p: usize) -> f64 {
    1.0 / p as f64
}

/// Converged state of the `s`-problem.
#[derive(Clone, Debug)]
pub struct ContinuationState<T> {
    pub s: f64,
    /// s-step in force when this state was accepted.
    pub step: f64,
    pub u: ScalarField<T>,
    pub f_s: ScalarField<T>,
    pub a_s: SymTensorField<T>,
    pub converged: bool,
    pub report: NewtonReport,
}

impl<T: Real> ContinuationState<T> {
    pub fn record(&self) -> StepRecord {
        StepRecord {
            s: self.s,
            step: self.step,
            accepted: self.converged,
            newton_iterations: self.report.iterations,
            residual: self.report.final_residual(),
            cone_margin: self.report.final_cone_margin,
            failure: None,
        }
    }
}

/// Serializable summary of one attempted s-step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub s: f64,
    pub step: f64,
    pub accepted: bool,
    pub newton_iterations: usize,
    pub residual: f64,
    pub cone_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ContinuationOutcome<T> {
    pub u: ScalarField<T>,
    /// Accepted states, starting at `s = 0` and ending at `s = 1`.
    pub trace: Vec<ContinuationState<T>>,
    /// Every attempted step, accepted or not.
    pub attempts: Vec<StepRecord>,
}

impl<T: Real> ContinuationOutcome<T> {
    pub fn final_report(&self) -> &NewtonReport {
        &self.trace.last().expect("trace is never empty").report
    }

    pub fn total_newton_iterations(&self) -> usize {
        self.trace.iter().map(|s| s.report.iterations).sum()
    }
}

/// Continuation failure carrying the last accepted state.
#[derive(Debug)]
pub struct ContinuationError<T> {
    pub error: Error,
    pub last_good: Option<Box<ContinuationState<T>>>,
    pub attempts: Vec<StepRecord>,
}

impl<T> std::fmt::Display for ContinuationError<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<T: std::fmt::Debug> std::error::Error for ContinuationError<T> {}

impl<T> From<ContinuationError<T>> for Error {
    fn from(e: ContinuationError<T>) -> Self {
        e.error
    }
}

impl<T> From<Error> for ContinuationError<T> {
    fn from(error: Error) -> Self {
        Self {
            error,
            last_good: None,
            attempts: Vec::new(),
        }
    }
}

/// The `s`-member of the homotopy family. `s = 1` returns the target problem
/// unchanged.
pub fn homotopy_problem<T: Real>(problem: &Problem<T>, s: f64) -> Problem<T> {
    if s == 1.0 {
        return problem.clone();
    }
    let st = T::lit(s);
    let rest = T::one() - st;
    let c = T::lit(normalizing_constant(problem.p));
    Problem {
        geometry: problem.geometry.clone(),
        a_field: problem
            .a_field
            .lincomb(st, &problem.geometry.metric, -rest * c),
        f: problem.f.map(|v| st * v + rest),
        p: problem.p,
        t: problem.t,
    }
}

/// True when `f = 1` and `A = -g / p` exactly, so every member of the family
/// coincides with the target.
pub fn is_trivial_family<T: Real>(problem: &Problem<T>) -> bool {
    let c = T::lit(normalizing_constant(problem.p));
    problem.f.values().iter().all(|&v| v == T::one())
        && problem.a_field == problem.geometry.metric.scale(-c)
}

/// Checks the solvability hypotheses on the discrete data.
pub fn check_hypotheses<T: Real>(problem: &Problem<T>, margin: f64) -> Result<()> {
    if !(problem.t < T::one()) {
        return Err(Error::Parameter(format!(
            "t must satisfy t < 1, got {}",
            problem.t
        )));
    }
    let fmin = problem.f.min();
    if !(fmin > T::zero()) {
        return Err(Error::Parameter(format!(
            "f must be positive, minimum is {fmin}"
        )));
    }
    let cert = certify_background(
        &problem.geometry,
        &problem.a_field,
        problem.p,
        T::lit(margin),
    )?;
    if !cert.passed {
        return Err(Error::ConeViolation {
            worst_sum: cert.worst_margin,
            point: cert.violating_point,
        });
    }
    Ok(())
}

pub fn continuation_solve<T: Real>(
    problem: &Problem<T>,
    opts: &ContinuationOptions,
) -> Result<ContinuationOutcome<T>, ContinuationError<T>> {
    continuation_solve_logged(problem, opts, &mut |_| {})
}

pub fn continuation_solve_logged<T: Real>(
    problem: &Problem<T>,
    opts: &ContinuationOptions,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<ContinuationOutcome<T>, ContinuationError<T>> {
    opts.validate()?;
    check_hypotheses(problem, opts.newton.cone_margin_floor)?;

    let base = homotopy_problem(problem, 0.0);
    let (u, report) = newton_solve_logged(
        &base,
        &ScalarField::zeros(&problem.geometry.grid),
        &opts.newton,
        0.0,
        observer,
    )?;
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.final_residual(),
        }
        .into());
    }
    let mut trace = vec![ContinuationState {
        s: 0.0,
        step: 0.0,
        u,
        f_s: base.f,
        a_s: base.a_field,
        converged: true,
        report,
    }];
    let mut attempts = vec![trace[0].record()];

    let trivial = is_trivial_family(problem);
    let mut step = if trivial { 1.0 } else { opts.initial_step };
    let mut streak = 0usize;
    let mut s = 0.0f64;
    while s < 1.0 {
        if attempts.len() > opts.max_steps {
            return Err(ContinuationError {
                error: Error::ContinuationFailure {
                    last_s: s,
                    step,
                    reason: format!("exceeded {} attempted steps", opts.max_steps),
                },
                last_good: trace.pop().map(Box::new),
                attempts,
            });
        }
        let s_next = (s + step).min(1.0);
        let sub = homotopy_problem(problem, s_next);
        let warm = &trace.last().expect("trace is never empty").u;
        let failure = match newton_solve_logged(&sub, warm, &opts.newton, s_next, observer) {
            Ok((u_new, rep)) if rep.converged => {
                log::debug!(
                    "s = {s_next:.6}: {} Newton iterations, residual {:e}",
                    rep.iterations,
                    rep.final_residual()
                );
                let state = ContinuationState {
                    s: s_next,
                    step,
                    u: u_new,
                    f_s: sub.f,
                    a_s: sub.a_field,
                    converged: true,
                    report: rep,
                };
                attempts.push(state.record());
                trace.push(state);
                s = s_next;
                streak += 1;
                if streak >= 2 {
                    step = (2.0 * step).min(opts.max_step);
                    streak = 0;
                }
                None
            }
            Ok((_, rep)) => Some((
                format!("no convergence in {} iterations", rep.iterations),
                rep.iterations,
                rep.final_residual(),
            )),
            Err(e) => Some((e.to_string(), 0, f64::NAN)),
        };
        if let Some((reason, iters, residual)) = failure {
            log::debug!("s = {s_next:.6} rejected: {reason}");
            attempts.push(StepRecord {
                s: s_next,
                step,
                accepted: false,
                newton_iterations: iters,
                residual,
                cone_margin: f64::NAN,
                failure: Some(reason.clone()),
            });
            streak = 0;
            step = if trivial {
                opts.initial_step
            } else {
                step * 0.5
            };
            if step < opts.min_step {
                return Err(ContinuationError {
                    error: Error::ContinuationFailure {
                        last_s: s,
                        step,
                        reason,
                    },
                    last_good: trace.pop().map(Box::new),
                    attempts,
                });
            }
        }
    }
    Ok(ContinuationOutcome {
        u: trace.last().expect("trace is never empty").u.clone(),
        trace,
        attempts,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub label: String,
    pub converged: bool,
    pub newton_iterations: usize,
    pub residual: f64,
    pub distance_to_reference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub trials: Vec<TrialOutcome>,
    /// Largest sup-distance between any two converged trials.
    pub max_pairwise_distance: f64,
    pub all_converged: bool,
}

fn initial_guess<T: Real>(problem: &Problem<T>, k: usize, seed: u64) -> (String, ScalarField<T>) {
    let grid = &problem.geometry.grid;
    let n = grid.dim();
    if k % 2 == 1 {
        let sign = if (k / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
        let c = sign * 0.2 * k.div_ceil(2) as f64;
        return (
            format!("constant {c}"),
            ScalarField::constant(grid, T::lit(c)),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
    let mut poly = TrigPoly::constant(rng.gen_range(-0.1..0.1));
    for _ in 0..3 {
        let freq = (0..n).map(|_| rng.gen_range(-1..=1)).collect();
        let wave = if rng.gen_bool(0.5) {
            Wave::Cos
        } else {
            Wave::Sin
        };
        poly = poly.with_term(rng.gen_range(-0.02..0.02), wave, freq);
    }
    (format!("random smooth #{k}"), poly.sample(grid))
}

/// Solves from `trials` distinct starting points and compares the results.
///
/// Trial 0 is the continuation run from `u = 0`; the others are Newton runs
/// on the target problem from constants and seeded random trigonometric
/// perturbations.
pub fn uniqueness_probe<T: Real>(
    problem: &Problem<T>,
    opts: &ContinuationOptions,
    trials: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    let reference = continuation_solve(problem, opts)?;
    let ref_report = reference.final_report().clone();
    let mut solutions = vec![Some(reference.u.clone())];
    let mut outcomes = vec![TrialOutcome {
        label: "continuation from 0".into(),
        converged: true,
        newton_iterations: reference.total_newton_iterations(),
        residual: ref_report.final_residual(),
        distance_to_reference: 0.0,
        error: None,
    }];
    let others: Vec<(TrialOutcome, Option<ScalarField<T>>)> = (1..trials.max(1))
        .into_par_iter()
        .map(|k| {
            let (label, guess) = initial_guess(problem, k, seed);
            match newton_solve(problem, &guess, &opts.newton) {
                Ok((u, rep)) if rep.converged => (
                    TrialOutcome {
                        label,
                        converged: true,
                        newton_iterations: rep.iterations,
                        residual: rep.final_residual(),
                        distance_to_reference: u.sup_distance(&reference.u).as_f64(),
                        error: None,
                    },
                    Some(u),
                ),
                Ok((_, rep)) => (
                    TrialOutcome {
                        label,
                        converged: false,
                        newton_iterations: rep.iterations,
                        residual: rep.final_residual(),
                        distance_to_reference: f64::NAN,
                        error: Some("no convergence".into()),
                    },
                    None,
                ),
                Err(e) => (
                    TrialOutcome {
                        label,
                        converged: false,
                        newton_iterations: 0,
                        residual: f64::NAN,
                        distance_to_reference: f64::NAN,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    for (o, u) in others {
        outcomes.push(o);
        solutions.push(u);
    }
    let converged: Vec<&ScalarField<T>> = solutions.iter().flatten().collect();
    let mut max_pairwise_distance = 0.0f64;
    for i in 0..converged.len() {
        for j in (i + 1)..converged.len() {
            max_pairwise_distance =
                max_pairwise_distance.max(converged[i].sup_distance(converged[j]).as_f64());
        }
    }
    Ok(UniquenessReport {
        all_converged: outcomes.iter().all(|o| o.converged),
        trials: outcomes,
        max_pairwise_distance,
    })
}
