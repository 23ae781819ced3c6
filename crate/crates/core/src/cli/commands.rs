use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{
    Background, Config, ManufacturedMode, ProblemSpec, ScalarSpec, TensorSpec, MAX_DIM,
};
use super::CliError;
use crate::error::Error;
use crate::estimates::{
    check_solution, product_bound, property_sweep_with, SweepReport, ViolationSample,
};
use crate::geometry::{certify_background, isotropic_field, CertificationReport, GeometrySetup};
use crate::grid::{Grid, ScalarField};
use crate::io;
use crate::mpoly::EigenSpectrum;
use crate::pde::{manufactured_rhs, manufactured_rhs_continuum, Problem};
use crate::solver::{continuation_solve_logged, ContinuationOutcome, IterationRecord, StepRecord};
use crate::trig::TrigPoly;
use crate::{Field64, Problem64};

pub struct Context {
    pub config: Config,
    /// Directory relative to which config paths are resolved.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.or(self.config.seed).unwrap_or(0)
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::io)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn io_err(e: Error) -> CliError {
    match e {
        Error::Io(_) => CliError::io(e),
        other => CliError::validation(other),
    }
}

/// Aligned two-column table.
pub fn format_table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

/// Problem assembled from a configuration.
pub struct Built {
    pub problem: Problem64,
    pub u_star: Option<Field64>,
}

fn require_problem(cfg: &Config) -> Result<&ProblemSpec, CliError> {
    cfg.problem
        .as_ref()
        .ok_or_else(|| CliError::validation("configuration has no [problem] section"))
}

fn validate_spec(spec: &ProblemSpec) -> Result<(), CliError> {
    if !(3..=MAX_DIM).contains(&spec.n) {
        return Err(CliError::validation(format!(
            "n must lie in 3..={MAX_DIM}, got {}",
            spec.n
        )));
    }
    if spec.p == 0 || spec.p > spec.n {
        return Err(CliError::validation(format!(
            "p must lie in 1..=n, got p = {}",
            spec.p
        )));
    }
    if !(spec.t < 1.0) {
        return Err(CliError::validation(format!(
            "t = {} violates the hypothesis t < 1 under which solutions exist",
            spec.t
        )));
    }
    if spec.grid.len() != spec.n {
        return Err(CliError::validation(format!(
            "grid has {} axes but n = {}",
            spec.grid.len(),
            spec.n
        )));
    }
    Ok(())
}

fn sample_scalar(ctx: &Context, spec: &ScalarSpec, grid: &Grid) -> Result<Field64, CliError> {
    match spec {
        ScalarSpec::Constant(c) => Ok(ScalarField::constant(grid, *c)),
        ScalarSpec::Trig(p) => {
            p.check_dim(grid.dim()).map_err(CliError::validation)?;
            Ok(p.sample(grid))
        }
        ScalarSpec::File { file } => io::read_scalar(&ctx.path(file), grid).map_err(io_err),
    }
}

/// Builds the problem on `shape` (or the configured grid).
pub fn build_problem(ctx: &Context, shape: Option<Vec<usize>>) -> Result<Built, CliError> {
    let spec = require_problem(&ctx.config)?;
    validate_spec(spec)?;
    let grid =
        Grid::new(shape.unwrap_or_else(|| spec.grid.clone())).map_err(CliError::validation)?;
    let geometry = match &spec.background {
        Background::Flat => GeometrySetup::build_flat(&grid, spec.t),
        Background::ConformalFlat { phi } => {
            phi.check_dim(spec.n).map_err(CliError::validation)?;
            GeometrySetup::build_conformal_flat(&grid, &phi.sample(&grid), spec.t)
        }
        Background::Prescribed { metric_file } => io::read_tensor(&ctx.path(metric_file), &grid)
            .and_then(|m| GeometrySetup::from_metric(&grid, m, spec.t)),
    }
    .map_err(io_err)?;
    let a_field = match &spec.tensor {
        TensorSpec::Geometric => geometry.modified_schouten().map_err(CliError::validation)?,
        TensorSpec::Isotropic { level } => {
            isotropic_field(&geometry, &sample_scalar(ctx, level, &grid)?).scale(-1.0)
        }
        TensorSpec::File { path } => io::read_tensor(&ctx.path(path), &grid).map_err(io_err)?,
    };
    let mut u_star = None;
    let f = match (&ctx.config.manufactured, &spec.f) {
        (Some(m), _) => {
            m.u_star.check_dim(spec.n).map_err(CliError::validation)?;
            let us: Field64 = m.u_star.sample(&grid);
            let f = match m.mode {
                ManufacturedMode::Discrete => {
                    manufactured_rhs(&us, &geometry, &a_field, spec.p, spec.t)
                }
                ManufacturedMode::Continuum => continuum_rhs(spec, &grid, &m.u_star)?,
            }
            .map_err(|e| {
                CliError::validation(format!("manufactured solution is not admissible: {e}"))
            })?;
            u_star = Some(us);
            f
        }
        (None, Some(fs)) => sample_scalar(ctx, fs, &grid)?,
        (None, None) => {
            return Err(CliError::validation(
                "[problem] needs f unless [manufactured] is given",
            ))
        }
    };
    let fmin = f.min();
    if !(fmin > 0.0) {
        return Err(CliError::validation(format!(
            "f must be positive everywhere, minimum sample is {fmin}"
        )));
    }
    let problem = Problem::new(geometry, a_field, f, spec.p).map_err(CliError::validation)?;
    Ok(Built { problem, u_star })
}

fn continuum_rhs(
    spec: &ProblemSpec,
    grid: &Grid,
    u_star: &TrigPoly,
) -> Result<crate::Result<Field64>, CliError> {
    let phi = match &spec.background {
        Background::Flat => None,
        Background::ConformalFlat { phi } => Some(phi),
        Background::Prescribed { .. } => {
            return Err(CliError::validation(
                "continuum manufactured mode needs a flat or conformally flat background",
            ))
        }
    };
    let level = match &spec.tensor {
        TensorSpec::Isotropic { level } => level.as_trig(),
        _ => None,
    }
    .ok_or_else(|| {
        CliError::validation("continuum manufactured mode needs an analytic isotropic tensor")
    })?;
    Ok(manufactured_rhs_continuum(
        grid, phi, &level, u_star, spec.p, spec.t,
    ))
}

fn certify(ctx: &Context, problem: &Problem64) -> Result<CertificationReport, CliError> {
    certify_background(
        &problem.geometry,
        &problem.a_field,
        problem.p,
        ctx.config.solver.newton.cone_margin_floor,
    )
    .map_err(CliError::validation)
}

pub fn run_certify(ctx: &Context) -> Result<(), CliError> {
    let built = build_problem(ctx, None)?;
    let report = certify(ctx, &built.problem)?;
    write_json(&ctx.out("certification.json"), &report)?;
    let rows = vec![
        ("p".to_string(), report.p.to_string()),
        (
            "worst p-sum of -A".to_string(),
            format!("{:.6e}", report.worst_margin),
        ),
        (
            "worst point".to_string(),
            format!("{} {:?}", report.worst_point, report.worst_coords),
        ),
        (
            "required margin".to_string(),
            format!("{:e}", report.margin),
        ),
        ("certified".to_string(), report.passed.to_string()),
    ];
    print!("{}", format_table(&rows));
    if !report.passed {
        return Err(CliError::certification(format!(
            "background is not in the p-cone: worst p-sum {:e} at grid point {}",
            report.worst_margin, report.worst_point
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceFile<'a> {
    attempts: &'a [StepRecord],
    accepted: Vec<StepRecord>,
}

#[derive(Serialize)]
struct SolveSummary {
    accepted_steps: usize,
    rejected_steps: usize,
    newton_iterations: usize,
    final_residual: f64,
    final_cone_margin: f64,
    c0_lower: f64,
    c0_upper: f64,
    inf_u: f64,
    sup_u: f64,
    c0_check: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    manufactured_error: Option<f64>,
}

fn solve_with_log(
    ctx: &Context,
    problem: &Problem64,
    log_name: &str,
) -> Result<ContinuationOutcome<f64>, CliError> {
    let log_path = ctx.out(log_name);
    let file = File::create(&log_path)
        .map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let mut write_err = None;
    let mut observer = |r: &IterationRecord| {
        if write_err.is_none() {
            let line = serde_json::to_string(r).expect("records serialize");
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
    };
    let result = continuation_solve_logged(problem, &ctx.config.solver, &mut observer);
    if let Some(e) = write_err {
        return Err(CliError::io(format!("{}: {e}", log_path.display())));
    }
    log.flush()
        .map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    result.map_err(|e| {
        if let Some(last) = &e.last_good {
            let _ = io::write_scalar_csv(&ctx.out("u_last_good.csv"), &last.u);
            let _ = write_json(
                &ctx.out("trace.json"),
                &TraceFile {
                    attempts: &e.attempts,
                    accepted: vec![last.record()],
                },
            );
        }
        match e.error {
            Error::Parameter(_) | Error::ConeViolation { point: Some(_), .. }
                if e.attempts.is_empty() =>
            {
                CliError::certification(e.error)
            }
            other => CliError::solver(other),
        }
    })
}

pub fn run_solve(ctx: &Context) -> Result<(), CliError> {
    let built = build_problem(ctx, None)?;
    let problem = &built.problem;
    let cert = certify(ctx, problem)?;
    write_json(&ctx.out("certification.json"), &cert)?;
    if !cert.passed {
        return Err(CliError::certification(format!(
            "background is not in the p-cone: worst p-sum {:e} at grid point {}",
            cert.worst_margin, cert.worst_point
        )));
    }
    let out = solve_with_log(ctx, problem, "run.jsonl")?;
    let grid = &problem.geometry.grid;
    io::write_scalar_csv(&ctx.out("u.csv"), &out.u).map_err(io_err)?;
    io::write_scalar_binary(&ctx.out("u.pcrv"), grid, &out.u).map_err(io_err)?;
    write_json(
        &ctx.out("trace.json"),
        &TraceFile {
            attempts: &out.attempts,
            accepted: out.trace.iter().map(|s| s.record()).collect(),
        },
    )?;
    let est = check_solution(&out.u, problem).map_err(CliError::solver)?;
    write_json(&ctx.out("estimates.json"), &est)?;
    if ctx.config.output.dump_jacobian {
        let sys = problem.linearize(&out.u).map_err(CliError::solver)?;
        let path = ctx.out("jacobian.coo");
        let file =
            File::create(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        sys.matrix
            .write_coordinate(BufWriter::new(file))
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    let final_rep = out.final_report();
    let summary = SolveSummary {
        accepted_steps: out.trace.len() - 1,
        rejected_steps: out.attempts.iter().filter(|a| !a.accepted).count(),
        newton_iterations: out.total_newton_iterations(),
        final_residual: final_rep.final_residual(),
        final_cone_margin: final_rep.final_cone_margin,
        c0_lower: est.bounds.lower,
        c0_upper: est.bounds.upper,
        inf_u: est.inf_u,
        sup_u: est.sup_u,
        c0_check: est.bound_satisfied,
        manufactured_error: built.u_star.as_ref().map(|us| out.u.sup_distance(us)),
    };
    write_json(&ctx.out("summary.json"), &summary)?;
    let mut rows = vec![
        (
            "s-steps accepted".to_string(),
            summary.accepted_steps.to_string(),
        ),
        (
            "s-steps rejected".to_string(),
            summary.rejected_steps.to_string(),
        ),
        (
            "Newton iterations".to_string(),
            summary.newton_iterations.to_string(),
        ),
        (
            "final residual".to_string(),
            format!("{:.3e}", summary.final_residual),
        ),
        (
            "final cone margin".to_string(),
            format!("{:.6e}", summary.final_cone_margin),
        ),
        (
            "C0 bounds".to_string(),
            format!("[{:.6e}, {:.6e}]", summary.c0_lower, summary.c0_upper),
        ),
        (
            "u range".to_string(),
            format!("[{:.6e}, {:.6e}]", summary.inf_u, summary.sup_u),
        ),
        (
            "C0 check".to_string(),
            if summary.c0_check { "pass" } else { "FAIL" }.to_string(),
        ),
    ];
    if let Some(e) = summary.manufactured_error {
        rows.push(("sup |u - u*|".to_string(), format!("{e:.3e}")));
    }
    let table = format_table(&rows);
    write_text(&ctx.out("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceRow {
    points: usize,
    h: f64,
    sup_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<f64>,
    newton_iterations: usize,
}

pub fn run_convergence(ctx: &Context) -> Result<(), CliError> {
    let spec = require_problem(&ctx.config)?;
    let levels = ctx
        .config
        .convergence
        .as_ref()
        .map(|c| c.resolutions.clone())
        .unwrap_or_default();
    if levels.len() < 2 {
        return Err(CliError::validation(
            "a convergence study needs at least two resolutions",
        ));
    }
    let mut manufactured = ctx.config.manufactured.clone().ok_or_else(|| {
        CliError::validation("a convergence study needs a [manufactured] section")
    })?;
    manufactured.mode = ManufacturedMode::Continuum;
    let sub = Context {
        config: Config {
            manufactured: Some(manufactured),
            ..ctx.config.clone()
        },
        base_dir: ctx.base_dir.clone(),
        out_dir: ctx.out_dir.clone(),
        seed: ctx.seed,
    };
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &pts in &levels {
        let built = build_problem(&sub, Some(vec![pts; spec.n]))?;
        let cert = certify(&sub, &built.problem)?;
        if !cert.passed {
            return Err(CliError::certification(format!(
                "background not certified at {pts} points per axis"
            )));
        }
        let out = solve_with_log(&sub, &built.problem, &format!("run_{pts}.jsonl"))?;
        let err = out
            .u
            .sup_distance(built.u_star.as_ref().expect("manufactured"));
        let order = rows
            .last()
            .map(|prev| (prev.sup_error / err).ln() / (pts as f64 / prev.points as f64).ln());
        rows.push(ConvergenceRow {
            points: pts,
            h: built.problem.geometry.grid.h_max(),
            sup_error: err,
            order,
            newton_iterations: out.total_newton_iterations(),
        });
    }
    write_json(&ctx.out("convergence.json"), &rows)?;
    let mut table = format!(
        "{:>8}  {:>12}  {:>12}  {:>7}\n",
        "points", "h", "sup error", "order"
    );
    for r in &rows {
        let order = r.order.map_or("-".to_string(), |o| format!("{o:.3}"));
        table.push_str(&format!(
            "{:>8}  {:>12.5e}  {:>12.5e}  {:>7}\n",
            r.points, r.h, r.sup_error, order
        ));
    }
    write_text(&ctx.out("convergence.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    sweeps: Vec<SweepReport>,
    product_equality_max_gap: f64,
    ellipticity_min_eigenvalue: Option<f64>,
    total_violations: usize,
}

pub fn run_verify(ctx: &Context) -> Result<(), CliError> {
    let v = &ctx.config.verify;
    let seed = ctx.seed();
    if v.dims.iter().any(|&n| !(3..=MAX_DIM).contains(&n)) {
        return Err(CliError::validation(format!(
            "verify dims must lie in 3..={MAX_DIM}"
        )));
    }
    if v.t_values.iter().any(|&t| !(t <= 1.0)) {
        return Err(CliError::validation("verify t_values must not exceed 1"));
    }
    let mut sweeps = Vec::new();
    let mut gap = 0.0f64;
    let mut first: Option<ViolationSample> = None;
    for &n in &v.dims {
        for p in 1..=n {
            let eq = product_bound(&EigenSpectrum::uniform(n, 1.0f64), p)
                .map_err(CliError::validation)?;
            gap = gap.max((eq.product - eq.bound).abs());
            for &t in &v.t_values {
                let r = property_sweep_with::<f64>(n, p, t, v.samples, seed, v.fault_injection)
                    .map_err(CliError::validation)?;
                if first.is_none() {
                    first = r.first_violation.clone();
                }
                sweeps.push(r);
            }
        }
    }
    let ellipticity_min_eigenvalue = match build_problem(ctx, None) {
        Ok(b) => Some(
            b.problem
                .ellipticity_certificate(&ScalarField::zeros(&b.problem.geometry.grid))
                .map(|r| r.min_eigenvalue)
                .unwrap_or(f64::NAN),
        ),
        Err(_) => None,
    };
    let total_violations =
        sweeps.iter().map(|s| s.violations.total()).sum::<usize>() + usize::from(gap > 1e-10);
    let report = VerifyReport {
        seed,
        sweeps,
        product_equality_max_gap: gap,
        ellipticity_min_eigenvalue,
        total_violations,
    };
    write_json(&ctx.out("verify.json"), &report)?;
    let mut table = format!(
        "{:>2} {:>2} {:>6}  {:>8}  {:>10}  {:>12}  {:>12}  {:>12}\n",
        "n", "p", "t", "samples", "violations", "min partial", "min Mbar eig", "product_bound"
    );
    for s in &report.sweeps {
        table.push_str(&format!(
            "{:>2} {:>2} {:>6}  {:>8}  {:>10}  {:>12.4e}  {:>12.4e}  {:>12.4e}\n",
            s.n,
            s.p,
            s.t,
            s.samples,
            s.violations.total(),
            s.worst.min_partial,
            s.worst.mbar_min_eigenvalue,
            s.worst.product_bound
        ));
    }
    write_text(&ctx.out("verify.txt"), &table)?;
    print!("{table}");
    if report.total_violations > 0 {
        let replay = ctx.out("violation_replay.json");
        if let Some(sample) = &first {
            write_json(&replay, sample)?;
        }
        return Err(CliError::property(format!(
            "{} property violation(s); first offending sample written to {}",
            report.total_violations,
            replay.display()
        )));
    }
    Ok(())
}
