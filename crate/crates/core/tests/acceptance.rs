//! Acceptance criteria, one line of output each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pcurve::estimates::{
    check_solution, constant_curvature_demo, product_bound, property_sweep, sample_cone_spectrum,
};
use pcurve::geometry::{certify_background, conformal_schouten};
use pcurve::linalg::{generalized_eigen, SquareMatrix};
use pcurve::pde::{manufactured_rhs, manufactured_rhs_continuum};
use pcurve::solver::{
    continuation_solve_logged, normalizing_constant, uniqueness_probe, IterationRecord,
};
use pcurve::{
    continuation_solve, mp_eval, mp_grad_eigen, mp_grad_matrix, newton_solve, ContinuationOptions,
    EigenSpectrum, Field64, Geometry64, Grid, NewtonOptions, Problem64, ScalarField, Tensor64,
    TrigPoly, Wave,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn m_of(v: &SquareMatrix<f64>, g: &SquareMatrix<f64>, p: usize) -> f64 {
    let spec = EigenSpectrum::new(generalized_eigen(v, g).unwrap().values).unwrap();
    mp_eval(&spec, p).unwrap().normalized
}

fn operator_correctness() -> Outcome {
    let start = Instant::now();
    let v = mp_eval(&EigenSpectrum::new(vec![1.0, 2.0, 3.0]).unwrap(), 2)
        .unwrap()
        .normalized;
    let want = 60f64.powf(1.0 / 3.0);
    ensure((v - want).abs() <= 1e-12, || {
        format!("M_2(1,2,3) = {v}, want {want}")
    })?;

    let mut worst_eigen = 0.0f64;
    let mut worst_matrix = 0.0f64;
    for n in 3..=5 {
        for p in 1..=n {
            let mut rng = ChaCha8Rng::seed_from_u64(100 * n as u64 + p as u64);
            for _ in 0..100 {
                let lambda = sample_cone_spectrum(&mut rng, n, p);
                let grad = mp_grad_eigen(&EigenSpectrum::new(lambda.clone()).unwrap(), p).unwrap();
                for a in 0..n {
                    let eps = 1e-5 * lambda[a].abs().max(1.0);
                    let shifted = |d: f64| {
                        let mut l = lambda.clone();
                        l[a] += d;
                        mp_eval(&EigenSpectrum::new(l).unwrap(), p)
                            .unwrap()
                            .normalized
                    };
                    let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                    worst_eigen = worst_eigen.max((fd - grad[a]).abs() / grad[a].abs());
                }

                // V = P^T diag(lambda) P has spectrum lambda relative to G = P^T P.
                let pm = SquareMatrix::from_fn(
                    n,
                    |i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * rng.gen_range(-1.0..1.0),
                );
                let g = pm.transpose().matmul(&pm);
                let v = pm
                    .transpose()
                    .matmul(&SquareMatrix::diagonal(&lambda))
                    .matmul(&pm);
                let mut e = SquareMatrix::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                e.symmetrize();
                let grad_m = mp_grad_matrix(&v, &g, p).unwrap();
                let exact = grad_m.contract(&e);
                let eps = 1e-5;
                let fd = (m_of(&v.add(&e.scale(eps)), &g, p) - m_of(&v.add(&e.scale(-eps)), &g, p))
                    / (2.0 * eps);
                let scale = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| (grad_m.get(i, j) * e.get(i, j)).abs())
                            .sum::<f64>()
                    })
                    .sum::<f64>();
                worst_matrix = worst_matrix.max((fd - exact).abs() / scale);
            }
        }
    }
    ensure(worst_eigen <= 1e-6, || {
        format!("eigen gradient relative error {worst_eigen:e}")
    })?;
    ensure(worst_matrix <= 1e-6, || {
        format!("matrix gradient relative error {worst_matrix:e}")
    })?;
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "M_2(1,2,3) error {:.1e}, gradient FD errors {worst_eigen:.1e} / {worst_matrix:.1e}, {:.2} s",
        (v - want).abs(),
        start.elapsed().as_secs_f64()
    ))
}

fn gradient_product_bound() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::INFINITY;
    let mut worst_eq = 0.0f64;
    for n in 3..=6 {
        for p in 1..=n {
            let mut rng = ChaCha8Rng::seed_from_u64(7919 * n as u64 + p as u64);
            let bound = (p as f64 / n as f64).powi(n as i32);
            for _ in 0..10_000 {
                let lambda = sample_cone_spectrum(&mut rng, n, p);
                let product: f64 = mp_grad_eigen(&EigenSpectrum::new(lambda).unwrap(), p)
                    .unwrap()
                    .iter()
                    .product();
                ensure(product >= bound - 1e-12, || {
                    format!("n={n} p={p}: product {product} < bound {bound}")
                })?;
                worst = worst.min(product - bound);
            }
            for c in [0.01, 1.0, 37.5] {
                let eq = product_bound(&EigenSpectrum::uniform(n, c), p).unwrap();
                worst_eq = worst_eq.max((eq.product - eq.bound).abs());
            }
        }
    }
    ensure(worst_eq <= 1e-10, || {
        format!("equality gap {worst_eq:e} at uniform spectra")
    })?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "min product - bound {worst:.3e}, equality gap {worst_eq:.1e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn structural_inequalities() -> Outcome {
    let mut min_mbar = f64::INFINITY;
    let mut min_trace = f64::INFINITY;
    let mut min_concavity = f64::INFINITY;
    let mut total = 0;
    for n in 3..=5 {
        for p in 1..=n {
            for t in [-1.0, 0.0, 0.5, 0.99] {
                let r = property_sweep::<f64>(n, p, t, 10_000, 42).map_err(|e| e.to_string())?;
                total += r.violations.total();
                min_mbar = min_mbar.min(r.worst.mbar_min_eigenvalue);
                min_trace = min_trace.min(r.worst.trace_bound);
                min_concavity = min_concavity.min(r.worst.concavity);
            }
        }
    }
    ensure(total == 0, || format!("{total} violations"))?;
    ensure(min_mbar > 0.0, || format!("Mbar min eigenvalue {min_mbar}"))?;
    ensure(min_trace >= -1e-10, || format!("trace slack {min_trace}"))?;
    Ok(format!(
        "0 violations, min Mbar eigenvalue {min_mbar:.3e}, trace slack {min_trace:.1e}, concavity slack {min_concavity:.1e}"
    ))
}

fn flat_problem(
    points: usize,
    p: usize,
    t: f64,
    a_level: f64,
    f: impl Fn(&[f64]) -> f64,
) -> Problem64 {
    let grid = Grid::cube(3, points).unwrap();
    let geo = Geometry64::build_flat(&grid, t).unwrap();
    let a = geo.metric.scale(-a_level);
    let f = ScalarField::from_fn(&grid, f);
    Problem64::new(geo, a, f, p).unwrap()
}

fn base_point() -> Outcome {
    let p = 2;
    let prob = flat_problem(12, p, 0.0, normalizing_constant(p), |_| 1.0);
    let r = prob
        .residual(&ScalarField::zeros(&prob.geometry.grid))
        .map_err(|e| e.to_string())?;
    ensure(r.sup_norm <= 1e-13, || format!("residual {:e}", r.sup_norm))?;
    let out = continuation_solve(&prob, &ContinuationOptions::default())
        .map_err(|e| e.error.to_string())?;
    ensure(out.trace.len() == 2 && out.trace[1].s == 1.0, || {
        format!("{} continuation states", out.trace.len())
    })?;
    ensure(out.total_newton_iterations() == 0, || {
        "Newton iterations were needed".into()
    })?;
    Ok(format!(
        "residual {:.1e}, single step 0 -> 1 with 0 Newton iterations",
        r.sup_norm
    ))
}

fn closed_form() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_bound = 0.0f64;
    for (p, t, level, fval) in [
        (2, 0.0, 0.5, 1.0),
        (2, 0.3, 0.8, 2.5),
        (1, -1.0, 1.7, 0.4),
        (3, 0.9, 0.2, 7.0),
    ] {
        let prob = flat_problem(8, p, t, level, |_| fval);
        let mp = mp_eval(&EigenSpectrum::uniform(3, level), p)
            .unwrap()
            .normalized;
        let want = -0.5 * fval.ln() + 0.5 * mp.ln();
        let out = continuation_solve(&prob, &ContinuationOptions::default())
            .map_err(|e| e.error.to_string())?;
        let err = out
            .u
            .values()
            .iter()
            .map(|v| (v - want).abs())
            .fold(0.0, f64::max);
        ensure(err <= 1e-10, || format!("p={p} t={t}: sup error {err:e}"))?;
        let est = check_solution(&out.u, &prob).map_err(|e| e.to_string())?;
        let gap = (est.bounds.lower - want)
            .abs()
            .max((est.bounds.upper - want).abs());
        ensure(gap <= 1e-12, || {
            format!(
                "p={p} t={t}: bounds [{}, {}] vs {want}",
                est.bounds.lower, est.bounds.upper
            )
        })?;
        worst = worst.max(err);
        worst_bound = worst_bound.max(gap);
    }
    Ok(format!(
        "sup error {worst:.1e}, bound gap {worst_bound:.1e}"
    ))
}

fn manufactured_recovery() -> Outcome {
    let start = Instant::now();
    let prob = flat_problem(24, 2, 0.0, 0.5, |_| 1.0);
    let grid = prob.geometry.grid.clone();
    let u_star = TrigPoly::cos_sum(3, 0.05).sample::<f64>(&grid);
    let f = manufactured_rhs(&u_star, &prob.geometry, &prob.a_field, 2, 0.0)
        .map_err(|e| e.to_string())?;
    let prob = Problem64 { f, ..prob };
    let (u, rep) = newton_solve(&prob, &ScalarField::zeros(&grid), &NewtonOptions::default())
        .map_err(|e| e.to_string())?;
    let err = u.sup_distance(&u_star);
    ensure(rep.converged, || "Newton did not converge".into())?;
    ensure(err <= 1e-8, || format!("sup error {err:e}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "24^3: sup error {err:.1e} after {} Newton iterations, {:.1} s",
        rep.iterations,
        start.elapsed().as_secs_f64()
    ))
}

fn continuum_error(points: usize) -> Result<f64, String> {
    let grid = Grid::cube(3, points).unwrap();
    let u_star = TrigPoly::cos_sum(3, 0.05);
    let level = TrigPoly::constant(0.5);
    let f = manufactured_rhs_continuum::<f64>(&grid, None, &level, &u_star, 2, 0.0)
        .map_err(|e| e.to_string())?;
    let geo = Geometry64::build_flat(&grid, 0.0).unwrap();
    let a = geo.metric.scale(-0.5);
    let prob = Problem64::new(geo, a, f, 2).map_err(|e| e.to_string())?;
    let out = continuation_solve(&prob, &ContinuationOptions::default())
        .map_err(|e| e.error.to_string())?;
    Ok(out.u.sup_distance(&u_star.sample(&grid)))
}

fn grid_convergence() -> Outcome {
    let (coarse, fine) = (continuum_error(16)?, continuum_error(32)?);
    let order = (coarse / fine).log2();
    ensure((order - 2.0).abs() <= 0.3, || {
        format!("observed order {order:.3}")
    })?;
    Ok(format!(
        "errors {coarse:.3e} / {fine:.3e}, observed order {order:.3}"
    ))
}

/// Conformally flat background `e^{2 phi} delta` with a certified tensor
/// `A = A^t_g - shift * g`.
fn curved_problem(points: usize, p: usize, t: f64, f: impl Fn(&[f64]) -> f64) -> Problem64 {
    let grid = Grid::cube(3, points).unwrap();
    let phi = TrigPoly::sin_sum(3, 0.1).sample::<f64>(&grid);
    let geo = Geometry64::build_conformal_flat(&grid, &phi, t).unwrap();
    let a = geo
        .modified_schouten()
        .unwrap()
        .lincomb(1.0, &geo.metric, -0.5);
    let f = ScalarField::from_fn(&grid, f);
    Problem64::new(geo, a, f, p).unwrap()
}

fn existence_pipeline() -> Outcome {
    let opts = ContinuationOptions::default();
    let mut details = Vec::new();
    for t in [0.0, 0.5] {
        for p in [1, 2] {
            let tag = format!("t={t} p={p}");
            let prob = curved_problem(12, p, t, |x| 1.0 + 0.2 * x[0].sin());
            let cert = certify_background(&prob.geometry, &prob.a_field, p, 1e-10)
                .map_err(|e| e.to_string())?;
            ensure(cert.passed, || {
                format!("{tag}: background not certified ({:e})", cert.worst_margin)
            })?;
            let mut log: Vec<IterationRecord> = Vec::new();
            let out = continuation_solve_logged(&prob, &opts, &mut |r| log.push(*r))
                .map_err(|e| format!("{tag}: {}", e.error))?;
            ensure(out.trace.last().unwrap().s == 1.0, || {
                format!("{tag}: stopped before s = 1")
            })?;
            let res = out.final_report().final_residual();
            ensure(res <= 1e-8, || format!("{tag}: final residual {res:e}"))?;
            let accepted: Vec<f64> = out.trace.iter().map(|st| st.s).collect();
            let min_margin = log
                .iter()
                .filter(|r| accepted.contains(&r.s))
                .map(|r| r.cone_margin)
                .fold(f64::INFINITY, f64::min);
            ensure(min_margin > 1e-10, || {
                format!("{tag}: iterate cone margin {min_margin:e}")
            })?;
            let est = check_solution(&out.u, &prob).map_err(|e| e.to_string())?;
            ensure(est.bound_satisfied, || {
                format!(
                    "{tag}: u in [{}, {}] outside [{}, {}]",
                    est.inf_u, est.sup_u, est.bounds.lower, est.bounds.upper
                )
            })?;
            let uniq = uniqueness_probe(&prob, &opts, 3, 17).map_err(|e| e.to_string())?;
            ensure(uniq.all_converged, || {
                format!("{tag}: a uniqueness trial failed")
            })?;
            ensure(uniq.max_pairwise_distance <= 1e-6, || {
                format!(
                    "{tag}: solutions differ by {:e}",
                    uniq.max_pairwise_distance
                )
            })?;
            details.push(format!(
                "{tag} res {res:.0e} spread {:.0e}",
                uniq.max_pairwise_distance
            ));
        }
    }
    Ok(details.join("; "))
}

fn constant_curvature() -> Outcome {
    let mut details = Vec::new();
    for p in [1, 2] {
        let prob = curved_problem(12, p, 0.0, |_| 1.3);
        let r = constant_curvature_demo(&prob, &ContinuationOptions::default())
            .map_err(|e| e.to_string())?;
        ensure(r.relative_deviation <= r.tolerance, || {
            format!(
                "p={p}: deviation {:e} > {:e}",
                r.relative_deviation, r.tolerance
            )
        })?;
        if p == 1 {
            ensure(r.det_root_deviation <= r.tolerance, || {
                format!(
                    "det root deviation {:e} > {:e}",
                    r.det_root_deviation, r.tolerance
                )
            })?;
        }
        ensure(r.passed, || format!("p={p}: demo failed"))?;
        details.push(format!("p={p} deviation {:.1e}", r.relative_deviation));
        if p == 1 {
            details.push(format!("det root deviation {:.1e}", r.det_root_deviation));
        }
        details.push(format!("tolerance {:.1e}", r.tolerance));
    }
    Ok(details.join(", "))
}

fn ricci_error(points: usize) -> f64 {
    let grid = Grid::cube(3, points).unwrap();
    let poly = TrigPoly::sin_sum(3, 0.2).with_term(0.1, Wave::Cos, vec![1, 1, 0]);
    let geo = Geometry64::build_conformal_flat(&grid, &poly.sample(&grid), 0.0).unwrap();
    let n = 3.0;
    let mut err = 0.0f64;
    for pt in 0..grid.len() {
        let x = grid.coords::<f64>(pt);
        let d = poly.gradient(&x);
        let h = poly.hessian(&x);
        let lap = h.trace();
        let grad_sq: f64 = d.iter().map(|v| v * v).sum();
        for i in 0..3 {
            for j in 0..3 {
                let mut want = -(n - 2.0) * (h.get(i, j) - d[i] * d[j]);
                if i == j {
                    want -= lap + (n - 2.0) * grad_sq;
                }
                err = err.max((geo.ricci.get(pt, i, j) - want).abs());
            }
        }
    }
    err
}

fn geometry_consistency() -> Outcome {
    let grid = Grid::cube(3, 12).unwrap();
    let phi = TrigPoly::sin_sum(3, 0.15).sample::<f64>(&grid);
    let mut worst = 0.0f64;
    for t in [-1.0, 0.0, 0.4, 1.0] {
        let geo = Geometry64::build_conformal_flat(&grid, &phi, t).unwrap();
        let a: Tensor64 = geo.modified_schouten().unwrap();
        let u1: Field64 = TrigPoly::cos_sum(3, 0.1)
            .with_term(0.05, Wave::Sin, vec![1, -1, 2])
            .sample(&grid);
        let u2: Field64 = TrigPoly::constant(0.2)
            .with_term(0.08, Wave::Sin, vec![0, 2, 1])
            .sample(&grid);
        let sum = u1.zip_map(&u2, |a, b| a + b);
        let direct = conformal_schouten(&a, &sum, &geo, t).map_err(|e| e.to_string())?;
        let step = conformal_schouten(&a, &u1, &geo, t).map_err(|e| e.to_string())?;
        let moved = geo.conformal_change(&u1).map_err(|e| e.to_string())?;
        let composed = conformal_schouten(&step, &u2, &moved, t).map_err(|e| e.to_string())?;
        worst = worst.max(direct.max_abs_difference(&composed));
    }
    ensure(worst <= 1e-8, || format!("cocycle defect {worst:e}"))?;
    let (coarse, fine) = (ricci_error(16), ricci_error(32));
    let order = (coarse / fine).log2();
    ensure((order - 2.0).abs() <= 0.3, || {
        format!("Ricci order {order:.3}")
    })?;
    Ok(format!(
        "cocycle defect {worst:.1e}, Ricci errors {coarse:.2e} / {fine:.2e}, order {order:.3}"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("operator correctness", operator_correctness),
        ("gradient product bound", gradient_product_bound),
        ("structural inequalities", structural_inequalities),
        ("base point", base_point),
        ("closed-form solve", closed_form),
        ("manufactured recovery", manufactured_recovery),
        ("grid convergence", grid_convergence),
        ("existence pipeline", existence_pipeline),
        ("constant curvature demo", constant_curvature),
        ("geometry consistency", geometry_consistency),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {label}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {label}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
