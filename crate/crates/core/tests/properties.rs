use pcurve::cli::Config;
use pcurve::geometry::{certify_background, metric_eigenvalues};
use pcurve::linalg::SquareMatrix;
use pcurve::mpoly::{
    cone_contains, mp_eval, mp_grad_eigen, mp_grad_matrix, worst_p_sum, EigenSpectrum,
};
use pcurve::{GeometrySetup, Grid, Problem, ScalarField, SymTensorField, TrigPoly};
use proptest::prelude::*;

/// `(n, p, lambda)` with `lambda` in the open p-cone.
fn cone_point() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (3usize..=5)
        .prop_flat_map(|n| {
            (
                Just(n),
                1..=n,
                prop::collection::vec(-2.0f64..2.0, n),
                0.05f64..2.0,
            )
        })
        .prop_map(|(n, p, raw, delta)| {
            let shift = (delta - worst_p_sum(&raw, p)) / p as f64;
            (n, p, raw.iter().map(|x| x + shift).collect())
        })
}

fn m(lambda: &[f64], p: usize) -> f64 {
    mp_eval(&EigenSpectrum::new(lambda.to_vec()).unwrap(), p)
        .unwrap()
        .normalized
}

fn grad(lambda: &[f64], p: usize) -> Vec<f64> {
    mp_grad_eigen(&EigenSpectrum::new(lambda.to_vec()).unwrap(), p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cone_is_monotone((n, p, lambda) in cone_point(), mu in prop::collection::vec(0.0f64..3.0, 5)) {
        let sum: Vec<f64> = lambda.iter().zip(&mu[..n]).map(|(a, b)| a + b).collect();
        prop_assert!(cone_contains(&EigenSpectrum::new(sum).unwrap(), p, 0.0).unwrap().inside);
    }

    #[test]
    fn operator_is_symmetric((_n, p, lambda) in cone_point(), seed in any::<u64>()) {
        let mut perm = lambda.clone();
        let len = perm.len();
        let mut s = seed;
        for i in (1..len).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let (a, b) = (m(&lambda, p), m(&perm, p));
        prop_assert!((a - b).abs() <= 1e-13 * a);
    }

    #[test]
    fn operator_is_homogeneous((_n, p, lambda) in cone_point(), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = lambda.iter().map(|x| c * x).collect();
        let (a, b) = (c * m(&lambda, p), m(&scaled, p));
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn gradient_positive_with_euler_and_trace((_n, p, lambda) in cone_point()) {
        let g = grad(&lambda, p);
        prop_assert!(g.iter().all(|&x| x > 0.0));
        let euler: f64 = g.iter().zip(&lambda).map(|(a, b)| a * b).sum();
        let value = m(&lambda, p);
        prop_assert!((euler - value).abs() <= 1e-12 * value);
        prop_assert!(g.iter().sum::<f64>() >= p as f64 - 1e-10);
    }

    #[test]
    fn trace_bound_is_attained_on_the_diagonal(n in 3usize..=6, pick in 0usize..6, c in 0.01f64..50.0) {
        let p = 1 + pick % n;
        let sum: f64 = grad(&vec![c; n], p).iter().sum();
        prop_assert!((sum - p as f64).abs() < 1e-12);
    }

    #[test]
    fn midpoint_concavity((n, p, lambda) in cone_point(), raw in prop::collection::vec(-2.0f64..2.0, 5), delta in 0.05f64..2.0) {
        let raw = &raw[..n];
        let shift = (delta - worst_p_sum(raw, p)) / p as f64;
        let mu: Vec<f64> = raw.iter().map(|x| x + shift).collect();
        let mid: Vec<f64> = lambda.iter().zip(&mu).map(|(a, b)| 0.5 * (a + b)).collect();
        prop_assert!(m(&mid, p) >= 0.5 * (m(&lambda, p) + m(&mu, p)) - 1e-12);
    }

    #[test]
    fn matrix_gradient_of_diagonal((n, p, lambda) in cone_point()) {
        let g = grad(&lambda, p);
        let mg = mp_grad_matrix(&SquareMatrix::diagonal(&lambda), &SquareMatrix::identity(n), p).unwrap();
        for (i, gi) in g.iter().enumerate() {
            for j in 0..n {
                let want = if i == j { *gi } else { 0.0 };
                prop_assert!((mg.get(i, j) - want).abs() < 1e-12 * (1.0 + gi.abs()));
            }
        }
    }

    #[test]
    fn spectrum_is_congruence_invariant(entries in prop::collection::vec(-0.5f64..0.5, 9), level in 0.1f64..2.0) {
        let grid = Grid::cube(3, 8).unwrap();
        let phi = TrigPoly::sin_sum(3, 0.2).sample::<f64>(&grid);
        let geo = GeometrySetup::build_conformal_flat(&grid, &phi, 0.0).unwrap();
        let v = geo.modified_schouten().unwrap().lincomb(1.0, &geo.metric, -level);
        let p_mat = SquareMatrix::identity(3).add(&SquareMatrix::from_row_major(3, entries));
        let congr = |t: &SymTensorField<f64>| {
            SymTensorField::from_fn(&grid, |pt| {
                let mut out = p_mat.transpose().matmul(&t.matrix(pt)).matmul(&p_mat);
                out.symmetrize();
                out
            })
        };
        let moved = GeometrySetup::from_metric(&grid, congr(&geo.metric), 0.0);
        prop_assume!(moved.is_ok());
        let moved = moved.unwrap();
        let before = metric_eigenvalues(&v, &geo).unwrap();
        let after = metric_eigenvalues(&congr(&v), &moved).unwrap();
        for (a, b) in before.iter().zip(&after) {
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
            for p in 1..=3 {
                let ca = cone_contains(a, p, 0.0).unwrap();
                let cb = cone_contains(b, p, 0.0).unwrap();
                prop_assert!(ca.inside == cb.inside || ca.worst_sum.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn certification_margin_shifts_by_p_eps(p in 1usize..=3, eps in 0.0f64..1.0, level in -0.5f64..1.0) {
        let grid = Grid::cube(3, 8).unwrap();
        let flat = GeometrySetup::<f64>::build_flat(&grid, 0.0).unwrap();
        let a = SymTensorField::from_fn(&grid, |pt| {
            let x = grid.coords::<f64>(pt);
            SquareMatrix::diagonal(&[-level + 0.1 * x[0].sin(), -level, -level + 0.2 * x[1].cos()])
        });
        let r0 = certify_background(&flat, &a, p, 0.0).unwrap();
        let r1 = certify_background(&flat, &a.lincomb(1.0, &flat.metric, -eps), p, 0.0).unwrap();
        prop_assert!((r1.worst_margin - r0.worst_margin - p as f64 * eps).abs() < 1e-12);
    }

    #[test]
    fn residual_commutes_with_shifts(axis in 0usize..3, delta in -3isize..=3, amp in 0.0f64..0.05) {
        let grid = Grid::cube(3, 8).unwrap();
        let geo = GeometrySetup::<f64>::build_flat(&grid, 0.5).unwrap();
        let a = geo.metric.scale(-0.6);
        let problem = Problem::new(geo, a, ScalarField::constant(&grid, 1.3), 2).unwrap();
        let u = TrigPoly::constant(0.0)
            .with_term(amp, pcurve::Wave::Sin, vec![1, 2, 0])
            .with_term(amp, pcurve::Wave::Cos, vec![0, 1, -1])
            .sample::<f64>(&grid);
        let r_shift = problem.residual(&u.shifted(&grid, axis, delta)).unwrap().values;
        let shift_r = problem.residual(&u).unwrap().values.shifted(&grid, axis, delta);
        prop_assert_eq!(r_shift.values(), shift_r.values());
    }

    #[test]
    fn config_round_trip(n in 3usize..=6, p_pick in 0usize..6, t in -2.0f64..0.99, pts in 8usize..20, seed in 0..=i64::MAX as u64, level in 0.1f64..3.0) {
        let p = 1 + p_pick % n;
        let text = format!(
            "schema = \"pcurve/1\"\nseed = {seed}\n[problem]\nn = {n}\np = {p}\nt = {t:?}\ngrid = {grid:?}\nf = {level:?}\n\
             [problem.background]\nkind = \"flat\"\n[problem.tensor]\nmode = \"isotropic\"\nlevel = {level:?}\n",
            grid = vec![pts; n],
        );
        let cfg = Config::from_toml(&text).unwrap();
        prop_assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
