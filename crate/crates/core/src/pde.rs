//! Discrete residual and Jacobian of the prescribed p-curvature equation
//!
//! ```text
//! F[u] = M_p(Ubar[u]) - f e^{2u},
//! Ubar[u] = nabla^2 u + ((1-t)/(n-2)) (Delta u) g + ((2-t)/2) |du|^2 g - du (x) du - A
//! ```
//!
//! with every derivative replaced by the central-difference stencils of
//! [`Grid`](crate::grid::Grid). The Jacobian is the exact derivative of this
//! discrete residual.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{scalar_jet, GeometrySetup};
use crate::grid::{Grid, ScalarField, SymTensorField};
use crate::linalg::{generalized_eigen, SquareMatrix};
use crate::mpoly::{
    mbar_from_gradient, mp_eval, mp_matrix_gradient, trace_coefficient, worst_p_sum, EigenSpectrum,
    MatrixGradient,
};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::trig::TrigPoly;

/// A complete discrete problem instance.
#[derive(Clone, Debug)]
pub struct Problem<T> {
    pub geometry: GeometrySetup<T>,
    /// Background tensor `A^t_g` (geometric or prescribed).
    pub a_field: SymTensorField<T>,
    pub f: ScalarField<T>,
    pub p: usize,
    pub t: T,
}

impl<T: Real> Problem<T> {
    /// Validates `n >= 3`, `1 <= p <= n`, `t < 1` and field sizes.
    pub fn new(
        geometry: GeometrySetup<T>,
        a_field: SymTensorField<T>,
        f: ScalarField<T>,
        p: usize,
    ) -> Result<Self> {
        let n = geometry.dim();
        let t = geometry.t_param;
        if n < 3 {
            return Err(Error::Parameter(format!(
                "dimension must be at least 3, got {n}"
            )));
        }
        if p == 0 || p > n {
            return Err(Error::Parameter(format!(
                "need 1 <= p <= n, got p = {p}, n = {n}"
            )));
        }
        if !(t < T::one()) {
            return Err(Error::Parameter(format!("t must satisfy t < 1, got {t}")));
        }
        if a_field.dim() != n
            || a_field.num_points() != geometry.grid.len()
            || f.len() != geometry.grid.len()
        {
            return Err(Error::Parameter("field sizes do not match the grid".into()));
        }
        Ok(Self {
            geometry,
            a_field,
            f,
            p,
            t,
        })
    }

    pub fn augmented_hessian(&self, u: &ScalarField<T>) -> Result<AugmentedHessianField<T>> {
        augmented_hessian(u, &self.geometry, &self.a_field, self.p, self.t)
    }

    pub fn residual(&self, u: &ScalarField<T>) -> Result<ResidualField<T>> {
        residual(u, &self.f, &self.geometry, &self.a_field, self.p, self.t)
    }

    pub fn linearize(&self, u: &ScalarField<T>) -> Result<SparseLinearSystem<T>> {
        linearize(u, &self.f, &self.geometry, &self.a_field, self.p, self.t)
    }

    pub fn residual_with_margin(&self, u: &ScalarField<T>) -> Result<(ResidualField<T>, T)> {
        residual_with_margin(u, &self.f, &self.geometry, &self.a_field, self.p, self.t)
    }

    pub fn linearize_with_residual(&self, u: &ScalarField<T>) -> Result<Linearization<T>> {
        linearize_with_residual(u, &self.f, &self.geometry, &self.a_field, self.p, self.t)
    }

    pub fn ellipticity_certificate(&self, u: &ScalarField<T>) -> Result<EllipticityReport> {
        ellipticity_certificate(u, &self.geometry, &self.a_field, self.p, self.t)
    }
}

struct PointTensor<T> {
    ubar: SquareMatrix<T>,
    grad: Vec<T>,
}

fn point_tensor<T: Real>(
    u: &[T],
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    pt: usize,
    trace_coef: T,
    grad_coef: T,
) -> PointTensor<T> {
    let n = geometry.dim();
    let jet = scalar_jet(geometry, u, pt);
    let g = geometry.metric.matrix(pt);
    let iso = trace_coef * jet.laplacian + grad_coef * jet.grad_sq;
    let ubar = SquareMatrix::from_fn(n, |i, j| {
        jet.hess.get(i, j) + iso * g.get(i, j) - jet.grad[i] * jet.grad[j] - a_field.get(pt, i, j)
    });
    PointTensor {
        ubar,
        grad: jet.grad,
    }
}

fn coefficients<T: Real>(n: usize, t: T) -> Result<(T, T)> {
    Ok((trace_coefficient(n, t)?, (T::lit(2.0) - t) / T::lit(2.0)))
}

/// `Ubar` at every point with its metric spectrum.
#[derive(Clone, Debug)]
pub struct AugmentedHessianField<T> {
    pub tensor: SymTensorField<T>,
    pub spectra: Vec<EigenSpectrum<T>>,
    /// Minimum p-sum over all points.
    pub cone_margin: T,
    pub worst_point: usize,
}

pub fn augmented_hessian<T: Real>(
    u: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<AugmentedHessianField<T>> {
    let (c, k) = coefficients(geometry.dim(), t)?;
    let per_point: Vec<Result<(SquareMatrix<T>, EigenSpectrum<T>)>> = (0..geometry.grid.len())
        .into_par_iter()
        .map(|pt| {
            let pt_t = point_tensor(u.values(), geometry, a_field, pt, c, k);
            let eig = generalized_eigen(&pt_t.ubar, &geometry.metric.matrix(pt))
                .map_err(|_| Error::Geometry { point: pt })?;
            Ok((pt_t.ubar, EigenSpectrum::new(eig.values)?))
        })
        .collect();
    let mut tensor = SymTensorField::zeros(&geometry.grid);
    let mut spectra = Vec::with_capacity(per_point.len());
    let mut cone_margin = T::infinity();
    let mut worst_point = 0;
    for (pt, r) in per_point.into_iter().enumerate() {
        let (m, s) = r?;
        tensor.set_matrix(pt, &m);
        let w = worst_p_sum(s.values(), p);
        if w < cone_margin {
            cone_margin = w;
            worst_point = pt;
        }
        spectra.push(s);
    }
    Ok(AugmentedHessianField {
        tensor,
        spectra,
        cone_margin,
        worst_point,
    })
}

/// Pointwise operator state shared by the residual and the Jacobian.
struct PointEval<T> {
    grad: Vec<T>,
    mg: MatrixGradient<T>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualField<T> {
    pub values: ScalarField<T>,
    pub sup_norm: T,
}

/// Reports the cone violation with the smallest p-sum, if any.
fn first_violation<T: Real>(evals: Vec<Result<PointEval<T>>>) -> Result<Vec<PointEval<T>>> {
    let mut worst: Option<(f64, Option<usize>)> = None;
    let mut out = Vec::with_capacity(evals.len());
    for e in evals {
        match e {
            Ok(v) => out.push(v),
            Err(Error::ConeViolation { worst_sum, point }) => {
                if worst.is_none_or(|(w, _)| worst_sum < w) {
                    worst = Some((worst_sum, point));
                }
            }
            Err(other) => return Err(other),
        }
    }
    match worst {
        Some((worst_sum, point)) => Err(Error::ConeViolation { worst_sum, point }),
        None => Ok(out),
    }
}

fn evaluate_checked<T: Real>(
    u: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<Vec<PointEval<T>>> {
    let (c, k) = coefficients(geometry.dim(), t)?;
    let evals: Vec<Result<PointEval<T>>> = (0..geometry.grid.len())
        .into_par_iter()
        .map(|pt| {
            let pt_t = point_tensor(u.values(), geometry, a_field, pt, c, k);
            let g = geometry.metric.matrix(pt);
            let mg = mp_matrix_gradient(&pt_t.ubar, &g, p).map_err(|e| match e {
                Error::ConeViolation { worst_sum, .. } => Error::ConeViolation {
                    worst_sum,
                    point: Some(pt),
                },
                Error::Parameter(_) => Error::Geometry { point: pt },
                other => other,
            })?;
            Ok(PointEval {
                grad: pt_t.grad,
                mg,
            })
        })
        .collect();
    first_violation(evals)
}

fn residual_from<T: Real>(
    evals: &[PointEval<T>],
    u: &ScalarField<T>,
    f: &ScalarField<T>,
) -> ResidualField<T> {
    let two = T::lit(2.0);
    let values: Vec<T> = evals
        .iter()
        .zip(u.values())
        .zip(f.values())
        .map(|((e, &ui), &fi)| e.mg.value.normalized - fi * (two * ui).exp())
        .collect();
    let values = ScalarField::from_raw(values);
    let sup_norm = values.sup_norm();
    ResidualField { values, sup_norm }
}

/// `F[u] = M_p(Ubar) - f e^{2u}`. Fails with the worst cone violation if
/// `Ubar` leaves the cone anywhere.
pub fn residual<T: Real>(
    u: &ScalarField<T>,
    f: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<ResidualField<T>> {
    let evals = evaluate_checked(u, geometry, a_field, p, t)?;
    Ok(residual_from(&evals, u, f))
}

/// Newton system `L delta = -F[u]`.
#[derive(Clone, Debug)]
pub struct SparseLinearSystem<T> {
    pub matrix: CsrMatrix<T>,
    pub rhs: Vec<T>,
    pub stencil_width: usize,
}

/// Residual and Jacobian at the same state.
pub struct Linearization<T> {
    pub residual: ResidualField<T>,
    pub cone_margin: T,
    pub system: SparseLinearSystem<T>,
}

fn margin_of<T: Real>(evals: &[PointEval<T>], p: usize) -> T {
    evals
        .iter()
        .map(|e| worst_p_sum(e.mg.spectrum.values(), p))
        .fold(T::infinity(), |m, w| m.min(w))
}

/// Residual together with the minimum p-sum of `Ubar` over the grid.
pub fn residual_with_margin<T: Real>(
    u: &ScalarField<T>,
    f: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<(ResidualField<T>, T)> {
    let evals = evaluate_checked(u, geometry, a_field, p, t)?;
    Ok((residual_from(&evals, u, f), margin_of(&evals, p)))
}

pub fn linearize<T: Real>(
    u: &ScalarField<T>,
    f: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<SparseLinearSystem<T>> {
    Ok(linearize_with_residual(u, f, geometry, a_field, p, t)?.system)
}

pub fn linearize_with_residual<T: Real>(
    u: &ScalarField<T>,
    f: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<Linearization<T>> {
    let evals = evaluate_checked(u, geometry, a_field, p, t)?;
    let residual = residual_from(&evals, u, f);
    let cone_margin = margin_of(&evals, p);
    let grid = &geometry.grid;
    let n = grid.dim();
    let two = T::lit(2.0);
    let grad_weight = T::lit(2.0) - t;
    let rows: Vec<Result<Vec<(usize, T)>>> = evals
        .par_iter()
        .enumerate()
        .map(|(pt, e)| {
            let ginv = geometry.inverse_metric.matrix(pt);
            let mbar = mbar_from_gradient(&e.mg, &ginv, t)?;
            let mg = &e.mg.grad;
            let st = grid.stencil(pt);
            let mut coef = vec![T::zero(); st.len()];
            // second-order block
            for i in 0..n {
                let h = grid.h::<T>(i);
                let a = mbar.get(i, i) / (h * h);
                let (plus, minus) = grid.axis_slot(i);
                coef[0] -= two * a;
                coef[plus] += a;
                coef[minus] += a;
                for j in (i + 1)..n {
                    let a = (mbar.get(i, j) + mbar.get(j, i)) / (T::lit(4.0) * h * grid.h::<T>(j));
                    let s = grid.cross_slot(i, j);
                    coef[s] += a;
                    coef[s + 1] -= a;
                    coef[s + 2] -= a;
                    coef[s + 3] += a;
                }
            }
            // first-order block: Christoffel part of the covariant Hessian
            // plus the contraction with W(dv)
            for kk in 0..n {
                let mut b = T::zero();
                for i in 0..n {
                    for j in 0..n {
                        b -= mbar.get(i, j) * geometry.christoffel.get(pt, kk, i, j);
                    }
                }
                let up: T = (0..n).map(|l| ginv.get(kk, l) * e.grad[l]).sum();
                b += grad_weight * e.mg.metric_trace * up;
                let mu: T = (0..n).map(|j| mg.get(kk, j) * e.grad[j]).sum();
                b -= two * mu;
                let b = b / (two * grid.h::<T>(kk));
                let (plus, minus) = grid.axis_slot(kk);
                coef[plus] += b;
                coef[minus] -= b;
            }
            // zeroth order: exact derivative of -f e^{2u}
            coef[0] -= two * f.values()[pt] * (two * u.values()[pt]).exp();
            Ok(st.iter().copied().zip(coef).collect())
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let matrix = CsrMatrix::from_rows(rows)?;
    let rhs = residual.values.values().iter().map(|&r| -r).collect();
    Ok(Linearization {
        residual,
        cone_margin,
        system: SparseLinearSystem {
            matrix,
            rhs,
            stencil_width: grid.stencil_width(),
        },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    /// Smallest eigenvalue of `Mbar^{ij}` relative to `g^{ij}` over the grid.
    pub min_eigenvalue: f64,
    pub worst_point: usize,
    /// Smallest `(1-t)/(n-2) * M~` over the grid.
    pub min_trace_augmentation: f64,
    pub elliptic: bool,
}

pub fn ellipticity_certificate<T: Real>(
    u: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<EllipticityReport> {
    let evals = evaluate_checked(u, geometry, a_field, p, t)?;
    let c = trace_coefficient(geometry.dim(), t)?;
    let per_point: Vec<Result<(T, T)>> = evals
        .par_iter()
        .enumerate()
        .map(|(pt, e)| {
            let ginv = geometry.inverse_metric.matrix(pt);
            let mbar = mbar_from_gradient(&e.mg, &ginv, t)?;
            let eig = generalized_eigen(&mbar, &ginv)?;
            Ok((eig.values[0], c * e.mg.metric_trace))
        })
        .collect();
    let mut min_eigenvalue = T::infinity();
    let mut worst_point = 0;
    let mut min_aug = T::infinity();
    for (pt, r) in per_point.into_iter().enumerate() {
        let (lam, aug) = r?;
        if lam < min_eigenvalue {
            min_eigenvalue = lam;
            worst_point = pt;
        }
        min_aug = min_aug.min(aug);
    }
    Ok(EllipticityReport {
        min_eigenvalue: min_eigenvalue.as_f64(),
        worst_point,
        min_trace_augmentation: min_aug.as_f64(),
        elliptic: min_eigenvalue > T::zero(),
    })
}

/// `f := M_p(Ubar[u*]) e^{-2u*}`, which makes `u*` an exact discrete root.
pub fn manufactured_rhs<T: Real>(
    u_star: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    t: T,
) -> Result<ScalarField<T>> {
    let evals = evaluate_checked(u_star, geometry, a_field, p, t)?;
    let two = T::lit(2.0);
    Ok(ScalarField::from_raw(
        evals
            .iter()
            .zip(u_star.values())
            .map(|(e, &u)| e.mg.value.normalized * (-two * u).exp())
            .collect(),
    ))
}

/// `f` from the analytic derivatives of `u*` on `g = e^{2 phi} delta` with
/// `A = -level * g`, sampled on the grid.
///
/// The discrete root then differs from `u*` by the truncation error of the
/// stencils, which is what a grid convergence study measures.
pub fn manufactured_rhs_continuum<T: Real>(
    grid: &Grid,
    phi: Option<&TrigPoly>,
    level: &TrigPoly,
    u_star: &TrigPoly,
    p: usize,
    t: T,
) -> Result<ScalarField<T>> {
    let n = grid.dim();
    for poly in [Some(level), Some(u_star), phi].into_iter().flatten() {
        poly.check_dim(n)?;
    }
    let (c, k) = coefficients(n, t)?;
    let values: Vec<Result<T>> = (0..grid.len())
        .into_par_iter()
        .map(|pt| {
            let x = grid.coords::<T>(pt);
            let du = u_star.gradient(&x);
            let d2u = u_star.hessian(&x);
            let (dphi, e) = match phi {
                Some(ph) => (ph.gradient(&x), (T::lit(2.0) * ph.value(&x)).exp()),
                None => (vec![T::zero(); n], T::one()),
            };
            let dot: T = dphi.iter().zip(&du).map(|(&a, &b)| a * b).sum();
            let hess = SquareMatrix::from_fn(n, |i, j| {
                let delta = if i == j { dot } else { T::zero() };
                d2u.get(i, j) - dphi[i] * du[j] - dphi[j] * du[i] + delta
            });
            let grad_sq: T = du.iter().map(|&v| v * v).sum();
            let iso = c * hess.trace() + k * grad_sq + level.value(&x) * e;
            let ubar = SquareMatrix::from_fn(n, |i, j| {
                hess.get(i, j) - du[i] * du[j] + if i == j { iso } else { T::zero() }
            });
            let eig = generalized_eigen(&ubar, &SquareMatrix::identity(n).scale(e))?;
            let m = mp_eval(&EigenSpectrum::new(eig.values)?, p).map_err(|err| match err {
                Error::ConeViolation { worst_sum, .. } => Error::ConeViolation {
                    worst_sum,
                    point: Some(pt),
                },
                other => other,
            })?;
            Ok(m.normalized * (-T::lit(2.0) * u_star.value(&x)).exp())
        })
        .collect();
    Ok(ScalarField::from_raw(
        values.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}
