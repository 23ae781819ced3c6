//! Background geometry on the periodic grid.
//!
//! Curvature conventions: `Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)`
//! and `Ric_jk = d_i Gamma^i_jk - d_k Gamma^i_ij + Gamma^i_im Gamma^m_jk -
//! Gamma^i_km Gamma^m_ij`, so the round sphere has positive Ricci and scalar
//! curvature. All derivatives are second-order central differences, the same
//! stencils that act on the unknown.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, SymTensorField};
use crate::linalg::{generalized_eigen, inverse_spd, SquareMatrix};
use crate::mpoly::{cone_contains, trace_coefficient, EigenSpectrum};
use crate::scalar::Real;
use crate::trig::TrigPoly;

/// Christoffel symbols `Gamma^k_ij` at every point, stored `[pt][k][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Christoffel<T> {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.dim();
        Self {
            n,
            data: vec![T::zero(); grid.len() * n * n * n],
        }
    }

    #[inline]
    fn offset(&self, pt: usize, k: usize, i: usize, j: usize) -> usize {
        ((pt * self.n + k) * self.n + i) * self.n + j
    }

    #[inline]
    pub fn get(&self, pt: usize, k: usize, i: usize, j: usize) -> T {
        self.data[self.offset(pt, k, i, j)]
    }

    #[inline]
    fn set(&mut self, pt: usize, k: usize, i: usize, j: usize, v: T) {
        let o = self.offset(pt, k, i, j);
        self.data[o] = v;
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest `|Gamma^k_ij - Gamma^k_ji|`.
    pub fn asymmetry(&self) -> T {
        let n = self.n;
        let pts = self.data.len() / (n * n * n);
        let mut worst = T::zero();
        for pt in 0..pts {
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        worst = worst.max((self.get(pt, k, i, j) - self.get(pt, k, j, i)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Background metric plus everything derived from it.
#[derive(Clone, Debug)]
pub struct GeometrySetup<T> {
    pub grid: Grid,
    pub metric: SymTensorField<T>,
    pub inverse_metric: SymTensorField<T>,
    pub christoffel: Christoffel<T>,
    pub ricci: SymTensorField<T>,
    pub scalar_curv: ScalarField<T>,
    pub t_param: T,
}

fn check_t<T: Real>(t: T) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Parameter("t must be finite".into()));
    }
    Ok(())
}

fn invert_metric<T: Real>(grid: &Grid, metric: &SymTensorField<T>) -> Result<SymTensorField<T>> {
    let inverses: Vec<Result<SquareMatrix<T>>> = (0..grid.len())
        .into_par_iter()
        .map(|pt| inverse_spd(&metric.matrix(pt)).ok_or(Error::Geometry { point: pt }))
        .collect();
    let mut inv = SymTensorField::zeros(grid);
    for (pt, m) in inverses.into_iter().enumerate() {
        inv.set_matrix(pt, &m?);
    }
    Ok(inv)
}

impl<T: Real> GeometrySetup<T> {
    /// Identity metric; all curvature vanishes.
    pub fn build_flat(grid: &Grid, t: T) -> Result<Self> {
        check_t(t)?;
        let id = SquareMatrix::identity(grid.dim());
        let metric = SymTensorField::from_fn(grid, |_| id.clone());
        Ok(Self {
            grid: grid.clone(),
            inverse_metric: metric.clone(),
            metric,
            christoffel: Christoffel::zeros(grid),
            ricci: SymTensorField::zeros(grid),
            scalar_curv: ScalarField::zeros(grid),
            t_param: t,
        })
    }

    /// `g = e^{2 phi} delta` with curvature from finite differences.
    pub fn build_conformal_flat(grid: &Grid, phi: &ScalarField<T>, t: T) -> Result<Self> {
        let n = grid.dim();
        let metric = SymTensorField::from_fn(grid, |pt| {
            SquareMatrix::identity(n).scale((T::lit(2.0) * phi.values()[pt]).exp())
        });
        Self::from_metric(grid, metric, t)
    }

    /// Arbitrary pointwise positive-definite metric.
    pub fn from_metric(grid: &Grid, metric: SymTensorField<T>, t: T) -> Result<Self> {
        check_t(t)?;
        if metric.dim() != grid.dim() || metric.num_points() != grid.len() {
            return Err(Error::Parameter(
                "metric field does not match the grid".into(),
            ));
        }
        let inverse_metric = invert_metric(grid, &metric)?;
        let christoffel = christoffel_fd(grid, &metric, &inverse_metric);
        let (ricci, scalar_curv) = curvature_fd(grid, &inverse_metric, &christoffel);
        Ok(Self {
            grid: grid.clone(),
            metric,
            inverse_metric,
            christoffel,
            ricci,
            scalar_curv,
            t_param: t,
        })
    }

    /// Geometry of `e^{2u} g`.
    ///
    /// The new Christoffel symbols come from the exact conformal law
    /// `Gamma~^k_ij = Gamma^k_ij + delta^k_i u_j + delta^k_j u_i - g_ij g^kl u_l`
    /// with discrete gradients of `u`, which makes the discrete transformation
    /// law of the modified Schouten tensor compose exactly. Ricci is then
    /// recomputed from the new symbols by finite differences.
    pub fn conformal_change(&self, u: &ScalarField<T>) -> Result<Self> {
        let grid = &self.grid;
        let n = grid.dim();
        let two = T::lit(2.0);
        let mut metric = SymTensorField::zeros(grid);
        let mut inverse_metric = SymTensorField::zeros(grid);
        let mut christoffel = Christoffel::zeros(grid);
        for pt in 0..grid.len() {
            let e = (two * u.values()[pt]).exp();
            metric.set_matrix(pt, &self.metric.matrix(pt).scale(e));
            inverse_metric.set_matrix(pt, &self.inverse_metric.matrix(pt).scale(e.recip()));
            let du = grid.gradient(u.values(), pt);
            let up: Vec<T> = (0..n)
                .map(|k| {
                    (0..n)
                        .map(|l| self.inverse_metric.get(pt, k, l) * du[l])
                        .sum()
                })
                .collect();
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut v =
                            self.christoffel.get(pt, k, i, j) - self.metric.get(pt, i, j) * up[k];
                        if k == i {
                            v += du[j];
                        }
                        if k == j {
                            v += du[i];
                        }
                        christoffel.set(pt, k, i, j, v);
                    }
                }
            }
        }
        let (ricci, scalar_curv) = curvature_fd(grid, &inverse_metric, &christoffel);
        Ok(Self {
            grid: grid.clone(),
            metric,
            inverse_metric,
            christoffel,
            ricci,
            scalar_curv,
            t_param: self.t_param,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Covariant Hessian `d_ij u - Gamma^k_ij d_k u` at one point, given the
    /// discrete gradient `du` there.
    pub fn covariant_hessian(&self, u: &[T], pt: usize, du: &[T]) -> SquareMatrix<T> {
        let n = self.dim();
        let mut h = self.grid.hessian(u, pt);
        for i in 0..n {
            for j in 0..n {
                let corr: T = (0..n)
                    .map(|k| self.christoffel.get(pt, k, i, j) * du[k])
                    .sum();
                h.add_at(i, j, -corr);
            }
        }
        h.symmetrize();
        h
    }

    /// `A^t = (Ric - t R / (2(n-1)) g) / (n - 2)` with this geometry's `t`.
    pub fn modified_schouten(&self) -> Result<SymTensorField<T>> {
        modified_schouten(self)
    }
}

/// Second-order finite-difference Christoffel symbols.
pub fn christoffel_fd<T: Real>(
    grid: &Grid,
    metric: &SymTensorField<T>,
    inverse: &SymTensorField<T>,
) -> Christoffel<T> {
    let n = grid.dim();
    let comps: Vec<Vec<Vec<T>>> = (0..n)
        .map(|i| (0..n).map(|j| metric.component_field(i, j)).collect())
        .collect();
    let per_point: Vec<Vec<T>> = (0..grid.len())
        .into_par_iter()
        .map(|pt| {
            // dg[a][i][j] = d_a g_ij
            let mut dg = vec![T::zero(); n * n * n];
            for a in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        dg[(a * n + i) * n + j] = grid.d1(&comps[i][j], pt, a);
                    }
                }
            }
            let half = T::lit(0.5);
            let mut out = vec![T::zero(); n * n * n];
            for k in 0..n {
                for i in 0..n {
                    for j in i..n {
                        let mut s = T::zero();
                        for l in 0..n {
                            let term = dg[(i * n + j) * n + l] + dg[(j * n + i) * n + l]
                                - dg[(l * n + i) * n + j];
                            s += inverse.get(pt, k, l) * term;
                        }
                        out[(k * n + i) * n + j] = half * s;
                        out[(k * n + j) * n + i] = half * s;
                    }
                }
            }
            out
        })
        .collect();
    Christoffel {
        n,
        data: per_point.into_iter().flatten().collect(),
    }
}

/// Ricci tensor and scalar curvature from Christoffel symbols.
pub fn curvature_fd<T: Real>(
    grid: &Grid,
    inverse: &SymTensorField<T>,
    gamma: &Christoffel<T>,
) -> (SymTensorField<T>, ScalarField<T>) {
    let n = grid.dim();
    let d1_gamma = |pt: usize, axis: usize, k: usize, i: usize, j: usize| -> T {
        let st = grid.stencil(pt);
        let (plus, minus) = grid.axis_slot(axis);
        (gamma.get(st[plus], k, i, j) - gamma.get(st[minus], k, i, j))
            / (T::lit(2.0) * grid.h::<T>(axis))
    };
    let per_point: Vec<(SquareMatrix<T>, T)> = (0..grid.len())
        .into_par_iter()
        .map(|pt| {
            let mut ric = SquareMatrix::zeros(n);
            for j in 0..n {
                for k in j..n {
                    let mut v = T::zero();
                    for i in 0..n {
                        v += d1_gamma(pt, i, i, j, k) - d1_gamma(pt, k, i, i, j);
                        for m in 0..n {
                            v += gamma.get(pt, i, i, m) * gamma.get(pt, m, j, k)
                                - gamma.get(pt, i, k, m) * gamma.get(pt, m, i, j);
                        }
                    }
                    ric.set(j, k, v);
                    ric.set(k, j, v);
                }
            }
            let r = ric.contract(&inverse.matrix(pt));
            (ric, r)
        })
        .collect();
    let mut ricci = SymTensorField::zeros(grid);
    let mut scalar = Vec::with_capacity(grid.len());
    for (pt, (ric, r)) in per_point.into_iter().enumerate() {
        ricci.set_matrix(pt, &ric);
        scalar.push(r);
    }
    (ricci, ScalarField::from_raw(scalar))
}

/// `A^t_g = (Ric_g - t R_g / (2(n-1)) g) / (n - 2)`.
pub fn modified_schouten<T: Real>(geometry: &GeometrySetup<T>) -> Result<SymTensorField<T>> {
    let n = geometry.dim();
    if n < 3 {
        return Err(Error::Parameter(format!(
            "modified Schouten tensor needs n >= 3, got {n}"
        )));
    }
    let t = geometry.t_param;
    let nf = T::lit(n as f64);
    let denom = nf - T::lit(2.0);
    let trace_factor = t / (T::lit(2.0) * (nf - T::one()));
    let mut out = SymTensorField::zeros(&geometry.grid);
    for pt in 0..geometry.grid.len() {
        let r = geometry.scalar_curv.values()[pt];
        for i in 0..n {
            for j in i..n {
                let v = (geometry.ricci.get(pt, i, j)
                    - trace_factor * r * geometry.metric.get(pt, i, j))
                    / denom;
                out.set(pt, i, j, v);
            }
        }
    }
    Ok(out)
}

/// Pointwise first and second order data of a scalar field.
pub(crate) struct ScalarJet<T> {
    pub grad: Vec<T>,
    /// Covariant Hessian.
    pub hess: SquareMatrix<T>,
    /// `g^ij (nabla^2 u)_ij`.
    pub laplacian: T,
    /// `g^ij u_i u_j`.
    pub grad_sq: T,
}

pub(crate) fn scalar_jet<T: Real>(geometry: &GeometrySetup<T>, u: &[T], pt: usize) -> ScalarJet<T> {
    let grad = geometry.grid.gradient(u, pt);
    let hess = geometry.covariant_hessian(u, pt, &grad);
    let ginv = geometry.inverse_metric.matrix(pt);
    let laplacian = hess.contract(&ginv);
    let n = grad.len();
    let mut grad_sq = T::zero();
    for i in 0..n {
        for j in 0..n {
            grad_sq += ginv.get(i, j) * grad[i] * grad[j];
        }
    }
    ScalarJet {
        grad,
        hess,
        laplacian,
        grad_sq,
    }
}

/// The tensor `A^t` of the conformal metric `e^{2u} g`:
/// `A - nabla^2 u - ((1-t)/(n-2)) (Delta u) g + du (x) du - ((2-t)/2) |du|^2 g`.
pub fn conformal_schouten<T: Real>(
    a_background: &SymTensorField<T>,
    u: &ScalarField<T>,
    geometry: &GeometrySetup<T>,
    t: T,
) -> Result<SymTensorField<T>> {
    let n = geometry.dim();
    let c = trace_coefficient(n, t)?;
    let k = (T::lit(2.0) - t) / T::lit(2.0);
    let mats: Vec<SquareMatrix<T>> = (0..geometry.grid.len())
        .into_par_iter()
        .map(|pt| {
            let jet = scalar_jet(geometry, u.values(), pt);
            let g = geometry.metric.matrix(pt);
            let iso = c * jet.laplacian + k * jet.grad_sq;
            SquareMatrix::from_fn(n, |i, j| {
                a_background.get(pt, i, j) - jet.hess.get(i, j) - iso * g.get(i, j)
                    + jet.grad[i] * jet.grad[j]
            })
        })
        .collect();
    Ok(SymTensorField::from_matrices(&geometry.grid, &mats))
}

/// Spectrum of `V` relative to the metric at every point, ascending.
pub fn metric_eigenvalues<T: Real>(
    v: &SymTensorField<T>,
    geometry: &GeometrySetup<T>,
) -> Result<Vec<EigenSpectrum<T>>> {
    (0..geometry.grid.len())
        .into_par_iter()
        .map(|pt| {
            let eig = generalized_eigen(&v.matrix(pt), &geometry.metric.matrix(pt))
                .map_err(|_| Error::Geometry { point: pt })?;
            EigenSpectrum::new(eig.values)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificationReport {
    pub passed: bool,
    pub p: usize,
    pub margin: f64,
    /// Smallest p-sum of `lambda(-A^t)` over the grid.
    pub worst_margin: f64,
    pub worst_point: usize,
    pub worst_coords: Vec<f64>,
    /// First point (in grid order) at or below the margin, if any.
    pub violating_point: Option<usize>,
}

/// Checks `-A^t in P_p` with the given margin at every grid point.
pub fn certify_background<T: Real>(
    geometry: &GeometrySetup<T>,
    a_field: &SymTensorField<T>,
    p: usize,
    margin: T,
) -> Result<CertificationReport> {
    let spectra = metric_eigenvalues(&a_field.scale(-T::one()), geometry)?;
    let mut worst = T::infinity();
    let mut worst_point = 0;
    let mut violating_point = None;
    for (pt, s) in spectra.iter().enumerate() {
        let check = cone_contains(s, p, margin)?;
        if check.worst_sum < worst {
            worst = check.worst_sum;
            worst_point = pt;
        }
        if !check.inside && violating_point.is_none() {
            violating_point = Some(pt);
        }
    }
    Ok(CertificationReport {
        passed: violating_point.is_none(),
        p,
        margin: margin.as_f64(),
        worst_margin: worst.as_f64(),
        worst_point,
        worst_coords: geometry.grid.coords::<f64>(worst_point),
        violating_point,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AmplitudeSearch {
    /// `(amplitude, worst margin)` for every amplitude tried, in order.
    pub tried: Vec<(f64, f64)>,
    /// First amplitude whose geometric `A^t` certified.
    pub certified_amplitude: Option<f64>,
}

/// Scales a conformal factor `phi = a * shape` through `amplitudes` and
/// certifies the geometric `A^t` of `e^{2 phi} delta` for each.
pub fn amplitude_search<T: Real>(
    grid: &Grid,
    shape: &TrigPoly,
    t: T,
    p: usize,
    margin: T,
    amplitudes: &[f64],
) -> Result<AmplitudeSearch> {
    shape.check_dim(grid.dim())?;
    let base: ScalarField<T> = shape.sample(grid);
    let mut tried = Vec::new();
    let mut certified_amplitude = None;
    for &a in amplitudes {
        let phi = base.map(|v| v * T::lit(a));
        let geom = GeometrySetup::build_conformal_flat(grid, &phi, t)?;
        let report = certify_background(&geom, &geom.modified_schouten()?, p, margin)?;
        tried.push((a, report.worst_margin));
        if report.passed {
            certified_amplitude = Some(a);
            break;
        }
    }
    Ok(AmplitudeSearch {
        tried,
        certified_amplitude,
    })
}

/// Isotropic tensor field `c(x) * g`.
pub fn isotropic_field<T: Real>(
    geometry: &GeometrySetup<T>,
    level: &ScalarField<T>,
) -> SymTensorField<T> {
    geometry.metric.scale_pointwise(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::Wave;

    fn phi_field(grid: &Grid, eps: f64) -> (TrigPoly, ScalarField<f64>) {
        let poly = TrigPoly::constant(0.0).with_term(eps, Wave::Sin, vec![1, 0, 0]);
        let f = poly.sample(grid);
        (poly, f)
    }

    #[test]
    fn flat_geometry_has_no_curvature() {
        let g = Grid::cube(3, 8).unwrap();
        let geo = GeometrySetup::<f64>::build_flat(&g, 0.3).unwrap();
        assert_eq!(geo.scalar_curv.sup_norm(), 0.0);
        assert_eq!(geo.modified_schouten().unwrap().max_abs(), 0.0);
        let u = TrigPoly::cos_sum(3, 0.2).sample::<f64>(&g);
        let pt = 77;
        let du = g.gradient(u.values(), pt);
        assert_eq!(
            geo.covariant_hessian(u.values(), pt, &du),
            g.hessian(u.values(), pt)
        );
    }

    #[test]
    fn zero_conformal_factor_is_flat() {
        let g = Grid::cube(3, 8).unwrap();
        let geo =
            GeometrySetup::<f64>::build_conformal_flat(&g, &ScalarField::zeros(&g), 0.0).unwrap();
        let flat = GeometrySetup::<f64>::build_flat(&g, 0.0).unwrap();
        assert_eq!(geo.metric, flat.metric);
        assert_eq!(geo.christoffel.max_abs(), 0.0);
        assert_eq!(geo.ricci.max_abs(), 0.0);
    }

    #[test]
    fn constant_metric_has_no_christoffel() {
        let g = Grid::cube(3, 8).unwrap();
        let m =
            SquareMatrix::from_row_major(3, vec![2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let metric = SymTensorField::from_fn(&g, |_| m.clone());
        let geo = GeometrySetup::from_metric(&g, metric, 0.0).unwrap();
        assert_eq!(geo.christoffel.max_abs(), 0.0);
        assert_eq!(geo.scalar_curv.sup_norm(), 0.0);
    }

    #[test]
    fn degenerate_metric_is_reported() {
        let g = Grid::cube(3, 8).unwrap();
        let mut metric = SymTensorField::from_fn(&g, |_| SquareMatrix::<f64>::identity(3));
        metric.set(10, 1, 1, -1.0);
        match GeometrySetup::from_metric(&g, metric, 0.0) {
            Err(Error::Geometry { point }) => assert_eq!(point, 10),
            other => panic!("expected geometry error, got {other:?}"),
        }
    }

    fn christoffel_error(points: usize) -> f64 {
        let g = Grid::cube(3, points).unwrap();
        let (poly, phi) = phi_field(&g, 0.2);
        let geo = GeometrySetup::build_conformal_flat(&g, &phi, 0.0).unwrap();
        let mut err = 0.0f64;
        for pt in 0..g.len() {
            let dphi = poly.gradient(&g.coords::<f64>(pt));
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut want = 0.0;
                        if i == k {
                            want += dphi[j];
                        }
                        if j == k {
                            want += dphi[i];
                        }
                        if i == j {
                            want -= dphi[k];
                        }
                        err = err.max((geo.christoffel.get(pt, k, i, j) - want).abs());
                    }
                }
            }
        }
        assert_eq!(geo.christoffel.asymmetry(), 0.0);
        err
    }

    #[test]
    fn christoffel_converges_at_second_order() {
        let ratio = christoffel_error(16) / christoffel_error(32);
        assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
    }

    #[test]
    fn scalar_curvature_is_metric_trace_of_ricci() {
        let g = Grid::cube(3, 10).unwrap();
        let phi = TrigPoly::sin_sum(3, 0.3).sample::<f64>(&g);
        let geo = GeometrySetup::build_conformal_flat(&g, &phi, 0.0).unwrap();
        for pt in [0, 123, 999] {
            let r = geo
                .ricci
                .matrix(pt)
                .contract(&geo.inverse_metric.matrix(pt));
            assert!((r - geo.scalar_curv.values()[pt]).abs() < 1e-12);
        }
    }

    #[test]
    fn schouten_linear_in_ricci() {
        let g = Grid::cube(3, 8).unwrap();
        let mut geo = GeometrySetup::<f64>::build_flat(&g, 0.0).unwrap();
        // synthetic Ric = -c g with R = -3c
        let c = 0.7;
        geo.ricci = geo.metric.scale(-c);
        geo.scalar_curv = ScalarField::constant(&g, -3.0 * c);
        let a0 = geo.modified_schouten().unwrap();
        assert!((a0.get(5, 0, 0) + c).abs() < 1e-15);
        assert!(a0.get(5, 0, 1).abs() < 1e-15);
        geo.t_param = 1.0;
        let a1 = geo.modified_schouten().unwrap();
        // classical Schouten: (Ric - R g / 4) / 1 = -c + 3c/4
        assert!((a1.get(5, 2, 2) + 0.25 * c).abs() < 1e-15);
    }

    #[test]
    fn conformal_schouten_trivial_changes() {
        let g = Grid::cube(3, 8).unwrap();
        let phi = TrigPoly::sin_sum(3, 0.1).sample::<f64>(&g);
        let geo = GeometrySetup::build_conformal_flat(&g, &phi, 0.0).unwrap();
        let a = geo.modified_schouten().unwrap();
        let same = conformal_schouten(&a, &ScalarField::zeros(&g), &geo, 0.0).unwrap();
        assert_eq!(same.max_abs_difference(&a), 0.0);
        let same = conformal_schouten(&a, &ScalarField::constant(&g, 0.8), &geo, 0.0).unwrap();
        assert!(same.max_abs_difference(&a) < 1e-14);
    }

    #[test]
    fn metric_spectrum_examples() {
        let g = Grid::cube(3, 8).unwrap();
        let phi = TrigPoly::sin_sum(3, 0.2).sample::<f64>(&g);
        let geo = GeometrySetup::build_conformal_flat(&g, &phi, 0.0).unwrap();
        let spectra = metric_eigenvalues(&geo.metric.scale(2.5), &geo).unwrap();
        for s in &spectra {
            for &v in s.values() {
                assert!((v - 2.5).abs() < 1e-12);
            }
        }
        let flat = GeometrySetup::<f64>::build_flat(&g, 0.0).unwrap();
        let d = SymTensorField::from_fn(&g, |_| SquareMatrix::diagonal(&[3.0, -1.0, 2.0]));
        let spectra = metric_eigenvalues(&d, &flat).unwrap();
        assert_eq!(spectra[0].values(), &[-1.0, 2.0, 3.0]);
    }

    #[test]
    fn certification_examples() {
        let g = Grid::cube(3, 8).unwrap();
        let flat = GeometrySetup::<f64>::build_flat(&g, 0.0).unwrap();
        let report = certify_background(&flat, &flat.modified_schouten().unwrap(), 2, 0.0).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_margin, 0.0);
        assert_eq!(report.violating_point, Some(0));

        let p = 2;
        let a = flat.metric.scale(-1.0 / p as f64);
        let report = certify_background(&flat, &a, p, 0.0).unwrap();
        assert!(report.passed);
        assert!((report.worst_margin - 1.0).abs() < 1e-14);

        // shifting A by -eps g raises every p-sum by p * eps
        let eps = 0.125;
        let shifted = a.lincomb(1.0, &flat.metric, -eps);
        let r2 = certify_background(&flat, &shifted, p, 0.0).unwrap();
        assert!((r2.worst_margin - report.worst_margin - p as f64 * eps).abs() < 1e-14);
    }

    #[test]
    fn conformally_flat_torus_backgrounds_do_not_certify() {
        // total scalar curvature of a conformally flat torus cannot be negative
        // everywhere, so the geometric A^t never lies in the cone
        let g = Grid::cube(3, 12).unwrap();
        let search = amplitude_search::<f64>(
            &g,
            &TrigPoly::sin_sum(3, 1.0),
            0.0,
            2,
            1e-10,
            &[0.1, 0.3, 0.6],
        )
        .unwrap();
        assert_eq!(search.tried.len(), 3);
        assert!(search.certified_amplitude.is_none());
    }
}
