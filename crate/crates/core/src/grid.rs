//! Periodic structured grid on the flat torus `[0, 2pi)^n` and the fields
//! sampled on it.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

pub const MIN_DIM: usize = 3;
pub const MIN_POINTS_PER_AXIS: usize = 8;

/// Periodic grid. Points are ordered lexicographically with the last axis
/// varying fastest.
///
/// Every point carries a fixed stencil of neighbour indices: the centre, the
/// `2n` axis neighbours and the `4 * binom(n, 2)` diagonal neighbours used by
/// the mixed second-difference stencil. See [`Grid::axis_slot`] and
/// [`Grid::cross_slot`] for the layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    shape: Vec<usize>,
    strides: Vec<usize>,
    spacing: Vec<f64>,
    len: usize,
    #[serde(skip)]
    stencil: Vec<usize>,
    #[serde(skip)]
    stencil_width: usize,
}

impl Grid {
    pub fn new(shape: Vec<usize>) -> Result<Self> {
        let n = shape.len();
        if n < MIN_DIM {
            return Err(Error::Parameter(format!(
                "grid dimension must be at least {MIN_DIM}, got {n}"
            )));
        }
        if let Some(&bad) = shape.iter().find(|&&s| s < MIN_POINTS_PER_AXIS) {
            return Err(Error::Parameter(format!(
                "each axis needs at least {MIN_POINTS_PER_AXIS} points, got {bad}"
            )));
        }
        let mut strides = vec![1; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let len = shape.iter().product();
        let spacing = shape.iter().map(|&s| 2.0 * PI / s as f64).collect();
        let stencil_width = 1 + 2 * n + 2 * n * (n - 1);
        let mut grid = Self {
            shape,
            strides,
            spacing,
            len,
            stencil: Vec::new(),
            stencil_width,
        };
        grid.stencil = grid.build_stencil();
        Ok(grid)
    }

    /// Cube grid with `points` per axis.
    pub fn cube(n: usize, points: usize) -> Result<Self> {
        Self::new(vec![points; n])
    }

    fn build_stencil(&self) -> Vec<usize> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.len * self.stencil_width);
        for pt in 0..self.len {
            out.push(pt);
            for a in 0..n {
                out.push(self.shift(pt, a, 1));
                out.push(self.shift(pt, a, -1));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let ip = self.shift(pt, i, 1);
                    let im = self.shift(pt, i, -1);
                    out.push(self.shift(ip, j, 1));
                    out.push(self.shift(ip, j, -1));
                    out.push(self.shift(im, j, 1));
                    out.push(self.shift(im, j, -1));
                }
            }
        }
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Largest grid spacing.
    pub fn h_max(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn multi_index(&self, pt: usize) -> Vec<usize> {
        self.shape
            .iter()
            .zip(&self.strides)
            .map(|(&s, &stride)| (pt / stride) % s)
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .zip(&self.strides)
            .map(|((&i, &s), &stride)| (i % s) * stride)
            .sum()
    }

    /// Coordinates `x_a = i_a * h_a` of a point.
    pub fn coords<T: Real>(&self, pt: usize) -> Vec<T> {
        self.multi_index(pt)
            .iter()
            .zip(&self.spacing)
            .map(|(&i, &h)| T::lit(i as f64 * h))
            .collect()
    }

    /// Index of the point displaced by `delta` along `axis`, with wrap-around.
    pub fn shift(&self, pt: usize, axis: usize, delta: isize) -> usize {
        let s = self.shape[axis] as isize;
        let stride = self.strides[axis];
        let i = ((pt / stride) % self.shape[axis]) as isize;
        let j = (i + delta).rem_euclid(s);
        (pt as isize + (j - i) * stride as isize) as usize
    }

    #[inline]
    pub fn stencil_width(&self) -> usize {
        self.stencil_width
    }

    /// Neighbour indices of `pt` in stencil order.
    #[inline]
    pub fn stencil(&self, pt: usize) -> &[usize] {
        &self.stencil[pt * self.stencil_width..(pt + 1) * self.stencil_width]
    }

    /// Stencil slots of `+e_axis` and `-e_axis`.
    #[inline]
    pub fn axis_slot(&self, axis: usize) -> (usize, usize) {
        (1 + 2 * axis, 2 + 2 * axis)
    }

    /// First of the four stencil slots of the pair `i < j`, ordered
    /// `(+i+j, +i-j, -i+j, -i-j)`.
    pub fn cross_slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        let n = self.dim();
        // pairs before (i, j) in lexicographic order
        let before = i * n - i * (i + 1) / 2 + (j - i - 1);
        1 + 2 * n + 4 * before
    }

    #[inline]
    pub fn h<T: Real>(&self, axis: usize) -> T {
        T::lit(self.spacing[axis])
    }

    /// Central first difference along `axis`.
    #[inline]
    pub fn d1<T: Real>(&self, values: &[T], pt: usize, axis: usize) -> T {
        let st = self.stencil(pt);
        let (plus, minus) = self.axis_slot(axis);
        (values[st[plus]] - values[st[minus]]) / (T::lit(2.0) * self.h::<T>(axis))
    }

    /// Central second difference: `(+1, -2, +1) / h^2` on the diagonal, the
    /// four-point cross stencil off the diagonal.
    #[inline]
    pub fn d2<T: Real>(&self, values: &[T], pt: usize, i: usize, j: usize) -> T {
        let st = self.stencil(pt);
        if i == j {
            let (plus, minus) = self.axis_slot(i);
            let h = self.h::<T>(i);
            (values[st[plus]] - T::lit(2.0) * values[pt] + values[st[minus]]) / (h * h)
        } else {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let c = self.cross_slot(a, b);
            let num = values[st[c]] - values[st[c + 1]] - values[st[c + 2]] + values[st[c + 3]];
            num / (T::lit(4.0) * self.h::<T>(a) * self.h::<T>(b))
        }
    }

    pub fn gradient<T: Real>(&self, values: &[T], pt: usize) -> Vec<T> {
        (0..self.dim()).map(|a| self.d1(values, pt, a)).collect()
    }

    pub fn hessian<T: Real>(&self, values: &[T], pt: usize) -> SquareMatrix<T> {
        let n = self.dim();
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = self.d2(values, pt, i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }
}

/// One value per grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalarField<T> {
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn from_values(grid: &Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Parameter(format!(
                "scalar field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "scalar field contains non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn constant(grid: &Grid, c: T) -> Self {
        Self {
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, T::zero())
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[T]) -> T) -> Self {
        Self {
            values: (0..grid.len()).map(|pt| f(&grid.coords::<T>(pt))).collect(),
        }
    }

    pub(crate) fn from_raw(values: Vec<T>) -> Self {
        Self { values }
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: T, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `max |self - other|`.
    pub fn sup_distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Periodic shift by `delta` points along `axis`: `out[x] = self[x - delta e_axis]`.
    pub fn shifted(&self, grid: &Grid, axis: usize, delta: isize) -> Self {
        Self {
            values: (0..grid.len())
                .map(|pt| self.values[grid.shift(pt, axis, -delta)])
                .collect(),
        }
    }
}

/// Number of stored components of a symmetric `n x n` tensor.
#[inline]
pub fn sym_components(n: usize) -> usize {
    n * (n + 1) / 2
}

#[inline]
fn sym_slot(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

/// Symmetric (0,2)-tensor field. Only the upper triangle is stored, row by
/// row: `(0,0), (0,1), ..., (0,n-1), (1,1), ...`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymTensorField<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SymTensorField<T> {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.dim();
        Self {
            n,
            data: vec![T::zero(); grid.len() * sym_components(n)],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize) -> SquareMatrix<T>) -> Self {
        let mut out = Self::zeros(grid);
        for pt in 0..grid.len() {
            out.set_matrix(pt, &f(pt));
        }
        out
    }

    pub fn from_matrices(grid: &Grid, mats: &[SquareMatrix<T>]) -> Self {
        Self::from_fn(grid, |pt| mats[pt].clone())
    }

    /// Raw upper-triangle storage, `components()` values per point.
    pub fn from_components(grid: &Grid, data: Vec<T>) -> Result<Self> {
        let n = grid.dim();
        if data.len() != grid.len() * sym_components(n) {
            return Err(Error::Parameter(format!(
                "tensor field has {} values, expected {}",
                data.len(),
                grid.len() * sym_components(n)
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "tensor field contains non-finite values".into(),
            ));
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn components(&self) -> usize {
        sym_components(self.n)
    }

    pub fn num_points(&self) -> usize {
        self.data.len() / self.components()
    }

    pub fn raw(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, pt: usize, i: usize, j: usize) -> T {
        self.data[pt * self.components() + sym_slot(self.n, i, j)]
    }

    #[inline]
    pub fn set(&mut self, pt: usize, i: usize, j: usize, v: T) {
        let c = self.components();
        self.data[pt * c + sym_slot(self.n, i, j)] = v;
    }

    pub fn matrix(&self, pt: usize) -> SquareMatrix<T> {
        SquareMatrix::from_fn(self.n, |i, j| self.get(pt, i, j))
    }

    /// Stores the symmetric part of `m`.
    pub fn set_matrix(&mut self, pt: usize, m: &SquareMatrix<T>) {
        let half = T::lit(0.5);
        for i in 0..self.n {
            for j in i..self.n {
                self.set(pt, i, j, (m.get(i, j) + m.get(j, i)) * half);
            }
        }
    }

    /// Component `(i, j)` as a scalar field.
    pub fn component_field(&self, i: usize, j: usize) -> Vec<T> {
        (0..self.num_points())
            .map(|pt| self.get(pt, i, j))
            .collect()
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Self {
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        }
    }

    /// Pointwise `self(x) * s(x)`.
    pub fn scale_pointwise(&self, s: &ScalarField<T>) -> Self {
        let c = self.components();
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .enumerate()
                .map(|(k, &v)| v * s.values()[k / c])
                .collect(),
        }
    }

    pub fn max_abs_difference(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
