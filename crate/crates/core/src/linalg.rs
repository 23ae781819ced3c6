//! Small dense matrices for the pointwise tensor algebra.
//!
//! Everything here operates on the `n x n` symmetric tensors that live at a
//! single grid point (n is at most a dozen), so the routines favour clarity
//! and determinism over blocking or SIMD.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn diagonal(values: &[T]) -> Self {
        let n = values.len();
        Self::from_fn(n, |i, j| if i == j { values[i] } else { T::zero() })
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != n * n`.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data has wrong length");
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        Self::from_fn(n, |i, j| {
            let mut acc = T::zero();
            for k in 0..n {
                acc += self.get(i, k) * other.get(k, j);
            }
            acc
        })
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product `sum_ij A_ij B_ij`.
    pub fn contract(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    /// Replaces the matrix with `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = (self.get(i, j) + self.get(j, i)) * half;
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Lower Cholesky factor `L` with `A = L L^T`, or `None` when `A` is not
/// (numerically) positive definite.
pub fn cholesky<T: Real>(a: &SquareMatrix<T>) -> Option<SquareMatrix<T>> {
    let n = a.dim();
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Some(l)
}

/// Solves `L X = B` for lower-triangular `L`.
fn solve_lower<T: Real>(l: &SquareMatrix<T>, b: &SquareMatrix<T>) -> SquareMatrix<T> {
    let n = l.dim();
    let mut x = b.clone();
    for col in 0..n {
        for i in 0..n {
            let mut s = x.get(i, col);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
    }
    x
}

/// Solves `L^T X = B` for lower-triangular `L`.
fn solve_lower_transpose<T: Real>(l: &SquareMatrix<T>, b: &SquareMatrix<T>) -> SquareMatrix<T> {
    let n = l.dim();
    let mut x = b.clone();
    for col in 0..n {
        for i in (0..n).rev() {
            let mut s = x.get(i, col);
            for k in (i + 1)..n {
                s -= l.get(k, i) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn inverse_spd<T: Real>(a: &SquareMatrix<T>) -> Option<SquareMatrix<T>> {
    let l = cholesky(a)?;
    let y = solve_lower(&l, &SquareMatrix::identity(a.dim()));
    let mut inv = solve_lower_transpose(&l, &y);
    inv.symmetrize();
    Some(inv)
}

/// Eigen-decomposition of a symmetric matrix.
///
/// `values` are ascending; column `a` of `vectors` is the eigenvector paired
/// with `values[a]`.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: SquareMatrix<T>,
}

impl<T: Real> SymEigen<T> {
    pub fn vector(&self, a: usize) -> Vec<T> {
        (0..self.vectors.dim())
            .map(|i| self.vectors.get(i, a))
            .collect()
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn symmetric_eigen<T: Real>(a: &SquareMatrix<T>) -> SymEigen<T> {
    let n = a.dim();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = SquareMatrix::identity(n);
    let scale = m.max_abs();
    if scale > T::zero() {
        let tol = T::epsilon() * scale;
        for _sweep in 0..64 {
            let mut off = T::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(m.get(p, q).abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m.get(p, q);
                    if apq.abs() <= tol * T::lit(1e-3) {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (apq + apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    rotate(&mut m, &mut v, p, q, c, s);
                }
            }
        }
    }
    let values: Vec<T> = (0..n).map(|i| m.get(i, i)).collect();
    sorted_with_sign_convention(values, v)
}

fn rotate<T: Real>(
    m: &mut SquareMatrix<T>,
    v: &mut SquareMatrix<T>,
    p: usize,
    q: usize,
    c: T,
    s: T,
) {
    let n = m.dim();
    for k in 0..n {
        let mkp = m.get(k, p);
        let mkq = m.get(k, q);
        m.set(k, p, c * mkp - s * mkq);
        m.set(k, q, s * mkp + c * mkq);
    }
    for k in 0..n {
        let mpk = m.get(p, k);
        let mqk = m.get(q, k);
        m.set(p, k, c * mpk - s * mqk);
        m.set(q, k, s * mpk + c * mqk);
    }
    m.set(p, q, T::zero());
    m.set(q, p, T::zero());
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Sorts eigenpairs ascending (stable) and flips each eigenvector so that its
/// first component of non-negligible magnitude is positive.
fn sorted_with_sign_convention<T: Real>(values: Vec<T>, vectors: SquareMatrix<T>) -> SymEigen<T> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out_vecs = SquareMatrix::zeros(n);
    let mut out_vals = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        out_vals.push(values[src]);
        let norm = (0..n)
            .map(|i| vectors.get(i, src).abs())
            .fold(T::zero(), T::max);
        let cutoff = norm * T::lit(1e-8);
        let sign = (0..n)
            .map(|i| vectors.get(i, src))
            .find(|x| x.abs() > cutoff)
            .map_or(T::one(), |x| x.signum());
        for i in 0..n {
            out_vecs.set(i, col, sign * vectors.get(i, src));
        }
    }
    SymEigen {
        values: out_vals,
        vectors: out_vecs,
    }
}

/// Generalized eigenproblem `V x = lambda G x` for symmetric `V` and
/// symmetric positive-definite `G`.
///
/// The metric is reduced to the identity by its Cholesky factor; the
/// returned eigenvectors are `G`-orthonormal (`X^T G X = I`), so that
/// `V = G X diag(lambda) X^T G` and `G^{-1} = X X^T`.
pub fn generalized_eigen<T: Real>(
    v: &SquareMatrix<T>,
    metric: &SquareMatrix<T>,
) -> Result<SymEigen<T>> {
    let l = cholesky(metric)
        .ok_or_else(|| Error::Parameter("metric is not positive definite".into()))?;
    let y = solve_lower(&l, v);
    let mut c = solve_lower(&l, &y.transpose());
    c.symmetrize();
    let eig = symmetric_eigen(&c);
    let x = solve_lower_transpose(&l, &eig.vectors);
    Ok(sorted_with_sign_convention(eig.values, x))
}
