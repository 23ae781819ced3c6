//! Compressed sparse row matrices and the solvers used for Newton steps.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Square CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from per-row `(col, value)` entries; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Parameter(format!(
                        "column {c} out of range in row {r}"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::LinearSolver(format!("non-finite entry in row {r}")));
                }
                if last == Some(c) {
                    *vals.last_mut().expect("entry exists") += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![T::one(); n],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }

    /// Writes `row col value` lines (zero-based indices).
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "% rows={} cols={} nnz={}", self.n, self.n, self.nnz())?;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                writeln!(w, "{r} {c} {:e}", v.as_f64())?;
            }
        }
        Ok(())
    }

    fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.n * self.n];
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                d[r * self.n + c] = v;
            }
        }
        d
    }
}

fn norm2<T: Real>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

/// Dense LU with partial pivoting. Used for small systems.
pub fn dense_lu_solve<T: Real>(a: &CsrMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.dim();
    let mut m = a.to_dense();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |s, v| s.max(v.abs()));
    for k in 0..n {
        let (piv, pval) =
            (k..n)
                .map(|r| (r, m[r * n + k].abs()))
                .fold(
                    (k, T::zero()),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pval <= scale * T::epsilon() * T::lit(n as f64) {
            return Err(Error::LinearSolver(format!(
                "matrix is singular to working precision (column {k})"
            )));
        }
        if piv != k {
            for c in 0..n {
                m.swap(k * n + c, piv * n + c);
            }
            x.swap(k, piv);
        }
        let d = m[k * n + k];
        for r in (k + 1)..n {
            let f = m[r * n + k] / d;
            if f != T::zero() {
                for c in k..n {
                    let v = m[k * n + c];
                    m[r * n + c] -= f * v;
                }
                let xk = x[k];
                x[r] -= f * xk;
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for c in (k + 1)..n {
            s -= m[k * n + c] * x[c];
        }
        x[k] = s / m[k * n + k];
    }
    Ok(x)
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
pub struct Ilu0<T> {
    lu: CsrMatrix<T>,
    diag: Vec<usize>,
}

impl<T: Real> Ilu0<T> {
    pub fn new(a: &CsrMatrix<T>) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut diag = vec![usize::MAX; n];
        for r in 0..n {
            for k in lu.row_ptr[r]..lu.row_ptr[r + 1] {
                if lu.cols[k] == r {
                    diag[r] = k;
                }
            }
            if diag[r] == usize::MAX {
                return Err(Error::LinearSolver(format!(
                    "row {r} has no diagonal entry"
                )));
            }
        }
        // position lookup for the current row
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let span = lu.row_ptr[i]..lu.row_ptr[i + 1];
            for k in span.clone() {
                pos[lu.cols[k]] = k;
            }
            for kk in span.clone() {
                let c = lu.cols[kk];
                if c >= i {
                    break;
                }
                let pivot = lu.vals[diag[c]];
                if pivot == T::zero() {
                    return Err(Error::LinearSolver(format!(
                        "zero pivot in incomplete factorization at row {c}"
                    )));
                }
                let f = lu.vals[kk] / pivot;
                lu.vals[kk] = f;
                for m in (diag[c] + 1)..lu.row_ptr[c + 1] {
                    let target = pos[lu.cols[m]];
                    if target != usize::MAX {
                        let v = lu.vals[m];
                        lu.vals[target] -= f * v;
                    }
                }
            }
            for k in span {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag[i]] == T::zero() {
                return Err(Error::LinearSolver(format!(
                    "zero pivot in incomplete factorization at row {i}"
                )));
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn apply(&self, rhs: &[T], out: &mut [T]) {
        let n = self.lu.dim();
        for i in 0..n {
            let mut s = rhs[i];
            for k in self.lu.row_ptr[i]..self.diag[i] {
                s -= self.lu.vals[k] * out[self.lu.cols[k]];
            }
            out[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = out[i];
            for k in (self.diag[i] + 1)..self.lu.row_ptr[i + 1] {
                s -= self.lu.vals[k] * out[self.lu.cols[k]];
            }
            out[i] = s / self.lu.vals[self.diag[i]];
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 80,
            max_iters: 4000,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GmresStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Restarted GMRES with right ILU(0) preconditioning.
///
/// Convergence is judged on the true residual `||b - A x|| / ||b||`,
/// recomputed at every restart.
pub fn gmres_ilu<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    opts: GmresOptions,
) -> Result<(Vec<T>, GmresStats)> {
    let n = a.dim();
    let bnorm = norm2(b);
    let mut x = vec![T::zero(); n];
    if bnorm == T::zero() {
        return Ok((
            x,
            GmresStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let precond = Ilu0::new(a)?;
    let tol = T::lit(opts.rel_tol);
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut r = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    loop {
        a.matvec_into(&x, &mut r);
        for (ri, &bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm2(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return Ok((
                x,
                GmresStats {
                    iterations: total,
                    rel_residual: rel.as_f64(),
                },
            ));
        }
        if total >= opts.max_iters {
            return Err(Error::LinearSolver(format!(
                "GMRES stalled after {total} iterations at relative residual {:e}",
                rel.as_f64()
            )));
        }
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|&v| v / beta).collect());
        // Hessenberg columns after Givens rotations
        let mut h: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut cs: Vec<T> = Vec::with_capacity(m);
        let mut sn: Vec<T> = Vec::with_capacity(m);
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut k_done = 0;
        for k in 0..m {
            precond.apply(&basis[k], &mut z);
            a.matvec_into(&z, &mut w);
            let mut col = vec![T::zero(); k + 2];
            for (j, v) in basis.iter().enumerate() {
                let hj = dot(&w, v);
                col[j] = hj;
                for (wi, &vi) in w.iter_mut().zip(v) {
                    *wi -= hj * vi;
                }
            }
            let hnext = norm2(&w);
            col[k + 1] = hnext;
            for j in 0..k {
                let t = cs[j] * col[j] + sn[j] * col[j + 1];
                col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
                col[j] = t;
            }
            let denom = (col[k] * col[k] + col[k + 1] * col[k + 1]).sqrt();
            if denom == T::zero() {
                return Err(Error::LinearSolver(
                    "GMRES breakdown: zero Hessenberg column".into(),
                ));
            }
            let c = col[k] / denom;
            let s = col[k + 1] / denom;
            cs.push(c);
            sn.push(s);
            col[k] = denom;
            col[k + 1] = T::zero();
            g[k + 1] = -s * g[k];
            g[k] = c * g[k];
            h.push(col);
            total += 1;
            k_done = k + 1;
            let happy = hnext <= T::epsilon() * beta;
            if !happy {
                basis.push(w.iter().map(|&v| v / hnext).collect());
            }
            if g[k + 1].abs() / bnorm <= tol * T::lit(0.1) || happy || total >= opts.max_iters {
                break;
            }
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![T::zero(); k_done];
        for i in (0..k_done).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_done {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![T::zero(); n];
        for (j, &yj) in y.iter().enumerate() {
            for (ui, &vi) in update.iter_mut().zip(&basis[j]) {
                *ui += yj * vi;
            }
        }
        precond.apply(&update, &mut z);
        for (xi, &zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
    }
}

/// Relative residual `||b - A x|| / ||b||` (or `||A x||` when `b = 0`).
pub fn relative_residual<T: Real>(a: &CsrMatrix<T>, x: &[T], b: &[T]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<T> = ax.iter().zip(b).map(|(&p, &q)| q - p).collect();
    let bn = norm2(b);
    let rn = norm2(&r);
    if bn == T::zero() {
        rn.as_f64()
    } else {
        (rn / bn).as_f64()
    }
}
