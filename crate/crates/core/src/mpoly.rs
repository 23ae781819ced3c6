//! The p-fold sum operator.
//!
//! For a spectrum `lambda` in `R^n` and `1 <= p <= n`, the raw operator is the
//! product over all p-element index subsets `S` of the subset sums
//! `lambda_S = sum_{i in S} lambda_i`. It is evaluated in the log domain and
//! exposed mainly through its normalized form
//! `M_p = exp(log(prod_S lambda_S) / binom(n, p))`, which is homogeneous of
//! degree one, elliptic and concave on the cone of spectra whose p-sums are
//! all positive.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{generalized_eigen, SquareMatrix};
use crate::scalar::Real;

/// Default membership margin used while iterating. Property checks pass 0.
pub const DEFAULT_CONE_MARGIN: f64 = 1e-10;

/// Eigenvalues of a symmetric tensor relative to a metric, in ascending order
/// when produced by this crate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenSpectrum<T> {
    values: Vec<T>,
}

impl<T: Real> EigenSpectrum<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("empty spectrum".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite eigenvalue at index {i}"
            )));
        }
        Ok(Self { values })
    }

    /// Constant spectrum `(c, ..., c)`.
    pub fn uniform(n: usize, c: T) -> Self {
        Self { values: vec![c; n] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }
}

/// One p-element subset `i_1 < ... < i_p` of `0..n` (zero-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SubsetIndex {
    pub members: Vec<usize>,
}

impl SubsetIndex {
    pub fn sum<T: Real>(&self, lambda: &[T]) -> T {
        self.members.iter().map(|&i| lambda[i]).sum()
    }
}

/// Immutable subset table for one `(n, p)`.
#[derive(Debug)]
pub struct SubsetTable {
    n: usize,
    p: usize,
    subsets: Vec<SubsetIndex>,
    /// `containing[a]` lists the ids of the subsets that contain index `a`.
    containing: Vec<Vec<usize>>,
}

impl SubsetTable {
    fn build(n: usize, p: usize) -> Self {
        let mut subsets = Vec::with_capacity(binomial(n, p) as usize);
        let mut current: Vec<usize> = (0..p).collect();
        loop {
            subsets.push(SubsetIndex {
                members: current.clone(),
            });
            // advance to the next combination in lexicographic order
            let mut i = p;
            while i > 0 && current[i - 1] == n - p + (i - 1) {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            current[i - 1] += 1;
            for k in i..p {
                current[k] = current[k - 1] + 1;
            }
        }
        let mut containing = vec![Vec::new(); n];
        for (id, s) in subsets.iter().enumerate() {
            for &a in &s.members {
                containing[a].push(id);
            }
        }
        Self {
            n,
            p,
            subsets,
            containing,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subsets(&self) -> &[SubsetIndex] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn containing(&self, a: usize) -> &[usize] {
        &self.containing[a]
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

fn check_np(n: usize, p: usize) -> Result<()> {
    if n == 0 || p == 0 || p > n {
        return Err(Error::Parameter(format!(
            "need 1 <= p <= n, got n = {n}, p = {p}"
        )));
    }
    Ok(())
}

/// Cached subset table for `(n, p)`.
pub fn subset_table(n: usize, p: usize) -> Result<Arc<SubsetTable>> {
    check_np(n, p)?;
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<SubsetTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    Ok(guard
        .entry((n, p))
        .or_insert_with(|| Arc::new(SubsetTable::build(n, p)))
        .clone())
}

/// All `binom(n, p)` subsets in lexicographic order.
pub fn enumerate_subsets(n: usize, p: usize) -> Result<Vec<SubsetIndex>> {
    Ok(subset_table(n, p)?.subsets().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConeCheck<T> {
    pub inside: bool,
    /// Minimum p-subset sum, i.e. the sum of the p smallest eigenvalues.
    pub worst_sum: T,
}

/// Sum of the `p` smallest entries.
pub fn worst_p_sum<T: Real>(lambda: &[T], p: usize) -> T {
    let mut sorted = lambda.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted[..p].iter().copied().sum()
}

pub fn cone_contains<T: Real>(
    lambda: &EigenSpectrum<T>,
    p: usize,
    margin: T,
) -> Result<ConeCheck<T>> {
    check_np(lambda.dim(), p)?;
    if margin < T::zero() {
        return Err(Error::Parameter("cone margin must be non-negative".into()));
    }
    let worst_sum = worst_p_sum(lambda.values(), p);
    Ok(ConeCheck {
        inside: worst_sum > margin,
        worst_sum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OperatorValue<T> {
    /// `sum_S log(lambda_S)`.
    pub raw_log: T,
    /// `exp(raw_log / binom(n, p))`.
    pub normalized: T,
}

fn require_cone<T: Real>(lambda: &EigenSpectrum<T>, p: usize) -> Result<()> {
    let check = cone_contains(lambda, p, T::zero())?;
    if !check.inside {
        return Err(Error::ConeViolation {
            worst_sum: check.worst_sum.as_f64(),
            point: None,
        });
    }
    Ok(())
}

pub fn mp_eval<T: Real>(lambda: &EigenSpectrum<T>, p: usize) -> Result<OperatorValue<T>> {
    require_cone(lambda, p)?;
    let table = subset_table(lambda.dim(), p)?;
    Ok(eval_with_table(lambda.values(), &table))
}

fn eval_with_table<T: Real>(lambda: &[T], table: &SubsetTable) -> OperatorValue<T> {
    let raw_log: T = table.subsets().iter().map(|s| s.sum(lambda).ln()).sum();
    let count = T::lit(table.len() as f64);
    OperatorValue {
        raw_log,
        normalized: (raw_log / count).exp(),
    }
}

/// Value and eigenvalue-space gradient of the normalized operator.
#[derive(Clone, Debug)]
pub struct ValueAndGradient<T> {
    pub value: OperatorValue<T>,
    pub grad: Vec<T>,
}

/// `dM_p/dlambda_a = (M_p / binom(n,p)) * sum_{S containing a} 1 / lambda_S`.
pub fn mp_grad_eigen<T: Real>(lambda: &EigenSpectrum<T>, p: usize) -> Result<Vec<T>> {
    Ok(mp_value_and_grad(lambda, p)?.grad)
}

pub fn mp_value_and_grad<T: Real>(
    lambda: &EigenSpectrum<T>,
    p: usize,
) -> Result<ValueAndGradient<T>> {
    require_cone(lambda, p)?;
    let table = subset_table(lambda.dim(), p)?;
    let values = lambda.values();
    let inv_sums: Vec<T> = table
        .subsets()
        .iter()
        .map(|s| s.sum(values).recip())
        .collect();
    let raw_log: T = inv_sums.iter().map(|&r| -r.ln()).sum();
    let count = T::lit(table.len() as f64);
    let normalized = (raw_log / count).exp();
    let factor = normalized / count;
    let grad = (0..lambda.dim())
        .map(|a| {
            factor
                * table
                    .containing(a)
                    .iter()
                    .map(|&id| inv_sums[id])
                    .sum::<T>()
        })
        .collect();
    Ok(ValueAndGradient {
        value: OperatorValue {
            raw_log,
            normalized,
        },
        grad,
    })
}

/// Spectral data of a symmetric matrix relative to a metric together with the
/// operator value and its matrix gradient.
#[derive(Clone, Debug)]
pub struct MatrixGradient<T> {
    pub spectrum: EigenSpectrum<T>,
    pub value: OperatorValue<T>,
    /// `dM_p/dlambda_a` for each eigenvalue.
    pub eigen_grad: Vec<T>,
    /// `M_p^{ij} = dM_p/dV_ij`, contravariant and symmetric.
    pub grad: SquareMatrix<T>,
    /// `M_p^{kl} g_kl`, equal to the sum of `eigen_grad`.
    pub metric_trace: T,
}

pub fn mp_matrix_gradient<T: Real>(
    v: &SquareMatrix<T>,
    metric: &SquareMatrix<T>,
    p: usize,
) -> Result<MatrixGradient<T>> {
    let eig = generalized_eigen(v, metric)?;
    let spectrum = EigenSpectrum::new(eig.values.clone())?;
    let vg = mp_value_and_grad(&spectrum, p)?;
    let n = v.dim();
    let x = &eig.vectors;
    let mut grad = SquareMatrix::zeros(n);
    for (a, &fa) in vg.grad.iter().enumerate() {
        for i in 0..n {
            let xi = fa * x.get(i, a);
            for j in 0..n {
                grad.add_at(i, j, xi * x.get(j, a));
            }
        }
    }
    grad.symmetrize();
    let metric_trace = vg.grad.iter().copied().sum();
    Ok(MatrixGradient {
        spectrum,
        value: vg.value,
        eigen_grad: vg.grad,
        grad,
        metric_trace,
    })
}

/// Matrix-space gradient `M_p^{ij}` of `V -> M_p(lambda_g(V))`.
pub fn mp_grad_matrix<T: Real>(
    v: &SquareMatrix<T>,
    metric: &SquareMatrix<T>,
    p: usize,
) -> Result<SquareMatrix<T>> {
    Ok(mp_matrix_gradient(v, metric, p)?.grad)
}

/// Coefficient `(1 - t) / (n - 2)` of the trace augmentation.
pub fn trace_coefficient<T: Real>(n: usize, t: T) -> Result<T> {
    if n < 3 {
        return Err(Error::Parameter(format!(
            "dimension must be at least 3, got {n}"
        )));
    }
    Ok((T::one() - t) / T::lit((n - 2) as f64))
}

/// `Mbar^{ij} = M_p^{ij} + ((1 - t)/(n - 2)) * (M_p^{kl} g_kl) * g^{ij}`.
pub fn mbar_from_gradient<T: Real>(
    mg: &MatrixGradient<T>,
    inverse_metric: &SquareMatrix<T>,
    t: T,
) -> Result<SquareMatrix<T>> {
    let c = trace_coefficient(mg.grad.dim(), t)?;
    Ok(mg.grad.add(&inverse_metric.scale(c * mg.metric_trace)))
}

pub fn mbar_matrix<T: Real>(
    v: &SquareMatrix<T>,
    metric: &SquareMatrix<T>,
    p: usize,
    t: T,
) -> Result<SquareMatrix<T>> {
    if !(t <= T::one()) {
        return Err(Error::Parameter("t must not exceed 1".into()));
    }
    let mg = mp_matrix_gradient(v, metric, p)?;
    let inv = crate::linalg::inverse_spd(metric)
        .ok_or_else(|| Error::Parameter("metric is not positive definite".into()))?;
    mbar_from_gradient(&mg, &inv, t)
}
