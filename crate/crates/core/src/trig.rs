//! Finite trigonometric polynomials on the torus.
//!
//! `value(x) = constant + sum_k amp_k * {cos|sin}(freq_k . x)`. Integer
//! frequencies keep every expression periodic on `[0, 2pi)^n`, and the first
//! and second derivatives are available in closed form for manufactured
//! solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amp: f64,
    pub wave: Wave,
    pub freq: Vec<i32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, amp: f64, wave: Wave, freq: Vec<i32>) -> Self {
        self.terms.push(TrigTerm { amp, wave, freq });
        self
    }

    /// `amp * sum_i cos(x_i)` in dimension `n`.
    pub fn cos_sum(n: usize, amp: f64) -> Self {
        let mut p = Self::constant(0.0);
        for i in 0..n {
            let mut freq = vec![0; n];
            freq[i] = 1;
            p = p.with_term(amp, Wave::Cos, freq);
        }
        p
    }

    /// `amp * sum_i sin(x_i)` in dimension `n`.
    pub fn sin_sum(n: usize, amp: f64) -> Self {
        let mut p = Self::cos_sum(n, amp);
        for t in &mut p.terms {
            t.wave = Wave::Sin;
        }
        p
    }

    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.amp == 0.0 || t.freq.iter().all(|&k| k == 0))
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        for t in &self.terms {
            if t.freq.len() != n {
                return Err(Error::Parameter(format!(
                    "trigonometric term has {} frequencies, dimension is {n}",
                    t.freq.len()
                )));
            }
        }
        if !self.constant.is_finite() || self.terms.iter().any(|t| !t.amp.is_finite()) {
            return Err(Error::Parameter(
                "trigonometric coefficients must be finite".into(),
            ));
        }
        Ok(())
    }

    fn phase<T: Real>(t: &TrigTerm, x: &[T]) -> T {
        t.freq
            .iter()
            .zip(x)
            .map(|(&k, &xi)| T::lit(k as f64) * xi)
            .sum()
    }

    pub fn value<T: Real>(&self, x: &[T]) -> T {
        let mut acc = T::lit(self.constant);
        for t in &self.terms {
            let th = Self::phase(t, x);
            let w = match t.wave {
                Wave::Cos => th.cos(),
                Wave::Sin => th.sin(),
            };
            acc += T::lit(t.amp) * w;
        }
        acc
    }

    pub fn gradient<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); x.len()];
        for t in &self.terms {
            let th = Self::phase(t, x);
            // d/dtheta of the wave
            let dw = match t.wave {
                Wave::Cos => -th.sin(),
                Wave::Sin => th.cos(),
            };
            for (gi, &k) in g.iter_mut().zip(&t.freq) {
                *gi += T::lit(t.amp * k as f64) * dw;
            }
        }
        g
    }

    pub fn hessian<T: Real>(&self, x: &[T]) -> SquareMatrix<T> {
        let n = x.len();
        let mut h = SquareMatrix::zeros(n);
        for t in &self.terms {
            let th = Self::phase(t, x);
            let ddw = match t.wave {
                Wave::Cos => -th.cos(),
                Wave::Sin => -th.sin(),
            };
            for i in 0..n {
                for j in 0..n {
                    h.add_at(i, j, T::lit(t.amp * (t.freq[i] * t.freq[j]) as f64) * ddw);
                }
            }
        }
        h
    }

    pub fn sample<T: Real>(&self, grid: &Grid) -> ScalarField<T> {
        ScalarField::from_fn(grid, |x| self.value(x))
    }
}
