//! Damped-Newton continuation solver for the prescribed p-curvature equation
//! `M_p(-A^t_{g~}) = f` under a conformal change `g~ = e^{2u} g` on a periodic
//! grid over the flat torus `[0, 2pi)^n`.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`). The `*64`
//! aliases below fix the scalar type used by the command-line front end.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod cli;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod mpoly;
pub mod pde;
pub mod scalar;
pub mod solver;
pub mod sparse;
pub mod trig;

pub use error::{Error, Result};
pub use geometry::{certify_background, CertificationReport, GeometrySetup};
pub use grid::{Grid, ScalarField, SymTensorField};
pub use mpoly::{mbar_matrix, mp_eval, mp_grad_eigen, mp_grad_matrix, EigenSpectrum};
pub use pde::{Problem, ResidualField, SparseLinearSystem};
pub use scalar::Real;
pub use solver::{continuation_solve, newton_solve, ContinuationOptions, NewtonOptions};
pub use trig::{TrigPoly, Wave};

pub type Field64 = ScalarField<f64>;
pub type Tensor64 = SymTensorField<f64>;
pub type Geometry64 = GeometrySetup<f64>;
pub type Problem64 = Problem<f64>;
pub type Field32 = ScalarField<f32>;
pub type Geometry32 = GeometrySetup<f32>;
