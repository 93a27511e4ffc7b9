//! Adaptive stochastic Galerkin finite elements for the parametric diffusion
//! problem −∇·(a(y)∇u) = 1 with an affine multilevel coefficient, using one
//! independently refined mesh per Legendre coefficient and residual estimation
//! in a multilevel hat-function frame.

pub mod apply_compress;
pub mod coeff_field;
pub mod driver;
pub mod error;
pub mod frame;
pub mod functional;
pub mod marking;
pub mod mesh;
pub mod residual;
pub mod solver;
pub mod stochastic;

pub use error::{Error, Result};
