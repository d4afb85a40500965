//! Floquet multipliers of linear periodic delay differential equations.
//!
//! The monodromy eigenproblem is reduced to roots of `det Delta_k(mu)`,
//! where `Delta_k(mu) = I - Gamma_-(mu) [I - M_k(mu)]^{-1} S` is an
//! `nk x nk` matrix built on a `k`-subinterval shooting mesh of each
//! period. Multipliers are `lambda = 1 / mu`. For `k` above the bound in
//! [`space::select_k`] the matrix has no poles in `|mu| < R`.
//!
//! Everything is generic over the real scalar (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod charmat;
pub mod error;
mod linalg;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod resolvent;
pub mod scalar;
pub mod space;
pub mod spectrum;
pub mod tables;

pub use error::{Error, Result};
pub use scalar::{Cx, Scalar};

pub type Complex64 = Cx<f64>;
pub type Dde = model::PeriodicDde<f64>;
pub type Dde32 = model::PeriodicDde<f32>;
pub type Mesh = space::Mesh<f64>;
pub type Operators = space::DiscretizedOperators<f64>;
pub type Operators32 = space::DiscretizedOperators<f32>;
pub type PiecewiseFunction = space::PiecewiseFunction<f64>;
pub type CharMatrix = charmat::CharMatrixEval<f64>;
pub type Multiplier = spectrum::MultiplierRecord<f64>;
pub type Poles = spectrum::PoleSet<f64>;
