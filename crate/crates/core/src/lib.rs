//! Differentiable operators over parametrized families of continuous functions.
//!
//! A field is a couple `(family, θ)`: a discretization family maps the finite
//! parameter tensor `θ` to a continuous function. Abstract operator
//! expressions ([`operator::Expr`]) are traced against concrete fields into a
//! [`operator::TracedOperator`], which pairs the output family with a
//! differentiable parameter graph. The same expression can therefore run as a
//! Fourier spectral method, a finite-difference scheme, a polynomial rule, or
//! through automatic differentiation of a user-supplied interpolant.

pub mod discretization;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod operator;
pub mod problems;
pub mod solvers;
pub mod tensor;
pub mod testing;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor, C64};
