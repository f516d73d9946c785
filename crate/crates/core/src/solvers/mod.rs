//! Krylov solves, their implicit derivatives, and explicit time stepping.

mod gmres;
mod implicit;
mod integrate;
mod unrolled;

use std::collections::BTreeMap;

use crate::engine::{ExprGraph, Layered};
use crate::error::{Error, Result};
use crate::operator::TracedOperator;
use crate::tensor::Tensor;

pub use gmres::{gmres_restarted, GmresConfig, SolveReport};
pub use implicit::{ImplicitGradient, ImplicitSolution, ParametricSystem};
pub use integrate::{default_dt, integrate_explicit, rk4_unrolled_graph};
pub use unrolled::unrolled_gmres_graph;

/// A linear map on tensors of one fixed shape.
pub trait LinearMap {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;

    /// Conjugate-transpose action.
    fn adjoint_apply(&self, _y: &Tensor) -> Result<Tensor> {
        Err(Error::AdjointUnavailable)
    }
}

type TensorFn = Box<dyn Fn(&Tensor) -> Result<Tensor> + Send + Sync>;

/// A [`LinearMap`] from closures.
pub struct FnMap {
    forward: TensorFn,
    adjoint: Option<TensorFn>,
}

impl FnMap {
    pub fn new(f: impl Fn(&Tensor) -> Result<Tensor> + Send + Sync + 'static) -> Self {
        Self {
            forward: Box::new(f),
            adjoint: None,
        }
    }

    pub fn with_adjoint(
        mut self,
        f: impl Fn(&Tensor) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        self.adjoint = Some(Box::new(f));
        self
    }
}

impl LinearMap for FnMap {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        (self.forward)(x)
    }

    fn adjoint_apply(&self, y: &Tensor) -> Result<Tensor> {
        match &self.adjoint {
            Some(f) => f(y),
            None => Err(Error::AdjointUnavailable),
        }
    }
}

/// A graph `A(p)·u` with every input except `unknown` held fixed.
pub struct GraphMap<'a> {
    pub forward: &'a ExprGraph,
    pub adjoint: Option<&'a ExprGraph>,
    pub unknown: &'a str,
    pub bindings: &'a BTreeMap<String, Tensor>,
}

impl GraphMap<'_> {
    fn run(&self, graph: &ExprGraph, x: &Tensor) -> Result<Tensor> {
        graph.evaluate(&Layered([(self.unknown, x)], self.bindings))
    }
}

impl LinearMap for GraphMap<'_> {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.run(self.forward, x)
    }

    fn adjoint_apply(&self, y: &Tensor) -> Result<Tensor> {
        match self.adjoint {
            Some(g) => self.run(g, y),
            None => Err(Error::AdjointUnavailable),
        }
    }
}

/// Applies a single-input traced operator as a linear map, holding its other
/// inputs at `fixed`.
pub struct OperatorMap<'a> {
    pub op: &'a TracedOperator,
    pub adjoint: Option<&'a TracedOperator>,
    pub unknown: &'a str,
    pub fixed: &'a BTreeMap<String, Tensor>,
}

impl LinearMap for OperatorMap<'_> {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.op.evaluate(&Layered([(self.unknown, x)], self.fixed))
    }

    fn adjoint_apply(&self, y: &Tensor) -> Result<Tensor> {
        match self.adjoint {
            Some(a) => a.evaluate(&Layered([(self.unknown, y)], self.fixed)),
            None => Err(Error::AdjointUnavailable),
        }
    }
}
