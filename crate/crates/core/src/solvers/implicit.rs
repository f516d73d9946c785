//! Linear solves differentiated through the implicit function theorem.
//!
//! For `A(p) u = b` and a real loss with cotangent `ḡ_u`, the backward pass
//! solves `Aᴴ λ = ḡ_u` and returns `ḡ_b = λ` and `ḡ_p = −(∂(A(p)u)/∂p)ᴴ λ`,
//! the latter from a single reverse sweep through the graph of `A(p)u`.
//! Nothing from the forward Krylov iteration is kept.

use std::collections::BTreeMap;

use super::gmres::{gmres_restarted, GmresConfig};
use super::GraphMap;
use crate::engine::{ExprGraph, Layered};
use crate::error::{Error, Result};
use crate::operator::TracedOperator;
use crate::tensor::Tensor;

/// `A(p)·u` as a graph, with an optional graph for `A(p)ᴴ·y` that reads its
/// argument from the same input name.
#[derive(Clone, Debug)]
pub struct ParametricSystem {
    forward: ExprGraph,
    adjoint: Option<ExprGraph>,
    unknown: String,
    /// Inputs that are never differentiated (operator parameters, fixed
    /// fields).
    fixed: BTreeMap<String, Tensor>,
}

impl ParametricSystem {
    pub fn new(forward: ExprGraph, adjoint: Option<ExprGraph>, unknown: &str) -> Self {
        Self {
            forward,
            adjoint,
            unknown: unknown.to_string(),
            fixed: BTreeMap::new(),
        }
    }

    /// System from traced operators; their operator parameters become fixed
    /// bindings.
    pub fn from_operators(
        forward: &TracedOperator,
        adjoint: Option<&TracedOperator>,
        unknown: &str,
    ) -> Self {
        let mut s = Self::new(
            forward.param_graph().clone(),
            adjoint.map(|a| a.param_graph().clone()),
            unknown,
        );
        s.fixed = forward.global_params().clone();
        if let Some(a) = adjoint {
            for (k, v) in a.global_params() {
                s.fixed.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        s
    }

    pub fn with_fixed(mut self, name: &str, value: Tensor) -> Self {
        self.fixed.insert(name.to_string(), value);
        self
    }

    pub fn forward_graph(&self) -> &ExprGraph {
        &self.forward
    }

    pub fn unknown(&self) -> &str {
        &self.unknown
    }

    pub fn fixed(&self) -> &BTreeMap<String, Tensor> {
        &self.fixed
    }

    fn bindings(&self, params: &BTreeMap<String, Tensor>) -> BTreeMap<String, Tensor> {
        let mut all = self.fixed.clone();
        for (k, v) in params {
            all.insert(k.clone(), v.clone());
        }
        all
    }

    /// Applies `A(p)` to `u`.
    pub fn apply(&self, params: &BTreeMap<String, Tensor>, u: &Tensor) -> Result<Tensor> {
        let all = self.bindings(params);
        self.forward
            .evaluate(&Layered([(self.unknown.as_str(), u)], &all))
    }

    /// Applies `A(p)ᴴ` to `y`.
    pub fn apply_adjoint(&self, params: &BTreeMap<String, Tensor>, y: &Tensor) -> Result<Tensor> {
        let g = self.adjoint.as_ref().ok_or(Error::AdjointUnavailable)?;
        let all = self.bindings(params);
        g.evaluate(&Layered([(self.unknown.as_str(), y)], &all))
    }

    /// Forward solve. Non-convergence is reported in the result, not as an
    /// error.
    pub fn solve(
        &self,
        params: &BTreeMap<String, Tensor>,
        b: &Tensor,
        cfg: &GmresConfig,
    ) -> Result<ImplicitSolution<'_>> {
        let all = self.bindings(params);
        let map = GraphMap {
            forward: &self.forward,
            adjoint: self.adjoint.as_ref(),
            unknown: &self.unknown,
            bindings: &all,
        };
        let report = gmres_restarted(&map, b, cfg, None)?;
        Ok(ImplicitSolution {
            system: self,
            params: params.clone(),
            u: report.solution,
            cfg: *cfg,
            residual_norm: report.residual_norm,
            relative_residual: report.relative_residual,
            iterations: report.iterations,
            converged: report.converged,
        })
    }
}

/// Result of a forward solve, holding what the backward pass needs: the
/// solution and the parameters, nothing from the Krylov iteration.
#[derive(Clone, Debug)]
pub struct ImplicitSolution<'a> {
    system: &'a ParametricSystem,
    params: BTreeMap<String, Tensor>,
    pub u: Tensor,
    pub cfg: GmresConfig,
    pub residual_norm: f64,
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ImplicitGradient {
    /// Gradients for the requested parameter names.
    pub grads: BTreeMap<String, Tensor>,
    /// Gradient with respect to the right-hand side, `λ`.
    pub rhs: Tensor,
    pub adjoint_relative_residual: f64,
    pub adjoint_iterations: usize,
    pub adjoint_converged: bool,
    /// The forward solve missed its tolerance; the gradient is that of the
    /// returned approximate solution's defining system and may be inaccurate.
    pub forward_not_converged: bool,
}

impl ImplicitSolution<'_> {
    /// Number of tensor elements kept alive for the backward pass.
    pub fn retained_tensor_elements(&self) -> usize {
        self.u.len() + self.params.values().map(Tensor::len).sum::<usize>()
    }

    /// Backward pass for cotangent `ḡ_u` (real-pair convention).
    pub fn backward(&self, cotangent: &Tensor, wrt: &[&str]) -> Result<ImplicitGradient> {
        let sys = self.system;
        if sys.adjoint.is_none() {
            return Err(Error::AdjointUnavailable);
        }
        if cotangent.shape() != self.u.shape() {
            return Err(Error::ShapeMismatch {
                node: 0,
                expected: self.u.shape().to_vec(),
                got: cotangent.shape().to_vec(),
            });
        }
        let all = sys.bindings(&self.params);
        let map = GraphMap {
            forward: &sys.forward,
            adjoint: sys.adjoint.as_ref(),
            unknown: &sys.unknown,
            bindings: &all,
        };
        let adjoint_map = AdjointOf(&map);
        let report = gmres_restarted(&adjoint_map, &cotangent.to_complex(), &self.cfg, None)?;
        let lambda = report.solution;

        let bindings = Layered([(sys.unknown.as_str(), &self.u)], &all);
        let (_, mut grads) = sys.forward.vjp(&bindings, &lambda.scale(-1.0), wrt)?;
        for name in wrt {
            if !grads.contains_key(*name) {
                let like = self
                    .params
                    .get(*name)
                    .ok_or_else(|| Error::MissingBinding(name.to_string()))?;
                grads.insert(name.to_string(), Tensor::zeros(like.shape(), like.dtype()));
            }
        }
        Ok(ImplicitGradient {
            grads,
            rhs: lambda,
            adjoint_relative_residual: report.relative_residual,
            adjoint_iterations: report.iterations,
            adjoint_converged: report.converged,
            forward_not_converged: !self.converged,
        })
    }
}

struct AdjointOf<'a, 'b>(&'a GraphMap<'b>);

impl super::LinearMap for AdjointOf<'_, '_> {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        super::LinearMap::adjoint_apply(self.0, x)
    }
}
