//! Operator expressions and their traced representation.
//!
//! An [`Expr`] is written once against named input fields. Tracing it
//! against concrete families produces a [`TracedOperator`]: the family of the
//! result plus an [`ExprGraph`] mapping input parameters (and operator
//! parameters such as stencils or wavenumbers) to output parameters.

mod stencil;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::ops;
use std::sync::Arc;

use crate::discretization::{Family, Field};
use crate::engine::{BinaryOp, Bindings, ExprGraph, GraphBuilder, Layered, UnaryOp};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64};

pub use stencil::{centred_stencil, stencil_len};

#[derive(Debug)]
pub(crate) enum Node {
    Field(String),
    Const(C64),
    Gradient(Expr),
    DiagJacobian(Expr),
    SumOverDims(Expr),
    Laplacian(Expr),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
}

/// Abstract operator expression over named fields. Cloning is cheap and
/// shares the subtree, so a reused subexpression is traced once.
#[derive(Clone, Debug)]
pub struct Expr(pub(crate) Arc<Node>);

impl Expr {
    fn new(node: Node) -> Self {
        Self(Arc::new(node))
    }

    pub fn field(name: &str) -> Self {
        Self::new(Node::Field(name.to_string()))
    }

    pub fn constant(v: f64) -> Self {
        Self::new(Node::Const(C64::new(v, 0.0)))
    }

    pub fn complex(v: C64) -> Self {
        Self::new(Node::Const(v))
    }

    /// `∇f` of a scalar field; the result has one component per dimension.
    pub fn gradient(&self) -> Self {
        Self::new(Node::Gradient(self.clone()))
    }

    /// Component `a` of the result is `∂_a f_a`.
    pub fn diag_jacobian(&self) -> Self {
        Self::new(Node::DiagJacobian(self.clone()))
    }

    /// Sum of all components.
    pub fn sum_over_dims(&self) -> Self {
        Self::new(Node::SumOverDims(self.clone()))
    }

    /// `Σ_a ∂²_a f`. Finite differences use a compact second-derivative
    /// stencil; every other family expands it to
    /// `sum_over_dims(diag_jacobian(gradient(f)))`.
    pub fn laplacian(&self) -> Self {
        Self::new(Node::Laplacian(self.clone()))
    }

    fn unary(&self, op: UnaryOp) -> Self {
        Self::new(Node::Unary(op, self.clone()))
    }

    pub fn abs(&self) -> Self {
        self.unary(UnaryOp::Abs)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn exp(&self) -> Self {
        self.unary(UnaryOp::Exp)
    }

    pub fn sin(&self) -> Self {
        self.unary(UnaryOp::Sin)
    }

    pub fn cos(&self) -> Self {
        self.unary(UnaryOp::Cos)
    }

    pub fn conj(&self) -> Self {
        self.unary(UnaryOp::Conj)
    }

    pub fn real(&self) -> Self {
        self.unary(UnaryOp::Real)
    }

    pub fn imag(&self) -> Self {
        self.unary(UnaryOp::Imag)
    }

    pub fn reciprocal(&self) -> Self {
        self.unary(UnaryOp::Reciprocal)
    }

    pub fn powi(&self, n: i32) -> Self {
        self.unary(UnaryOp::PowI(n))
    }

    pub fn powf(&self, p: f64) -> Self {
        self.unary(UnaryOp::PowF(p))
    }

    fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Self::new(Node::Binary(op, a, b))
    }

    /// Names of the fields the expression reads, in first-use order.
    pub fn field_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            match &*e.0 {
                Node::Field(n) => {
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
                Node::Const(_) => {}
                Node::Gradient(x)
                | Node::DiagJacobian(x)
                | Node::SumOverDims(x)
                | Node::Laplacian(x)
                | Node::Unary(_, x) => stack.push(x.clone()),
                Node::Binary(_, a, b) => {
                    stack.push(b.clone());
                    stack.push(a.clone());
                }
            }
        }
        out
    }

    /// Traces against concrete fields; only their families and names are
    /// used.
    pub fn trace(&self, fields: &[&Field]) -> Result<TracedOperator> {
        let inputs: Vec<(&str, &Family)> = fields.iter().map(|f| (f.name(), f.family())).collect();
        self.trace_families(&inputs)
    }

    pub fn trace_families(&self, inputs: &[(&str, &Family)]) -> Result<TracedOperator> {
        trace::trace(self, inputs)
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

impl From<C64> for Expr {
    fn from(v: C64) -> Self {
        Expr::complex(v)
    }
}

impl From<&Expr> for Expr {
    fn from(e: &Expr) -> Self {
        e.clone()
    }
}

macro_rules! expr_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<R: Into<Expr>> ops::$trait<R> for Expr {
            type Output = Expr;
            fn $method(self, rhs: R) -> Expr {
                Expr::binary($op, self, rhs.into())
            }
        }
        impl<R: Into<Expr>> ops::$trait<R> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: R) -> Expr {
                Expr::binary($op, self.clone(), rhs.into())
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, Expr::constant(self), rhs)
            }
        }
        impl ops::$trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::binary($op, Expr::constant(self), rhs.clone())
            }
        }
        impl ops::$trait<Expr> for C64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, Expr::complex(self), rhs)
            }
        }
        impl ops::$trait<&Expr> for C64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::binary($op, Expr::complex(self), rhs.clone())
            }
        }
    };
}

expr_binop!(Add, add, BinaryOp::Add);
expr_binop!(Sub, sub, BinaryOp::Sub);
expr_binop!(Mul, mul, BinaryOp::Mul);
expr_binop!(Div, div, BinaryOp::Div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.unary(UnaryOp::Neg)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.unary(UnaryOp::Neg)
    }
}

/// An operator resolved against input families: the output family and the
/// graph computing output parameters from input parameters and the operator
/// parameters in [`TracedOperator::global_params`].
#[derive(Clone, Debug)]
pub struct TracedOperator {
    output_family: Family,
    param_graph: ExprGraph,
    global_params: BTreeMap<String, Tensor>,
    inputs: Vec<(String, Family)>,
}

impl fmt::Display for TracedOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.inputs.iter().map(|(n, _)| n.as_str()).collect();
        write!(
            f,
            "({}) -> {} [{} nodes, {} operator parameters]",
            names.join(", "),
            self.output_family,
            self.param_graph.len(),
            self.global_params.len()
        )
    }
}

impl TracedOperator {
    pub fn output_family(&self) -> &Family {
        &self.output_family
    }

    pub fn param_graph(&self) -> &ExprGraph {
        &self.param_graph
    }

    pub fn global_params(&self) -> &BTreeMap<String, Tensor> {
        &self.global_params
    }

    /// Input fields as `(name, family)` in declaration order.
    pub fn inputs(&self) -> &[(String, Family)] {
        &self.inputs
    }

    pub fn input_family(&self, name: &str) -> Option<&Family> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    /// Replaces one operator parameter, keeping its shape.
    pub fn set_global_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .global_params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownFieldName(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(Error::ParamShapeConflict(name.to_string()));
        }
        *slot = value.to_dtype(slot.dtype());
        Ok(())
    }

    pub fn with_global_param(mut self, name: &str, value: Tensor) -> Result<Self> {
        self.set_global_param(name, value)?;
        Ok(self)
    }

    /// Output parameters for input parameters bound by field name; operator
    /// parameters come from [`Self::global_params`] unless overridden in
    /// `bindings`.
    pub fn evaluate(&self, bindings: &(impl Bindings + ?Sized)) -> Result<Tensor> {
        self.param_graph
            .evaluate(&Layered(bindings, &self.global_params))
    }

    /// Applies the operator to fields, matched to inputs by name.
    pub fn apply(&self, fields: &[&Field]) -> Result<Field> {
        let mut bound: Vec<(&str, &Tensor)> = Vec::with_capacity(fields.len());
        for (name, family) in &self.inputs {
            let field = fields
                .iter()
                .find(|f| f.name() == name)
                .ok_or_else(|| Error::MissingBinding(name.clone()))?;
            if field.family() != family {
                return Err(Error::FamilyMismatch(format!(
                    "input `{name}` traced as {family}, applied to {}",
                    field.family()
                )));
            }
            bound.push((name.as_str(), field.params()));
        }
        let params = self.evaluate(&bound)?;
        self.output_family.field("out", params)
    }

    /// Vector-Jacobian product of the parameter map. `wrt` may name input
    /// fields and operator parameters.
    pub fn vjp(
        &self,
        bindings: &(impl Bindings + ?Sized),
        cotangent: &Tensor,
        wrt: &[&str],
    ) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
        self.param_graph
            .vjp(&Layered(bindings, &self.global_params), cotangent, wrt)
    }

    /// `outer ∘ inner`: the single input of `outer` is fed by the output of
    /// `inner`. Operator parameters with equal names are shared; the
    /// composite keeps `inner`'s value.
    pub fn compose(outer: &TracedOperator, inner: &TracedOperator) -> Result<TracedOperator> {
        let [(slot, _)] = outer.inputs.as_slice() else {
            return Err(Error::FamilyMismatch(format!(
                "outer operator must take exactly one field, takes {}",
                outer.inputs.len()
            )));
        };
        Self::compose_at(outer, slot, inner)
    }

    /// Feeds `inner`'s output into the input `slot` of `outer`.
    pub fn compose_at(
        outer: &TracedOperator,
        slot: &str,
        inner: &TracedOperator,
    ) -> Result<TracedOperator> {
        let expected = outer
            .input_family(slot)
            .ok_or_else(|| Error::UnknownFieldName(slot.to_string()))?;
        if expected != &inner.output_family {
            return Err(Error::FamilyMismatch(format!(
                "`{slot}` expects {expected}, inner produces {}",
                inner.output_family
            )));
        }
        let mut global_params = inner.global_params.clone();
        for (name, t) in &outer.global_params {
            match global_params.get(name) {
                Some(existing) if existing.shape() != t.shape() => {
                    return Err(Error::ParamShapeConflict(name.clone()))
                }
                Some(_) => {}
                None => {
                    global_params.insert(name.clone(), t.clone());
                }
            }
        }

        let mut b = GraphBuilder::new();
        let inner_out = b.inline(&inner.param_graph, |_| None).map_err(conflict)?;
        let out = b
            // other leaves are re-declared by name, merging with inputs of
            // the same name that the inner graph already declared
            .inline(&outer.param_graph, |name| {
                (name == slot).then_some(inner_out)
            })
            .map_err(conflict)?;
        let param_graph = b.finish(out);

        let mut inputs = inner.inputs.clone();
        for (name, family) in &outer.inputs {
            if name == slot {
                continue;
            }
            match inputs.iter().find(|(n, _)| n == name) {
                Some((_, f)) if f != family => {
                    return Err(Error::FamilyMismatch(format!(
                        "input `{name}` has different families in the two operators"
                    )))
                }
                Some(_) => {}
                None => inputs.push((name.clone(), family.clone())),
            }
        }
        Ok(TracedOperator {
            output_family: outer.output_family.clone(),
            param_graph,
            global_params,
            inputs,
        })
    }
}

fn conflict(e: Error) -> Error {
    match e {
        Error::InputConflict(name) => Error::ParamShapeConflict(name),
        e => e,
    }
}
