//! Resolution of expression nodes into output families and parameter
//! graphs, one rule per (node, family) pair.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;

use super::stencil::{centred_stencil, stencil_len};
use super::{Expr, Node, TracedOperator};
use crate::discretization::{wavenumbers, Family, FamilyKind};
use crate::engine::{BinaryOp, ExprGraph, GraphBuilder, NodeId, UnaryOp};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, C64};

#[derive(Clone)]
enum Value {
    Const(C64),
    Field { family: Family, node: NodeId },
}

struct Tracer<'a> {
    b: GraphBuilder,
    inputs: &'a [(&'a str, &'a Family)],
    params: BTreeMap<String, Tensor>,
    memo: HashMap<*const Node, Value>,
}

pub(super) fn trace(expr: &Expr, inputs: &[(&str, &Family)]) -> Result<TracedOperator> {
    for (i, (name, _)) in inputs.iter().enumerate() {
        if inputs[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::InputConflict(name.to_string()));
        }
    }
    let mut t = Tracer {
        b: GraphBuilder::new(),
        inputs,
        params: BTreeMap::new(),
        memo: HashMap::new(),
    };
    let Value::Field { family, node } = t.visit(expr)? else {
        return Err(Error::ConstantExpression);
    };
    let used = expr.field_names();
    let inputs = used
        .iter()
        .map(|n| {
            let f = t.family_of(n).expect("resolved during tracing");
            (n.clone(), f.clone())
        })
        .collect();
    Ok(TracedOperator {
        output_family: family,
        param_graph: t.b.finish(node),
        global_params: t.params,
        inputs,
    })
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

fn unsupported(node: &'static str, family: &Family) -> Error {
    Error::UnsupportedNodeForFamily {
        node,
        family: family.short_name(),
    }
}

fn scalar_unary(op: UnaryOp, c: C64) -> C64 {
    match op {
        UnaryOp::Neg => -c,
        UnaryOp::Abs => C64::new(c.norm(), 0.0),
        UnaryOp::Sign => {
            let r = c.norm();
            if r == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                c / r
            }
        }
        UnaryOp::Sigmoid => C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) + (-c).exp()),
        UnaryOp::Exp => c.exp(),
        UnaryOp::Sin => c.sin(),
        UnaryOp::Cos => c.cos(),
        UnaryOp::Reciprocal => c.inv(),
        UnaryOp::Real => C64::new(c.re, 0.0),
        UnaryOp::Imag => C64::new(c.im, 0.0),
        UnaryOp::Conj => c.conj(),
        UnaryOp::PowI(n) => c.powi(n),
        UnaryOp::PowF(p) => c.powf(p),
    }
}

fn scalar_binary(op: BinaryOp, a: C64, b: C64) -> C64 {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
    }
}

fn same_kind(a: &Family, b: &Family) -> bool {
    match (a.kind(), b.kind()) {
        (FamilyKind::FourierSeries, FamilyKind::FourierSeries) => a.domain() == b.domain(),
        (
            FamilyKind::FiniteDifferences { accuracy: p },
            FamilyKind::FiniteDifferences { accuracy: q },
        ) => p == q && a.domain() == b.domain(),
        (FamilyKind::Polynomial { .. }, FamilyKind::Polynomial { .. }) => true,
        (FamilyKind::Arbitrary { .. }, FamilyKind::Arbitrary { .. }) => a.domain() == b.domain(),
        _ => false,
    }
}

impl Tracer<'_> {
    fn family_of(&self, name: &str) -> Option<&Family> {
        self.inputs
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| *f)
    }

    fn visit(&mut self, e: &Expr) -> Result<Value> {
        let key = std::sync::Arc::as_ptr(&e.0);
        if let Some(v) = self.memo.get(&key) {
            return Ok(v.clone());
        }
        let v = match &*e.0 {
            Node::Field(name) => {
                let family = self
                    .family_of(name)
                    .ok_or_else(|| Error::UnknownFieldName(name.clone()))?
                    .clone();
                if self.params.contains_key(name) {
                    return Err(Error::ParamShapeConflict(name.clone()));
                }
                let node = self
                    .b
                    .input(name, &family.param_shape(), family.param_dtype())?;
                Value::Field { family, node }
            }
            Node::Const(c) => Value::Const(*c),
            Node::Gradient(x) => {
                let (f, n) = self.field(x)?;
                self.gradient(&f, n)?
            }
            Node::DiagJacobian(x) => {
                let (f, n) = self.field(x)?;
                self.diag_jacobian(&f, n)?
            }
            Node::SumOverDims(x) => {
                let (f, n) = self.field(x)?;
                self.sum_over_dims(&f, n)?
            }
            Node::Laplacian(x) => {
                let (f, n) = self.field(x)?;
                self.laplacian(&f, n)?
            }
            Node::Unary(op, x) => match self.visit(x)? {
                Value::Const(c) => Value::Const(scalar_unary(*op, c)),
                Value::Field { family, node } => self.unary(*op, &family, node)?,
            },
            Node::Binary(op, a, c) => {
                let (a, c) = (self.visit(a)?, self.visit(c)?);
                self.binary(*op, a, c)?
            }
        };
        self.memo.insert(key, v.clone());
        Ok(v)
    }

    fn field(&mut self, e: &Expr) -> Result<(Family, NodeId)> {
        match self.visit(e)? {
            Value::Field { family, node } => Ok((family, node)),
            // derivatives of constants vanish, but the result has no family
            Value::Const(_) => Err(Error::ConstantExpression),
        }
    }

    fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.family_of(name).is_some() {
            return Err(Error::ParamShapeConflict(name.to_string()));
        }
        let entry = self.params.entry(name.to_string()).or_insert(value);
        let (shape, dtype) = (entry.shape().to_vec(), entry.dtype());
        self.b
            .input(name, &shape, dtype)
            .map_err(|_| Error::ParamShapeConflict(name.to_string()))
    }

    fn const_node(&mut self, c: C64) -> NodeId {
        if c.im == 0.0 {
            self.b.scalar(c.re)
        } else {
            self.b.complex_scalar(c)
        }
    }

    fn out(&self, family: &Family, components: usize, node: NodeId) -> Value {
        Value::Field {
            family: family.with(family.kind().clone(), components, self.b.dtype(node)),
            node,
        }
    }

    // ----- derivative kernels on gridded parameters -----

    /// Derivative of order `order` along `axis` of gridded parameters
    /// (shape `n ⊕ [m]`).
    fn grid_derivative(
        &mut self,
        family: &Family,
        x: NodeId,
        axis: usize,
        order: usize,
    ) -> Result<NodeId> {
        let domain = family.domain().expect("gridded family").clone();
        match family.kind() {
            FamilyKind::FourierSeries => {
                let mut y = x;
                for _ in 0..order {
                    y = self.spectral_derivative(&domain, y, axis, family.dtype())?;
                }
                Ok(y)
            }
            FamilyKind::FiniteDifferences { accuracy } => {
                let w = self.fd_stencil(&domain, axis, order, *accuracy)?;
                self.b.convolve(x, w, axis)
            }
            _ => unreachable!("not a gridded family"),
        }
    }

    /// `idft(i k ⊙ dft(θ))` along one axis. For real fields the real part is
    /// kept, which removes the imaginary Nyquist contribution.
    fn spectral_derivative(
        &mut self,
        domain: &crate::geometry::Domain,
        x: NodeId,
        axis: usize,
        dtype: DType,
    ) -> Result<NodeId> {
        let k = self.param(
            &format!("k_{}", AXIS_NAMES[axis]),
            wavenumbers(domain, axis, false),
        )?;
        let i = self.b.complex_scalar(Complex64::new(0.0, 1.0));
        let ik = self.b.mul(i, k)?;
        let z = self.b.promote(x)?;
        let zh = self.b.dft(z, &[axis])?;
        let dz = self.b.scale_axis(zh, ik, axis)?;
        let y = self.b.idft(dz, &[axis])?;
        if dtype == DType::Real {
            self.b.real(y)
        } else {
            Ok(y)
        }
    }

    fn fd_stencil(
        &mut self,
        domain: &crate::geometry::Domain,
        axis: usize,
        order: usize,
        accuracy: usize,
    ) -> Result<NodeId> {
        let points = stencil_len(order, accuracy);
        let extent = domain.n()[axis];
        if points > extent {
            return Err(Error::AccuracyTooHighForGrid { points, extent });
        }
        let scale = domain.dx()[axis].powi(-(order as i32));
        let w: Vec<f64> = centred_stencil(order, accuracy)?
            .iter()
            .map(|v| v * scale)
            .collect();
        let name = format!("fd_d{order}_a{accuracy}_{}", AXIS_NAMES[axis]);
        self.param(&name, Tensor::vector(&w))
    }

    fn poly_derivative(&mut self, family: &Family, x: NodeId) -> Result<Value> {
        let FamilyKind::Polynomial { degree } = *family.kind() else {
            unreachable!()
        };
        let dtype = self.b.dtype(x);
        if degree == 0 {
            let z = self.b.constant(Tensor::zeros(&[1], dtype));
            return Ok(Value::Field {
                family: family.with(FamilyKind::Polynomial { degree: 0 }, 1, dtype),
                node: z,
            });
        }
        let tail = self.b.slice(x, 0, 1, degree)?;
        let c: Vec<f64> = (1..=degree).map(|i| i as f64).collect();
        let c = self.b.constant(Tensor::vector(&c));
        let node = self.b.mul(tail, c)?;
        Ok(Value::Field {
            family: family.with(FamilyKind::Polynomial { degree: degree - 1 }, 1, dtype),
            node,
        })
    }

    // ----- arbitrary family: operators act on the interpolation graph -----

    fn arbitrary_map(
        &mut self,
        family: &Family,
        node: NodeId,
        f: impl FnOnce(&mut GraphBuilder, &ExprGraph, NodeId, NodeId) -> Result<NodeId>,
    ) -> Result<Value> {
        let FamilyKind::Arbitrary {
            graph,
            theta_shape,
            theta_dtype,
        } = family.kind()
        else {
            unreachable!()
        };
        let domain = family.domain().expect("arbitrary families carry a domain");
        let mut gb = GraphBuilder::new();
        let theta = gb.input("theta", theta_shape, *theta_dtype)?;
        let x = gb.input("x", &[domain.ndim()], DType::Real)?;
        let out = f(&mut gb, graph, theta, x)?;
        let g = gb.finish(out);
        Ok(Value::Field {
            family: Family::arbitrary(domain, g, theta_shape, *theta_dtype)?,
            node,
        })
    }

    fn arbitrary_gradient(&mut self, family: &Family, node: NodeId) -> Result<Value> {
        let d = family.ndim();
        self.arbitrary_map(family, node, |gb, g, theta, x| {
            let parts = (0..d)
                .map(|a| partial(gb, g, theta, x, a, d))
                .collect::<Result<Vec<_>>>()?;
            gb.concat(&parts, 0)
        })
    }

    fn arbitrary_diag(&mut self, family: &Family, node: NodeId) -> Result<Value> {
        let d = family.ndim();
        self.arbitrary_map(family, node, |gb, g, theta, x| {
            let parts = (0..d)
                .map(|a| {
                    let p = partial(gb, g, theta, x, a, d)?;
                    gb.slice(p, 0, a, 1)
                })
                .collect::<Result<Vec<_>>>()?;
            gb.concat(&parts, 0)
        })
    }

    // ----- node rules -----

    fn gradient(&mut self, family: &Family, x: NodeId) -> Result<Value> {
        if family.components() != 1 {
            return Err(Error::ComponentMismatch {
                expected: 1,
                got: family.components(),
            });
        }
        let d = family.ndim();
        match family.kind() {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let parts = (0..d)
                    .map(|a| self.grid_derivative(family, x, a, 1))
                    .collect::<Result<Vec<_>>>()?;
                let node = self.b.concat(&parts, d)?;
                Ok(self.out(family, d, node))
            }
            FamilyKind::Polynomial { .. } => self.poly_derivative(family, x),
            FamilyKind::Arbitrary { .. } => self.arbitrary_gradient(family, x),
        }
    }

    fn diag_jacobian(&mut self, family: &Family, x: NodeId) -> Result<Value> {
        let d = family.ndim();
        if family.components() != d {
            return Err(Error::ComponentMismatch {
                expected: d,
                got: family.components(),
            });
        }
        match family.kind() {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let parts = (0..d)
                    .map(|a| {
                        let c = self.b.slice(x, d, a, 1)?;
                        self.grid_derivative(family, c, a, 1)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let node = self.b.concat(&parts, d)?;
                Ok(self.out(family, d, node))
            }
            FamilyKind::Polynomial { .. } => self.poly_derivative(family, x),
            FamilyKind::Arbitrary { .. } => self.arbitrary_diag(family, x),
        }
    }

    fn sum_over_dims(&mut self, family: &Family, x: NodeId) -> Result<Value> {
        if family.components() == 1 {
            return Ok(Value::Field {
                family: family.clone(),
                node: x,
            });
        }
        match family.kind() {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let node = self.b.sum_axis(x, family.ndim())?;
                Ok(self.out(family, 1, node))
            }
            FamilyKind::Polynomial { .. } => unreachable!("polynomials have one component"),
            FamilyKind::Arbitrary { .. } => self.arbitrary_map(family, x, |gb, g, theta, xx| {
                let y = inline_family(gb, g, theta, xx)?;
                gb.sum_axis(y, 0)
            }),
        }
    }

    fn laplacian(&mut self, family: &Family, x: NodeId) -> Result<Value> {
        if family.components() != 1 {
            return Err(Error::ComponentMismatch {
                expected: 1,
                got: family.components(),
            });
        }
        if let FamilyKind::FiniteDifferences { .. } = family.kind() {
            let mut acc: Option<NodeId> = None;
            for a in 0..family.ndim() {
                let t = self.grid_derivative(family, x, a, 2)?;
                acc = Some(match acc {
                    Some(s) => self.b.add(s, t)?,
                    None => t,
                });
            }
            let node = acc.expect("at least one axis");
            return Ok(self.out(family, 1, node));
        }
        let Value::Field {
            family: f1,
            node: n1,
        } = self.gradient(family, x)?
        else {
            unreachable!()
        };
        let Value::Field {
            family: f2,
            node: n2,
        } = self.diag_jacobian(&f1, n1)?
        else {
            unreachable!()
        };
        self.sum_over_dims(&f2, n2)
    }

    fn unary(&mut self, op: UnaryOp, family: &Family, x: NodeId) -> Result<Value> {
        match family.kind() {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let node = self.b.unary(op, x)?;
                Ok(self.out(family, family.components(), node))
            }
            FamilyKind::Polynomial { .. } => match op {
                // coefficient-wise maps that commute with evaluation at real x
                UnaryOp::Neg | UnaryOp::Conj | UnaryOp::Real | UnaryOp::Imag => {
                    let node = self.b.unary(op, x)?;
                    Ok(self.out(family, 1, node))
                }
                _ => Err(unsupported("elementwise", family)),
            },
            FamilyKind::Arbitrary { .. } => self.arbitrary_map(family, x, |gb, g, theta, xx| {
                let y = inline_family(gb, g, theta, xx)?;
                gb.unary(op, y)
            }),
        }
    }

    fn binary(&mut self, op: BinaryOp, a: Value, c: Value) -> Result<Value> {
        match (a, c) {
            (Value::Const(p), Value::Const(q)) => Ok(Value::Const(scalar_binary(op, p, q))),
            (Value::Field { family, node }, Value::Const(q)) => {
                self.with_const(op, &family, node, q, false)
            }
            (Value::Const(p), Value::Field { family, node }) => {
                self.with_const(op, &family, node, p, true)
            }
            (
                Value::Field {
                    family: fa,
                    node: na,
                },
                Value::Field {
                    family: fc,
                    node: nc,
                },
            ) => self.field_field(op, &fa, na, &fc, nc),
        }
    }

    /// `field op c`, or `c op field` when `const_first`.
    fn with_const(
        &mut self,
        op: BinaryOp,
        family: &Family,
        x: NodeId,
        c: C64,
        const_first: bool,
    ) -> Result<Value> {
        let order = |b: &mut GraphBuilder, x: NodeId, k: NodeId| {
            if const_first {
                b.binary(op, k, x)
            } else {
                b.binary(op, x, k)
            }
        };
        match family.kind() {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let k = self.const_node(c);
                let node = order(&mut self.b, x, k)?;
                Ok(self.out(family, family.components(), node))
            }
            FamilyKind::Polynomial { degree } => {
                let node = match op {
                    BinaryOp::Add | BinaryOp::Sub => {
                        let mut e0 = vec![C64::new(0.0, 0.0); degree + 1];
                        e0[0] = c;
                        let t = Tensor::complex(&[degree + 1], e0)?;
                        let t = if c.im == 0.0 { t.real_part() } else { t };
                        let k = self.b.constant(t);
                        order(&mut self.b, x, k)?
                    }
                    BinaryOp::Mul => {
                        let k = self.const_node(c);
                        self.b.mul(x, k)?
                    }
                    BinaryOp::Div if !const_first => {
                        let k = self.const_node(c);
                        self.b.div(x, k)?
                    }
                    BinaryOp::Div => return Err(unsupported("div", family)),
                };
                Ok(self.out(family, 1, node))
            }
            FamilyKind::Arbitrary { .. } => self.arbitrary_map(family, x, |gb, g, theta, xx| {
                let y = inline_family(gb, g, theta, xx)?;
                let k = if c.im == 0.0 {
                    gb.scalar(c.re)
                } else {
                    gb.complex_scalar(c)
                };
                order(gb, y, k)
            }),
        }
    }

    fn field_field(
        &mut self,
        op: BinaryOp,
        fa: &Family,
        na: NodeId,
        fc: &Family,
        nc: NodeId,
    ) -> Result<Value> {
        if !same_kind(fa, fc) {
            return Err(Error::IncompatibleFamilies(format!("{fa} and {fc}")));
        }
        let (ma, mc) = (fa.components(), fc.components());
        if ma != mc && ma != 1 && mc != 1 {
            return Err(Error::ComponentMismatch {
                expected: ma,
                got: mc,
            });
        }
        let m = ma.max(mc);
        match fa.kind() {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let node = self.b.binary(op, na, nc)?;
                Ok(self.out(fa, m, node))
            }
            FamilyKind::Polynomial { degree: p } => {
                let FamilyKind::Polynomial { degree: q } = *fc.kind() else {
                    unreachable!()
                };
                let (node, degree) = match op {
                    BinaryOp::Add | BinaryOp::Sub => {
                        let n = p.max(&q) + 1;
                        let a = self.pad_to(na, n)?;
                        let c = self.pad_to(nc, n)?;
                        (self.b.binary(op, a, c)?, n - 1)
                    }
                    BinaryOp::Mul => (self.poly_product(na, p + 1, nc, q + 1)?, p + q),
                    BinaryOp::Div => return Err(unsupported("div", fa)),
                };
                let dtype = self.b.dtype(node);
                Ok(Value::Field {
                    family: fa.with(FamilyKind::Polynomial { degree }, 1, dtype),
                    node,
                })
            }
            FamilyKind::Arbitrary { .. } => self.arbitrary_pair(op, fa, na, fc, nc),
        }
    }

    fn pad_to(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let len = self.b.shape(x)[0];
        if len == n {
            Ok(x)
        } else {
            self.b.pad(x, &[(0, n - len)])
        }
    }

    /// Coefficients of the product polynomial: `Σ_i a_i · shift_i(b)`.
    fn poly_product(&mut self, a: NodeId, p: usize, c: NodeId, q: usize) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for i in 0..p {
            let ai = self.b.slice(a, 0, i, 1)?;
            let t = self.b.mul(ai, c)?;
            let t = self.b.pad(t, &[(i, p - 1 - i)])?;
            acc = Some(match acc {
                Some(s) => self.b.add(s, t)?,
                None => t,
            });
        }
        debug_assert_eq!(self.b.shape(acc.unwrap()), [p + q - 1]);
        Ok(acc.expect("non-empty polynomial"))
    }

    /// Combines two arbitrary-family fields. When both read the same
    /// parameter node the result keeps it; otherwise the result's parameters
    /// are the two flattened parameter tensors concatenated.
    fn arbitrary_pair(
        &mut self,
        op: BinaryOp,
        fa: &Family,
        na: NodeId,
        fc: &Family,
        nc: NodeId,
    ) -> Result<Value> {
        let (FamilyKind::Arbitrary { graph: ga, .. }, FamilyKind::Arbitrary { graph: gc, .. }) =
            (fa.kind(), fc.kind())
        else {
            unreachable!()
        };
        if na == nc {
            let gc = gc.clone();
            return self.arbitrary_map(fa, na, |gb, g, theta, x| {
                let ya = inline_family(gb, g, theta, x)?;
                let yc = inline_family(gb, &gc, theta, x)?;
                gb.binary(op, ya, yc)
            });
        }

        let (sa, sc) = (fa.param_shape(), fc.param_shape());
        let (la, lc) = (sa.iter().product::<usize>(), sc.iter().product::<usize>());
        let dtype = fa.param_dtype().promote(fc.param_dtype());
        let flat = |b: &mut GraphBuilder, n: NodeId, len: usize| -> Result<NodeId> {
            let r = b.reshape(n, &[len])?;
            if dtype == DType::Complex {
                b.promote(r)
            } else {
                Ok(r)
            }
        };
        let pa = flat(&mut self.b, na, la)?;
        let pc = flat(&mut self.b, nc, lc)?;
        let node = self.b.concat(&[pa, pc], 0)?;

        let domain = fa.domain().expect("arbitrary families carry a domain");
        let mut gb = GraphBuilder::new();
        let theta = gb.input("theta", &[la + lc], dtype)?;
        let x = gb.input("x", &[domain.ndim()], DType::Real)?;
        let part = |gb: &mut GraphBuilder,
                    g: &ExprGraph,
                    start: usize,
                    len: usize,
                    shape: &[usize],
                    want: DType| {
            let s = gb.slice(theta, 0, start, len)?;
            let s = gb.reshape(s, shape)?;
            let s = if want == DType::Real && dtype == DType::Complex {
                gb.real(s)?
            } else {
                s
            };
            inline_family(gb, g, s, x)
        };
        let ya = part(&mut gb, ga, 0, la, &sa, fa.param_dtype())?;
        let yc = part(&mut gb, gc, la, lc, &sc, fc.param_dtype())?;
        let out = gb.binary(op, ya, yc)?;
        let g = gb.finish(out);
        Ok(Value::Field {
            family: Family::arbitrary(domain, g, &[la + lc], dtype)?,
            node,
        })
    }
}

fn inline_family(gb: &mut GraphBuilder, g: &ExprGraph, theta: NodeId, x: NodeId) -> Result<NodeId> {
    gb.inline(g, |name| match name {
        "theta" => Some(theta),
        "x" => Some(x),
        _ => None,
    })
}

/// `∂ f / ∂ x_axis` of an interpolation graph, inlined into `gb`.
fn partial(
    gb: &mut GraphBuilder,
    g: &ExprGraph,
    theta: NodeId,
    x: NodeId,
    axis: usize,
    d: usize,
) -> Result<NodeId> {
    if !g.has_input("x") {
        return Ok(gb.constant(Tensor::zeros(g.output_shape(), g.output_dtype())));
    }
    let mut e = vec![0.0; d];
    e[axis] = 1.0;
    let jg = g.jvp_graph("x", &Tensor::vector(&e))?;
    inline_family(gb, &jg, theta, x)
}
