use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self as k, BinKind};
use super::{BinaryOp, Bindings, ExprGraph, Node, NodeId, Op, UnaryOp};
use crate::error::{Error, Result};
use crate::tensor::{numel, DType, Tensor, C64};

/// Value and gradients of a real scalar graph.
#[derive(Clone, Debug)]
pub struct GradientResult {
    pub value: f64,
    pub grads: BTreeMap<String, Tensor>,
}

fn bin_kind(op: BinaryOp) -> BinKind {
    match op {
        BinaryOp::Add => BinKind::Add,
        BinaryOp::Sub => BinKind::Sub,
        BinaryOp::Mul => BinKind::Mul,
        BinaryOp::Div => BinKind::Div,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn apply_unary(op: UnaryOp, x: &Tensor) -> Tensor {
    match op {
        UnaryOp::Neg => k::map(x, |v| -v, |z| -z),
        UnaryOp::Abs => x.abs(),
        UnaryOp::Sign => k::map(
            x,
            |v| if v == 0.0 { 0.0 } else { v.signum() },
            |z| {
                let n = z.norm();
                if n == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    z / n
                }
            },
        ),
        UnaryOp::Sigmoid => k::map(x, sigmoid, |z| 1.0 / (1.0 + (-z).exp())),
        UnaryOp::Exp => k::map(x, f64::exp, |z| z.exp()),
        UnaryOp::Sin => k::map(x, f64::sin, |z| z.sin()),
        UnaryOp::Cos => k::map(x, f64::cos, |z| z.cos()),
        UnaryOp::Reciprocal => k::map(x, |v| 1.0 / v, |z| z.inv()),
        UnaryOp::Real => x.real_part(),
        UnaryOp::Imag => x.imag_part(),
        UnaryOp::Conj => k::conj(x),
        UnaryOp::PowI(n) => k::map(x, |v| v.powi(n), |z| z.powi(n)),
        UnaryOp::PowF(p) => k::map(x, |v| v.powf(p), |z| z.powf(p)),
    }
}

impl ExprGraph {
    fn forward<'a>(
        &'a self,
        bindings: &'a (impl Bindings + ?Sized),
    ) -> Result<Vec<Cow<'a, Tensor>>> {
        let mut values: Vec<Cow<'a, Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let out: Cow<'a, Tensor> = match &node.op {
                Op::Input(name) => {
                    let t = bindings
                        .lookup(name)
                        .ok_or_else(|| Error::MissingBinding(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::ShapeMismatch {
                            node: i,
                            expected: node.shape.clone(),
                            got: t.shape().to_vec(),
                        });
                    }
                    match (t.dtype(), node.dtype) {
                        (DType::Complex, DType::Real) => {
                            return Err(Error::DTypeMismatch(name.clone()))
                        }
                        (DType::Real, DType::Complex) => Cow::Owned(t.to_complex()),
                        _ => Cow::Borrowed(t),
                    }
                }
                Op::Constant(t) => Cow::Borrowed(t.as_ref()),
                op => Cow::Owned(Self::compute(node, op, &values)),
            };
            values.push(out);
        }
        Ok(values)
    }

    fn compute(node: &Node, op: &Op, values: &[Cow<'_, Tensor>]) -> Tensor {
        let v = |id: &NodeId| -> &Tensor { values[id.0].as_ref() };
        match op {
            Op::Input(_) | Op::Constant(_) => unreachable!("leaves handled by caller"),
            Op::Unary(u, x) => apply_unary(*u, v(x)),
            Op::Binary(b, x, y) => k::binary(bin_kind(*b), v(x), v(y), &node.shape),
            Op::MakeComplex(re, im) => k::make_complex(v(re), v(im), &node.shape),
            Op::SumAll(x) => k::sum_all(v(x)),
            Op::MeanAll(x) => {
                let t = v(x);
                k::sum_all(t).scale(1.0 / t.len() as f64)
            }
            Op::SumAxis { x, axis } => k::sum_axis(v(x), *axis),
            Op::BroadcastTo { x, shape } => k::broadcast_to(v(x), shape),
            Op::Reshape { x, shape } => v(x).reshape(shape).expect("reshape checked at build"),
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => k::slice(v(x), *axis, *start, *len),
            Op::Pad { x, widths } => k::pad(v(x), widths),
            Op::Gather { x, index } => {
                let t = v(x);
                k::gather(t, t.flat_index(index).expect("index checked at build"))
            }
            Op::Concat { parts, axis } => {
                let ts: Vec<&Tensor> = parts.iter().map(v).collect();
                k::concat(&ts, *axis, node.dtype)
            }
            Op::Dft { x, axes } => k::dft(v(x), axes, false),
            Op::Idft { x, axes } => k::dft(v(x), axes, true),
            Op::Convolve { x, kernel, axis } => k::convolve(v(x), v(kernel), *axis),
            Op::ScaleAxis { x, scale, axis } => k::scale_axis(v(x), v(scale), *axis),
        }
    }

    /// Evaluates the graph output. Real tensors may be bound to complex
    /// inputs; they are promoted.
    pub fn evaluate(&self, bindings: &(impl Bindings + ?Sized)) -> Result<Tensor> {
        let mut values = self.forward(bindings)?;
        Ok(values.swap_remove(self.output.0).into_owned())
    }

    /// Vector-Jacobian product: pulls `cotangent` (shaped like the output)
    /// back to the inputs named in `wrt`. Returns the output value and one
    /// gradient per requested name; names the graph does not read get zeros
    /// shaped like their binding.
    pub fn vjp(
        &self,
        bindings: &(impl Bindings + ?Sized),
        cotangent: &Tensor,
        wrt: &[&str],
    ) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
        let out_node = &self.nodes[self.output.0];
        if cotangent.shape() != out_node.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                node: self.output.0,
                expected: out_node.shape.clone(),
                got: cotangent.shape().to_vec(),
            });
        }
        let values = self.forward(bindings)?;

        let n = self.nodes.len();
        let mut needs = vec![false; n];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = match &node.op {
                Op::Input(name) => wrt.contains(&name.as_str()),
                Op::Constant(_) => false,
                op => op.inputs().iter().any(|d| needs[d.0]),
            };
        }

        let mut cot: Vec<Option<Tensor>> = vec![None; n];
        if needs[self.output.0] {
            cot[self.output.0] = Some(k::project(cotangent.clone(), out_node.dtype));
        }
        for i in (0..n).rev() {
            let Some(g) = cot[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Input(_) = node.op {
                cot[i] = Some(g);
                continue;
            }
            let contributions = self.backward_node(node, &g, values[i].as_ref(), &values, &needs);
            for (id, c) in contributions {
                let dtype = self.nodes[id.0].dtype;
                let c = k::project(c, dtype);
                cot[id.0] = Some(match cot[id.0].take() {
                    None => c,
                    Some(acc) => acc.add(&c).expect("cotangent shapes agree"),
                });
            }
        }

        let mut grads = BTreeMap::new();
        for &name in wrt {
            let g = match self.inputs.iter().find(|(n, _)| n == name) {
                Some((_, id)) => cot[id.0].take().unwrap_or_else(|| {
                    Tensor::zeros(&self.nodes[id.0].shape, self.nodes[id.0].dtype)
                }),
                None => {
                    let b = bindings
                        .lookup(name)
                        .ok_or_else(|| Error::MissingBinding(name.to_string()))?;
                    Tensor::zeros(b.shape(), b.dtype())
                }
            };
            grads.insert(name.to_string(), g);
        }
        let out = values[self.output.0].as_ref().clone();
        Ok((out, grads))
    }

    /// Reverse-mode gradient of a real scalar output.
    pub fn gradient(
        &self,
        wrt: &[&str],
        bindings: &(impl Bindings + ?Sized),
    ) -> Result<GradientResult> {
        let shape = self.output_shape();
        if numel(shape) != 1 || shape.len() > 1 {
            return Err(Error::NonScalarOutput(shape.to_vec()));
        }
        if self.output_dtype() != DType::Real {
            return Err(Error::NonRealOutput);
        }
        let seed = Tensor::full(shape, 1.0);
        let (value, grads) = self.vjp(bindings, &seed, wrt)?;
        Ok(GradientResult {
            value: value.as_real().expect("real output")[0],
            grads,
        })
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &Tensor,
        y: &Tensor,
        values: &[Cow<'_, Tensor>],
        needs: &[bool],
    ) -> Vec<(NodeId, Tensor)> {
        let v = |id: &NodeId| -> &Tensor { values[id.0].as_ref() };
        let shape_of = |id: &NodeId| -> &[usize] { &self.nodes[id.0].shape };
        let mut out = Vec::new();
        let mut emit = |id: NodeId, f: &dyn Fn() -> Tensor| {
            if needs[id.0] {
                out.push((id, f()));
            }
        };
        match &node.op {
            Op::Input(_) | Op::Constant(_) => {}
            Op::Unary(u, x) => {
                let xv = v(x);
                let local = |d: Tensor| k::mul(g, &k::conj(&d));
                match *u {
                    UnaryOp::Neg => emit(*x, &|| k::map(g, |a| -a, |z| -z)),
                    UnaryOp::Abs => emit(*x, &|| {
                        let s = apply_unary(UnaryOp::Sign, xv);
                        k::mul(g, &s)
                    }),
                    UnaryOp::Sign => {}
                    UnaryOp::Sigmoid => emit(*x, &|| {
                        local(k::map(y, |s| s * (1.0 - s), |s| s * (1.0 - s)))
                    }),
                    UnaryOp::Exp => emit(*x, &|| local(y.clone())),
                    UnaryOp::Sin => emit(*x, &|| local(apply_unary(UnaryOp::Cos, xv))),
                    UnaryOp::Cos => emit(*x, &|| local(k::map(xv, |a| -a.sin(), |z| -z.sin()))),
                    UnaryOp::Reciprocal => emit(*x, &|| local(k::map(y, |a| -a * a, |z| -z * z))),
                    UnaryOp::Real => emit(*x, &|| g.clone()),
                    UnaryOp::Imag => emit(*x, &|| g.scale_c(C64::new(0.0, 1.0))),
                    UnaryOp::Conj => emit(*x, &|| k::conj(g)),
                    UnaryOp::PowI(0) => {}
                    UnaryOp::PowI(p) => emit(*x, &|| {
                        local(k::map(
                            xv,
                            |a| p as f64 * a.powi(p - 1),
                            |z| z.powi(p - 1) * p as f64,
                        ))
                    }),
                    UnaryOp::PowF(p) => {
                        emit(*x, &|| local(k::map(xv, |a| p * a.powf(p - 1.0), |z| z)))
                    }
                }
            }
            Op::Binary(b, a, c) => {
                let (av, cv) = (v(a), v(c));
                match b {
                    BinaryOp::Add => {
                        emit(*a, &|| k::unbroadcast(g, shape_of(a)));
                        emit(*c, &|| k::unbroadcast(g, shape_of(c)));
                    }
                    BinaryOp::Sub => {
                        emit(*a, &|| k::unbroadcast(g, shape_of(a)));
                        emit(*c, &|| k::unbroadcast(&g.scale(-1.0), shape_of(c)));
                    }
                    BinaryOp::Mul => {
                        emit(*a, &|| {
                            k::unbroadcast(&k::mul(g, &k::conj(cv)), shape_of(a))
                        });
                        emit(*c, &|| {
                            k::unbroadcast(&k::mul(g, &k::conj(av)), shape_of(c))
                        });
                    }
                    BinaryOp::Div => {
                        emit(*a, &|| {
                            let t = k::binary(BinKind::Div, g, &k::conj(cv), g.shape());
                            k::unbroadcast(&t, shape_of(a))
                        });
                        emit(*c, &|| {
                            let q = k::binary(BinKind::Div, y, cv, y.shape());
                            let t = k::mul(g, &k::conj(&q)).scale(-1.0);
                            k::unbroadcast(&t, shape_of(c))
                        });
                    }
                }
            }
            Op::MakeComplex(re, im) => {
                emit(*re, &|| k::unbroadcast(&g.real_part(), shape_of(re)));
                emit(*im, &|| k::unbroadcast(&g.imag_part(), shape_of(im)));
            }
            Op::SumAll(x) => emit(*x, &|| k::broadcast_to(g, shape_of(x))),
            Op::MeanAll(x) => emit(*x, &|| {
                let s = shape_of(x);
                k::broadcast_to(&g.scale(1.0 / numel(s) as f64), s)
            }),
            Op::SumAxis { x, axis } => emit(*x, &|| k::expand_axis(g, *axis, shape_of(x)[*axis])),
            Op::BroadcastTo { x, .. } => emit(*x, &|| k::unbroadcast(g, shape_of(x))),
            Op::Reshape { x, .. } => emit(*x, &|| g.reshape(shape_of(x)).expect("reshape")),
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => emit(*x, &|| {
                let s = shape_of(x);
                let mut widths = vec![(0, 0); s.len()];
                widths[*axis] = (*start, s[*axis] - start - len);
                k::pad(g, &widths)
            }),
            Op::Pad { x, widths } => emit(*x, &|| k::unpad(g, widths)),
            Op::Gather { x, index } => emit(*x, &|| {
                let s = shape_of(x);
                let flat = v(x).flat_index(index).expect("index");
                k::scatter(g, s, flat)
            }),
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for p in parts {
                    let len = shape_of(p)[*axis];
                    emit(*p, &|| k::slice(g, *axis, start, len));
                    start += len;
                }
            }
            Op::Dft { x, axes } => emit(*x, &|| k::dft_unnormalized(g, axes, true)),
            Op::Idft { x, axes } => emit(*x, &|| {
                let n: usize = axes.iter().map(|&a| node.shape[a]).product();
                k::dft_unnormalized(g, axes, false).scale(1.0 / n as f64)
            }),
            Op::Convolve { x, kernel, axis } => {
                emit(*x, &|| k::convolve(g, &k::flip_conj(v(kernel)), *axis));
                emit(*kernel, &|| {
                    k::convolve_kernel_cotangent(v(x), g, *axis, shape_of(kernel)[0])
                });
            }
            Op::ScaleAxis { x, scale, axis } => {
                emit(*x, &|| k::scale_axis(g, &k::conj(v(scale)), *axis));
                emit(*scale, &|| k::scale_axis_cotangent(v(x), g, *axis));
            }
        }
        out
    }
}
