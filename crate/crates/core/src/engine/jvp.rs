//! Forward-mode differentiation as a graph-to-graph transform.

use super::{BinaryOp, ExprGraph, GraphBuilder, NodeId, Op, UnaryOp};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub(super) fn jvp_graph(graph: &ExprGraph, wrt: &str, tangent: &Tensor) -> Result<ExprGraph> {
    let (shape, dtype) = graph
        .input_spec(wrt)
        .ok_or_else(|| Error::NonDifferentiableGraph(format!("graph has no input `{wrt}`")))?;
    if tangent.shape() != shape {
        return Err(Error::ShapeMismatch {
            node: 0,
            expected: shape.to_vec(),
            got: tangent.shape().to_vec(),
        });
    }
    let tangent = tangent.to_dtype(dtype);

    let mut b = GraphBuilder::new();
    let mut primal: Vec<NodeId> = Vec::with_capacity(graph.len());
    let mut tan: Vec<Option<NodeId>> = Vec::with_capacity(graph.len());

    for node in graph.nodes() {
        let p = |id: &NodeId| primal[id.0];
        let (pid, tid) = match &node.op {
            Op::Input(name) => {
                let id = b.input(name, &node.shape, node.dtype)?;
                let t = (name == wrt).then(|| b.constant(tangent.clone()));
                (id, t)
            }
            Op::Constant(t) => (b.constant(t.as_ref().clone()), None),
            op => {
                let remapped = op.remap(|i| primal[i.0]);
                let y = b.push(remapped, node.shape.clone(), node.dtype);
                let t = tangent_rule(&mut b, op, y, &node.shape, &p, &tan)?;
                (y, t)
            }
        };
        primal.push(pid);
        tan.push(tid);
    }

    let out_node = &graph.nodes()[graph.output().index()];
    let out = match tan[graph.output().index()] {
        Some(t) if b.dtype(t) == out_node.dtype => t,
        Some(t) => b.promote(t)?,
        None => b.constant(Tensor::zeros(&out_node.shape, out_node.dtype)),
    };
    Ok(b.finish(out))
}

fn zeros_like(b: &mut GraphBuilder, id: NodeId) -> NodeId {
    let t = Tensor::zeros(b.shape(id), DType::Real);
    b.constant(t)
}

fn fit(b: &mut GraphBuilder, t: NodeId, shape: &[usize]) -> Result<NodeId> {
    if b.shape(t) == shape {
        Ok(t)
    } else {
        b.broadcast_to(t, shape)
    }
}

fn tangent_rule(
    b: &mut GraphBuilder,
    op: &Op,
    y: NodeId,
    out_shape: &[usize],
    p: &dyn Fn(&NodeId) -> NodeId,
    tan: &[Option<NodeId>],
) -> Result<Option<NodeId>> {
    let t = |id: &NodeId| tan[id.0];
    Ok(match op {
        Op::Input(_) | Op::Constant(_) => unreachable!(),
        Op::Unary(u, x) => {
            let Some(tx) = t(x) else { return Ok(None) };
            let xp = p(x);
            let d = match *u {
                UnaryOp::Neg => return Ok(Some(b.neg(tx)?)),
                UnaryOp::Conj => return Ok(Some(b.conj(tx)?)),
                UnaryOp::Real => return Ok(Some(b.real(tx)?)),
                UnaryOp::Imag => return Ok(Some(b.imag(tx)?)),
                UnaryOp::Sign | UnaryOp::PowI(0) => return Ok(None),
                UnaryOp::Abs => {
                    let s = b.unary(UnaryOp::Sign, xp)?;
                    if b.dtype(xp) == DType::Complex {
                        let sc = b.conj(s)?;
                        let m = b.mul(sc, tx)?;
                        return Ok(Some(b.real(m)?));
                    }
                    s
                }
                UnaryOp::Sigmoid => {
                    let one = b.scalar(1.0);
                    let q = b.sub(one, y)?;
                    b.mul(y, q)?
                }
                UnaryOp::Exp => y,
                UnaryOp::Sin => b.cos(xp)?,
                UnaryOp::Cos => {
                    let s = b.sin(xp)?;
                    b.neg(s)?
                }
                UnaryOp::Reciprocal => {
                    let sq = b.powi(y, 2)?;
                    b.neg(sq)?
                }
                UnaryOp::PowI(n) => {
                    let c = b.scalar(n as f64);
                    let q = b.powi(xp, n - 1)?;
                    b.mul(c, q)?
                }
                UnaryOp::PowF(e) => {
                    let c = b.scalar(e);
                    let q = b.powf(xp, e - 1.0)?;
                    b.mul(c, q)?
                }
            };
            Some(b.mul(tx, d)?)
        }
        Op::Binary(kind, a, c) => {
            let (ta, tc) = (t(a), t(c));
            if ta.is_none() && tc.is_none() {
                return Ok(None);
            }
            let (ap, cp) = (p(a), p(c));
            let r = match kind {
                BinaryOp::Add | BinaryOp::Sub => match (ta, tc) {
                    (Some(x), Some(z)) => b.binary(*kind, x, z)?,
                    (Some(x), None) => fit(b, x, out_shape)?,
                    (None, Some(z)) => {
                        let z = fit(b, z, out_shape)?;
                        if *kind == BinaryOp::Sub {
                            b.neg(z)?
                        } else {
                            z
                        }
                    }
                    (None, None) => unreachable!(),
                },
                BinaryOp::Mul => {
                    let l = ta.map(|x| b.mul(x, cp)).transpose()?;
                    let r = tc.map(|z| b.mul(ap, z)).transpose()?;
                    match (l, r) {
                        (Some(l), Some(r)) => b.add(l, r)?,
                        (Some(l), None) => fit(b, l, out_shape)?,
                        (None, Some(r)) => fit(b, r, out_shape)?,
                        _ => unreachable!(),
                    }
                }
                BinaryOp::Div => {
                    let l = ta.map(|x| b.div(x, cp)).transpose()?;
                    let r = match tc {
                        Some(z) => {
                            let q = b.div(y, cp)?;
                            Some(b.mul(q, z)?)
                        }
                        None => None,
                    };
                    match (l, r) {
                        (Some(l), Some(r)) => b.sub(l, r)?,
                        (Some(l), None) => fit(b, l, out_shape)?,
                        (None, Some(r)) => {
                            let r = fit(b, r, out_shape)?;
                            b.neg(r)?
                        }
                        _ => unreachable!(),
                    }
                }
            };
            Some(r)
        }
        Op::MakeComplex(re, im) => {
            if t(re).is_none() && t(im).is_none() {
                return Ok(None);
            }
            let tr = match t(re) {
                Some(x) => x,
                None => zeros_like(b, p(re)),
            };
            let ti = match t(im) {
                Some(x) => x,
                None => zeros_like(b, p(im)),
            };
            Some(b.make_complex(tr, ti)?)
        }
        Op::SumAll(x) => t(x).map(|tx| b.sum_all(tx)),
        Op::MeanAll(x) => t(x).map(|tx| b.mean_all(tx)),
        Op::SumAxis { x, axis } => t(x).map(|tx| b.sum_axis(tx, *axis)).transpose()?,
        Op::BroadcastTo { x, shape } => t(x).map(|tx| b.broadcast_to(tx, shape)).transpose()?,
        Op::Reshape { x, shape } => t(x).map(|tx| b.reshape(tx, shape)).transpose()?,
        Op::Slice {
            x,
            axis,
            start,
            len,
        } => t(x)
            .map(|tx| b.slice(tx, *axis, *start, *len))
            .transpose()?,
        Op::Pad { x, widths } => t(x).map(|tx| b.pad(tx, widths)).transpose()?,
        Op::Gather { x, index } => t(x).map(|tx| b.gather(tx, index)).transpose()?,
        Op::Concat { parts, axis } => {
            if parts.iter().all(|q| t(q).is_none()) {
                return Ok(None);
            }
            let ts: Vec<NodeId> = parts
                .iter()
                .map(|q| t(q).unwrap_or_else(|| zeros_like(b, p(q))))
                .collect();
            Some(b.concat(&ts, *axis)?)
        }
        Op::Dft { x, axes } => t(x).map(|tx| b.dft(tx, axes)).transpose()?,
        Op::Idft { x, axes } => t(x).map(|tx| b.idft(tx, axes)).transpose()?,
        Op::Convolve { x, kernel, axis } => {
            let l = t(x)
                .map(|tx| b.convolve(tx, p(kernel), *axis))
                .transpose()?;
            let r = t(kernel)
                .map(|tk| b.convolve(p(x), tk, *axis))
                .transpose()?;
            sum_opt(b, l, r)?
        }
        Op::ScaleAxis { x, scale, axis } => {
            let l = t(x)
                .map(|tx| b.scale_axis(tx, p(scale), *axis))
                .transpose()?;
            let r = t(scale)
                .map(|ts| b.scale_axis(p(x), ts, *axis))
                .transpose()?;
            sum_opt(b, l, r)?
        }
    })
}

fn sum_opt(b: &mut GraphBuilder, l: Option<NodeId>, r: Option<NodeId>) -> Result<Option<NodeId>> {
    Ok(match (l, r) {
        (Some(l), Some(r)) => Some(b.add(l, r)?),
        (l, r) => l.or(r),
    })
}
