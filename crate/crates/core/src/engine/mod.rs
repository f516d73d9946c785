//! Reverse-mode differentiable expression graphs over [`Tensor`]s.
//!
//! Graphs are assembled with a [`GraphBuilder`], which resolves every node's
//! shape and dtype as it is added, and then frozen into an immutable
//! [`ExprGraph`]. A graph can be evaluated against named [`Bindings`] and
//! differentiated in reverse mode ([`ExprGraph::gradient`], [`ExprGraph::vjp`]).
//!
//! Complex gradients follow the real-pair convention: for a real loss `L` of a
//! complex input `z = x + iy` the stored gradient is `∂L/∂x + i·∂L/∂y`
//! (twice the conjugate Wirtinger derivative), so `z ← z − α·grad` descends.

mod eval;
mod jvp;
pub(crate) mod kernels;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shapes, numel, DType, Tensor, C64};

pub use eval::GradientResult;

/// Forward DFT of `t` along `axes` (unnormalized, `e^{-ikx}`), outside any
/// graph.
pub fn dft_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    kernels::dft(t, axes, false)
}

/// Inverse of [`dft_tensor`], carrying the `1/N` factor.
pub fn idft_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    kernels::dft(t, axes, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Abs,
    /// `x/|x|`, zero at zero; carries no gradient.
    Sign,
    Sigmoid,
    Exp,
    Sin,
    Cos,
    Reciprocal,
    Real,
    Imag,
    Conj,
    PowI(i32),
    PowF(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input(String),
    Constant(Arc<Tensor>),
    Unary(UnaryOp, NodeId),
    Binary(BinaryOp, NodeId, NodeId),
    MakeComplex(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Sum along one axis, keeping it with extent 1.
    SumAxis {
        x: NodeId,
        axis: usize,
    },
    BroadcastTo {
        x: NodeId,
        shape: Vec<usize>,
    },
    Reshape {
        x: NodeId,
        shape: Vec<usize>,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Pad {
        x: NodeId,
        widths: Vec<(usize, usize)>,
    },
    Gather {
        x: NodeId,
        index: Vec<usize>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Dft {
        x: NodeId,
        axes: Vec<usize>,
    },
    Idft {
        x: NodeId,
        axes: Vec<usize>,
    },
    Convolve {
        x: NodeId,
        kernel: NodeId,
        axis: usize,
    },
    ScaleAxis {
        x: NodeId,
        scale: NodeId,
        axis: usize,
    },
}

impl Op {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::Unary(_, x)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::SumAxis { x, .. }
            | Op::BroadcastTo { x, .. }
            | Op::Reshape { x, .. }
            | Op::Slice { x, .. }
            | Op::Pad { x, .. }
            | Op::Gather { x, .. }
            | Op::Dft { x, .. }
            | Op::Idft { x, .. } => vec![*x],
            Op::Binary(_, a, b) | Op::MakeComplex(a, b) => vec![*a, *b],
            Op::Convolve { x, kernel, .. } => vec![*x, *kernel],
            Op::ScaleAxis { x, scale, .. } => vec![*x, *scale],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    fn remap(&self, f: impl Fn(NodeId) -> NodeId) -> Op {
        let mut op = self.clone();
        match &mut op {
            Op::Input(_) | Op::Constant(_) => {}
            Op::Unary(_, x)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::SumAxis { x, .. }
            | Op::BroadcastTo { x, .. }
            | Op::Reshape { x, .. }
            | Op::Slice { x, .. }
            | Op::Pad { x, .. }
            | Op::Gather { x, .. }
            | Op::Dft { x, .. }
            | Op::Idft { x, .. } => *x = f(*x),
            Op::Binary(_, a, b) | Op::MakeComplex(a, b) => {
                *a = f(*a);
                *b = f(*b);
            }
            Op::Convolve { x, kernel, .. } => {
                *x = f(*x);
                *kernel = f(*kernel);
            }
            Op::ScaleAxis { x, scale, .. } => {
                *x = f(*x);
                *scale = f(*scale);
            }
            Op::Concat { parts, .. } => parts.iter_mut().for_each(|p| *p = f(*p)),
        }
        op
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

/// A frozen, topologically ordered computation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    inputs: Vec<(String, NodeId)>,
    output: NodeId,
}

/// Named tensors supplied to graph inputs.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<&Tensor>;
}

impl<T: Bindings + ?Sized> Bindings for &T {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        (**self).lookup(name)
    }
}

impl Bindings for HashMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Bindings for BTreeMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Bindings for [(&str, &Tensor)] {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }
}

impl<const N: usize> Bindings for [(&str, &Tensor); N] {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.as_slice().lookup(name)
    }
}

impl Bindings for Vec<(&str, &Tensor)> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.as_slice().lookup(name)
    }
}

/// Two binding sources; the first one wins on name clashes.
pub struct Layered<A, B>(pub A, pub B);

impl<A: Bindings, B: Bindings> Bindings for Layered<A, B> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

impl ExprGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output.0].shape
    }

    pub fn output_dtype(&self) -> DType {
        self.nodes[self.output.0].dtype
    }

    /// Input leaves as `(name, shape, dtype)`.
    pub fn inputs(&self) -> impl Iterator<Item = (&str, &[usize], DType)> {
        self.inputs.iter().map(move |(n, id)| {
            let node = &self.nodes[id.0];
            (n.as_str(), node.shape.as_slice(), node.dtype)
        })
    }

    pub fn has_input(&self, name: &str) -> bool {
        self.inputs.iter().any(|(n, _)| n == name)
    }

    pub fn input_spec(&self, name: &str) -> Option<(&[usize], DType)> {
        self.inputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| (self.nodes[id.0].shape.as_slice(), self.nodes[id.0].dtype))
    }

    /// Builds a graph computing the directional derivative of this graph's
    /// output when input `wrt` moves along `tangent` (forward mode).
    pub fn jvp_graph(&self, wrt: &str, tangent: &Tensor) -> Result<ExprGraph> {
        jvp::jvp_graph(self, wrt, tangent)
    }
}

/// Incremental, shape-checked graph construction.
#[derive(Default, Clone, Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    inputs: Vec<(String, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn dtype(&self, id: NodeId) -> DType {
        self.nodes[id.0].dtype
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, dtype: DType) -> NodeId {
        self.nodes.push(Node { op, shape, dtype });
        NodeId(self.nodes.len() - 1)
    }

    /// Declares (or reuses) a named input leaf.
    pub fn input(&mut self, name: &str, shape: &[usize], dtype: DType) -> Result<NodeId> {
        if let Some((_, id)) = self.inputs.iter().find(|(n, _)| n == name) {
            let node = &self.nodes[id.0];
            if node.shape != shape || node.dtype != dtype {
                return Err(Error::InputConflict(name.to_string()));
            }
            return Ok(*id);
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidShape(format!(
                "input `{name}` has a zero extent"
            )));
        }
        let id = self.push(Op::Input(name.to_string()), shape.to_vec(), dtype);
        self.inputs.push((name.to_string(), id));
        Ok(id)
    }

    pub fn lookup_input(&self, name: &str) -> Option<NodeId> {
        self.inputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        let dtype = t.dtype();
        self.push(Op::Constant(Arc::new(t)), shape, dtype)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn complex_scalar(&mut self, v: C64) -> NodeId {
        self.constant(Tensor::complex_scalar(v))
    }

    pub fn unary(&mut self, op: UnaryOp, x: NodeId) -> Result<NodeId> {
        let node = &self.nodes[x.0];
        let (shape, dt) = (node.shape.clone(), node.dtype);
        let out = match op {
            UnaryOp::Abs | UnaryOp::Real | UnaryOp::Imag => DType::Real,
            UnaryOp::PowF(_) if dt == DType::Complex => {
                return Err(Error::UnsupportedDType("powf"))
            }
            _ => dt,
        };
        Ok(self.push(Op::Unary(op, x), shape, out))
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Neg, x)
    }
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Abs, x)
    }
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Sigmoid, x)
    }
    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Exp, x)
    }
    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Sin, x)
    }
    pub fn cos(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Cos, x)
    }
    pub fn reciprocal(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Reciprocal, x)
    }
    pub fn real(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Real, x)
    }
    pub fn imag(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Imag, x)
    }
    pub fn conj(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Conj, x)
    }
    pub fn powi(&mut self, x: NodeId, n: i32) -> Result<NodeId> {
        self.unary(UnaryOp::PowI(n), x)
    }
    pub fn powf(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        self.unary(UnaryOp::PowF(p), x)
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let shape = broadcast_shapes(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            node: self.nodes.len(),
            expected: sa.clone(),
            got: sb.clone(),
        })?;
        let dtype = self.nodes[a.0].dtype.promote(self.nodes[b.0].dtype);
        Ok(self.push(Op::Binary(op, a, b), shape, dtype))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn make_complex(&mut self, re: NodeId, im: NodeId) -> Result<NodeId> {
        if self.dtype(re) != DType::Real || self.dtype(im) != DType::Real {
            return Err(Error::UnsupportedDType("make_complex"));
        }
        let shape = broadcast_shapes(self.shape(re), self.shape(im)).ok_or_else(|| {
            Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: self.shape(re).to_vec(),
                got: self.shape(im).to_vec(),
            }
        })?;
        Ok(self.push(Op::MakeComplex(re, im), shape, DType::Complex))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let dt = self.dtype(x);
        self.push(Op::SumAll(x), vec![], dt)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let dt = self.dtype(x);
        self.push(Op::MeanAll(x), vec![], dt)
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        kernels::check_axis(axis, self.shape(x).len())?;
        let mut shape = self.shape(x).to_vec();
        shape[axis] = 1;
        let dt = self.dtype(x);
        Ok(self.push(Op::SumAxis { x, axis }, shape, dt))
    }

    pub fn broadcast_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        match broadcast_shapes(self.shape(x), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    node: self.nodes.len(),
                    expected: shape.to_vec(),
                    got: self.shape(x).to_vec(),
                })
            }
        }
        let dt = self.dtype(x);
        Ok(self.push(
            Op::BroadcastTo {
                x,
                shape: shape.to_vec(),
            },
            shape.to_vec(),
            dt,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: shape.to_vec(),
                got: self.shape(x).to_vec(),
            });
        }
        let dt = self.dtype(x);
        Ok(self.push(
            Op::Reshape {
                x,
                shape: shape.to_vec(),
            },
            shape.to_vec(),
            dt,
        ))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        kernels::check_axis(axis, self.shape(x).len())?;
        let extent = self.shape(x)[axis];
        if len == 0 || start + len > extent {
            return Err(Error::InvalidShape(format!(
                "slice [{start}, {}) of axis with extent {extent}",
                start + len
            )));
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = len;
        let dt = self.dtype(x);
        Ok(self.push(
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            shape,
            dt,
        ))
    }

    pub fn pad(&mut self, x: NodeId, widths: &[(usize, usize)]) -> Result<NodeId> {
        if widths.len() != self.shape(x).len() {
            return Err(Error::InvalidShape(
                "pad widths must cover every axis".into(),
            ));
        }
        let shape = self
            .shape(x)
            .iter()
            .zip(widths)
            .map(|(&e, &(b, a))| e + b + a)
            .collect();
        let dt = self.dtype(x);
        Ok(self.push(
            Op::Pad {
                x,
                widths: widths.to_vec(),
            },
            shape,
            dt,
        ))
    }

    /// Extracts one element as a rank-0 tensor.
    pub fn gather(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let shape = self.shape(x);
        if index.len() != shape.len() || index.iter().zip(shape).any(|(&i, &e)| i >= e) {
            return Err(Error::InvalidShape(format!(
                "index {index:?} outside shape {shape:?}"
            )));
        }
        let dt = self.dtype(x);
        Ok(self.push(
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            vec![],
            dt,
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        kernels::check_axis(axis, base.len())?;
        let mut total = 0;
        let mut dtype = DType::Real;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(a, (x, y))| a == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    node: self.nodes.len(),
                    expected: base.clone(),
                    got: s.to_vec(),
                });
            }
            total += s[axis];
            dtype = dtype.promote(self.dtype(p));
        }
        if parts.len() == 1 {
            return Ok(*first);
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            shape,
            dtype,
        ))
    }

    fn check_axes(&self, x: NodeId, axes: &[usize]) -> Result<()> {
        let rank = self.shape(x).len();
        axes.iter().try_for_each(|&a| kernels::check_axis(a, rank))
    }

    pub fn dft(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.check_axes(x, axes)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Op::Dft {
                x,
                axes: axes.to_vec(),
            },
            shape,
            DType::Complex,
        ))
    }

    pub fn idft(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.check_axes(x, axes)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Op::Idft {
                x,
                axes: axes.to_vec(),
            },
            shape,
            DType::Complex,
        ))
    }

    /// Centered stencil along `axis` with zero padding; the kernel must be 1-D
    /// with odd length.
    pub fn convolve(&mut self, x: NodeId, kernel: NodeId, axis: usize) -> Result<NodeId> {
        kernels::check_axis(axis, self.shape(x).len())?;
        let ks = self.shape(kernel);
        if ks.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "kernel must be 1-D, got {ks:?}"
            )));
        }
        if ks[0] % 2 == 0 {
            return Err(Error::EvenKernel(ks[0]));
        }
        let shape = self.shape(x).to_vec();
        let dt = self.dtype(x).promote(self.dtype(kernel));
        Ok(self.push(Op::Convolve { x, kernel, axis }, shape, dt))
    }

    /// Multiplies lanes along `axis` by a 1-D vector of matching extent.
    pub fn scale_axis(&mut self, x: NodeId, scale: NodeId, axis: usize) -> Result<NodeId> {
        kernels::check_axis(axis, self.shape(x).len())?;
        let extent = self.shape(x)[axis];
        if self.shape(scale) != [extent] {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: vec![extent],
                got: self.shape(scale).to_vec(),
            });
        }
        let shape = self.shape(x).to_vec();
        let dt = self.dtype(x).promote(self.dtype(scale));
        Ok(self.push(Op::ScaleAxis { x, scale, axis }, shape, dt))
    }

    /// Casts a real node to complex; complex nodes pass through.
    pub fn promote(&mut self, x: NodeId) -> Result<NodeId> {
        if self.dtype(x) == DType::Complex {
            return Ok(x);
        }
        let zero = self.scalar(0.0);
        self.make_complex(x, zero)
    }

    /// Copies `graph` into this builder. Each input leaf is resolved by
    /// `leaf`: `Some(id)` substitutes an existing node (shape and dtype must
    /// agree, real nodes may feed complex leaves), `None` re-declares the leaf
    /// as an input of the same name. Returns the node holding the copied
    /// output.
    pub fn inline(
        &mut self,
        graph: &ExprGraph,
        mut leaf: impl FnMut(&str) -> Option<NodeId>,
    ) -> Result<NodeId> {
        let mut map: Vec<NodeId> = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let id = match &node.op {
                Op::Input(name) => match leaf(name) {
                    Some(id) => {
                        let got = self.node(id);
                        if got.shape != node.shape {
                            return Err(Error::ShapeMismatch {
                                node: id.0,
                                expected: node.shape.clone(),
                                got: got.shape.clone(),
                            });
                        }
                        match (got.dtype, node.dtype) {
                            (DType::Complex, DType::Real) => {
                                return Err(Error::DTypeMismatch(name.clone()))
                            }
                            (DType::Real, DType::Complex) => self.promote(id)?,
                            _ => id,
                        }
                    }
                    None => self.input(name, &node.shape, node.dtype)?,
                },
                op => {
                    let op = op.remap(|i| map[i.0]);
                    self.push(op, node.shape.clone(), node.dtype)
                }
            };
            map.push(id);
        }
        Ok(map[graph.output.0])
    }

    /// Freezes the graph, dropping nodes that do not reach `output`.
    pub fn finish(self, output: NodeId) -> ExprGraph {
        let mut live = vec![false; self.nodes.len()];
        live[output.0] = true;
        for i in (0..=output.0).rev() {
            if live[i] {
                for d in self.nodes[i].op.inputs() {
                    live[d.0] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, node) in self.nodes.into_iter().enumerate() {
            if live[i] {
                remap[i] = nodes.len();
                let op = node.op.remap(|d| NodeId(remap[d.0]));
                nodes.push(Node { op, ..node });
            }
        }
        let inputs = self
            .inputs
            .into_iter()
            .filter(|(_, id)| live[id.0])
            .map(|(n, id)| (n, NodeId(remap[id.0])))
            .collect();
        ExprGraph {
            nodes,
            inputs,
            output: NodeId(remap[output.0]),
        }
    }
}

#[cfg(test)]
mod tests;
