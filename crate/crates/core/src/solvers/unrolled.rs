//! GMRES written out as an engine graph, so that reverse mode can
//! differentiate through every Arnoldi step. Used as an independent check on
//! the implicit gradients; memory grows with the iteration count.

use crate::engine::{ExprGraph, GraphBuilder, NodeId};
use crate::error::Result;
use crate::tensor::{DType, Tensor};

fn norm(b: &mut GraphBuilder, v: NodeId) -> Result<NodeId> {
    let c = b.conj(v)?;
    let sq = b.mul(v, c)?;
    let sq = b.real(sq)?;
    let s = b.sum_all(sq);
    b.powf(s, 0.5)
}

fn dot(b: &mut GraphBuilder, u: NodeId, v: NodeId) -> Result<NodeId> {
    let c = b.conj(u)?;
    let p = b.mul(c, v)?;
    Ok(b.sum_all(p))
}

fn abs2(b: &mut GraphBuilder, z: NodeId) -> Result<NodeId> {
    let c = b.conj(z)?;
    let p = b.mul(z, c)?;
    b.real(p)
}

/// One GMRES cycle of exactly `iterations` Arnoldi steps from a zero initial
/// guess, for the system whose action is `forward` (input `unknown`). The
/// right-hand side is read from input `rhs` (complex, shape `shape`); every
/// other input of `forward` becomes an input of the result.
pub fn unrolled_gmres_graph(
    forward: &ExprGraph,
    unknown: &str,
    shape: &[usize],
    iterations: usize,
) -> Result<ExprGraph> {
    let mut b = GraphBuilder::new();
    let rhs = b.input("rhs", shape, DType::Complex)?;
    let beta = norm(&mut b, rhs)?;
    let mut v = vec![b.div(rhs, beta)?];
    let mut cols: Vec<Vec<NodeId>> = Vec::new();
    let mut rot: Vec<(NodeId, NodeId)> = Vec::new();
    let mut g = vec![b.promote(beta)?];

    for j in 0..iterations {
        let vj = v[j];
        let mut w = b.inline(forward, |name| (name == unknown).then_some(vj))?;
        if b.dtype(w) == DType::Real {
            w = b.promote(w)?;
        }
        let mut col = Vec::with_capacity(j + 2);
        for &vi in &v {
            let hij = dot(&mut b, vi, w)?;
            let t = b.mul(hij, vi)?;
            w = b.sub(w, t)?;
            col.push(hij);
        }
        let hn = norm(&mut b, w)?;
        col.push(b.promote(hn)?);

        for (i, &(c, s)) in rot.iter().enumerate() {
            let (p, q) = (col[i], col[i + 1]);
            let cc = b.conj(c)?;
            let sc = b.conj(s)?;
            let t1 = b.mul(cc, p)?;
            let t2 = b.mul(sc, q)?;
            let top = b.add(t1, t2)?;
            let t3 = b.mul(s, p)?;
            let t4 = b.mul(c, q)?;
            let bottom = b.sub(t4, t3)?;
            col[i] = top;
            col[i + 1] = bottom;
        }
        let (p, q) = (col[j], col[j + 1]);
        let pp = abs2(&mut b, p)?;
        let qq = abs2(&mut b, q)?;
        let sum = b.add(pp, qq)?;
        let rho = b.powf(sum, 0.5)?;
        let c = b.div(p, rho)?;
        let s = b.div(q, rho)?;
        col[j] = b.promote(rho)?;
        col.truncate(j + 1);
        let gj = g[j];
        let cc = b.conj(c)?;
        g[j] = b.mul(cc, gj)?;
        let sg = b.mul(s, gj)?;
        g.push(b.neg(sg)?);
        rot.push((c, s));
        cols.push(col);
        if j + 1 < iterations {
            v.push(b.div(w, hn)?);
        }
    }

    let k = iterations;
    let mut y: Vec<NodeId> = vec![rhs; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for l in i + 1..k {
            let t = b.mul(cols[l][i], y[l])?;
            s = b.sub(s, t)?;
        }
        y[i] = b.div(s, cols[i][i])?;
    }
    let mut x = b.constant(Tensor::zeros(shape, DType::Complex));
    for i in 0..k {
        let t = b.mul(y[i], v[i])?;
        x = b.add(x, t)?;
    }
    Ok(b.finish(x))
}
