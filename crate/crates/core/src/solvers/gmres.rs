//! Restarted GMRES with modified Gram-Schmidt and Givens rotations.

use super::LinearMap;
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresConfig {
    /// Relative residual target `‖b − Ax‖ ≤ tol·‖b‖`.
    pub tol: f64,
    /// Krylov dimension per cycle.
    pub restart: usize,
    /// Maximum number of restart cycles.
    pub maxiter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            restart: 50,
            maxiter: 1000,
        }
    }
}

impl GmresConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.restart == 0 {
            return Err(Error::InvalidConfig(format!(
                "gmres needs tol > 0 and restart >= 1, got tol={} restart={}",
                self.tol, self.restart
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Tensor,
    /// `‖b − A·solution‖₂`, recomputed after the last cycle.
    pub residual_norm: f64,
    /// `residual_norm / ‖b‖` (or the absolute norm when `b = 0`).
    pub relative_residual: f64,
    /// Total Arnoldi steps over all cycles.
    pub iterations: usize,
    pub cycles: usize,
    pub converged: bool,
    /// The Krylov space became invariant before reaching the tolerance.
    pub breakdown: bool,
    /// True residual norm before the first cycle and after each cycle.
    pub residual_history: Vec<f64>,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solves `A x = b` from `x0` (zero when `None`).
pub fn gmres_restarted(
    a: &dyn LinearMap,
    b: &Tensor,
    cfg: &GmresConfig,
    x0: Option<&Tensor>,
) -> Result<SolveReport> {
    cfg.validate()?;
    if !b.is_finite() {
        return Err(Error::NaNEncountered("gmres right-hand side".into()));
    }
    let shape = b.shape().to_vec();
    let dtype = b.dtype();
    let matvec = |v: &[C64]| -> Result<Vec<C64>> {
        let t = Tensor::complex(&shape, v.to_vec())?.to_dtype(dtype);
        let y = a.apply(&t)?;
        if y.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                node: 0,
                expected: shape.clone(),
                got: y.shape().to_vec(),
            });
        }
        let y = y.to_complex_vec();
        if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NaNEncountered("gmres operator application".into()));
        }
        Ok(y)
    };

    let bv = b.to_complex_vec();
    let n = bv.len();
    let bnorm = norm(&bv);
    let target = cfg.tol * if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut x = match x0 {
        Some(t) => t.to_complex_vec(),
        None => vec![C64::new(0.0, 0.0); n],
    };
    let residual = |x: &[C64]| -> Result<Vec<C64>> {
        let ax = matvec(x)?;
        Ok(bv.iter().zip(&ax).map(|(b, y)| b - y).collect())
    };

    let m = cfg.restart;
    let mut r = residual(&x)?;
    let mut beta = norm(&r);
    let mut history = vec![beta];
    let mut iterations = 0;
    let mut cycles = 0;
    let mut breakdown = false;

    while beta > target && cycles < cfg.maxiter && !breakdown {
        cycles += 1;
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|z| z / beta).collect());
        // column-major Hessenberg, already rotated to upper triangular form
        let mut h: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut rot: Vec<(C64, C64)> = Vec::with_capacity(m);
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;

        for j in 0..m {
            let mut w = matvec(&v[j])?;
            iterations += 1;
            let mut col = vec![C64::new(0.0, 0.0); j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(vi, &w);
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
                col[i] = hij;
            }
            let hn = norm(&w);
            col[j + 1] = C64::new(hn, 0.0);

            for (i, &(c, s)) in rot.iter().enumerate() {
                let (p, q) = (col[i], col[i + 1]);
                col[i] = c.conj() * p + s.conj() * q;
                col[i + 1] = -s * p + c * q;
            }
            let (p, q) = (col[j], col[j + 1]);
            let rho = (p.norm_sqr() + q.norm_sqr()).sqrt();
            let (c, s) = if rho == 0.0 {
                (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
            } else {
                (p / rho, q / rho)
            };
            col[j] = C64::new(rho, 0.0);
            col[j + 1] = C64::new(0.0, 0.0);
            let gj = g[j];
            g[j] = c.conj() * gj;
            g[j + 1] = -s * gj;
            rot.push((c, s));
            col.truncate(j + 1);
            h.push(col);
            k = j + 1;

            if hn <= 1e-14 * beta {
                breakdown = g[j + 1].norm() > target;
                break;
            }
            if g[j + 1].norm() <= target {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }

        // back substitution on the k×k triangle
        let mut y = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in i + 1..k {
                s -= h[l][i] * y[l];
            }
            y[i] = if h[i][i] == C64::new(0.0, 0.0) {
                C64::new(0.0, 0.0)
            } else {
                s / h[i][i]
            };
        }
        for (yi, vi) in y.iter().zip(&v) {
            for (xk, vk) in x.iter_mut().zip(vi) {
                *xk += yi * vk;
            }
        }
        r = residual(&x)?;
        beta = norm(&r);
        if !beta.is_finite() {
            return Err(Error::NaNEncountered("gmres residual".into()));
        }
        history.push(beta);
    }

    let solution = Tensor::complex(&shape, x)?;
    let solution = if dtype == DType::Real {
        solution.real_part()
    } else {
        solution
    };
    Ok(SolveReport {
        solution,
        residual_norm: beta,
        relative_residual: if bnorm > 0.0 { beta / bnorm } else { beta },
        iterations,
        cycles,
        converged: beta <= target,
        breakdown: breakdown && beta > target,
        residual_history: history,
    })
}
