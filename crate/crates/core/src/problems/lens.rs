use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::helmholtz::{helmholtz, helmholtz_adjoint, tv_integrand, Pml};
use crate::discretization::Family;
use crate::engine::{ExprGraph, GraphBuilder, Layered};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::operator::Expr;
use crate::solvers::{GmresConfig, ParametricSystem};
use crate::tensor::{DType, Tensor, C64};

/// Index box `[row, row + rows) × [col, col + cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LensRegion {
    pub row: usize,
    pub rows: usize,
    pub col: usize,
    pub cols: usize,
}

impl LensRegion {
    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }
}

/// Configuration of the lens design problem on a square grid of unit cells.
#[derive(Clone, Debug)]
pub struct HelmholtzProblem {
    pub domain: Domain,
    pub omega: f64,
    /// Right-hand side `s` of `H u = s`, shape `[n, n, 1]`.
    pub source: Tensor,
    pub target: [usize; 2],
    pub lens: LensRegion,
    pub lambda_tv: f64,
    pub pml: Pml,
    pub seed: u64,
    pub gmres: GmresConfig,
}

fn monopole(n: usize, at: [usize; 2]) -> Tensor {
    let k = at[0] * n + at[1];
    Tensor::from_fn_complex(&[n, n, 1], |i| {
        C64::new(if i == k { 1.0 } else { 0.0 }, 0.0)
    })
}

impl HelmholtzProblem {
    /// The full-size experiment: 256², lens 168×40 at (44, 108), source at
    /// (128, 40), target at (70, 210).
    pub fn reference() -> Self {
        Self::scaled(256).expect("reference configuration is valid")
    }

    /// The reference experiment on an `n × n` grid, with lens, source,
    /// target and absorbing layer scaled by `n/256`.
    pub fn scaled(n: usize) -> Result<Self> {
        let s = n as f64 / 256.0;
        let fl = |v: f64| (v * s).floor() as usize;
        let rd = |v: f64| ((v * s).round() as usize).max(1);
        let source = [fl(128.0), fl(40.0)];
        let p = Self {
            domain: Domain::square(n, 1.0)?,
            omega: 1.0,
            source: monopole(n, source),
            target: [fl(70.0), fl(210.0)],
            lens: LensRegion {
                row: fl(44.0),
                rows: rd(168.0),
                col: fl(108.0),
                cols: rd(40.0),
            },
            lambda_tv: 1e-4,
            pml: Pml::for_grid(n),
            seed: 42,
            gmres: GmresConfig::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.domain.n()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.domain.ndim() != 2 || self.domain.n()[1] != n {
            return Err(Error::InvalidDomain(
                "lens problem needs a square 2-D grid".into(),
            ));
        }
        if !(self.omega > 0.0) || !(self.lambda_tv >= 0.0) {
            return Err(Error::InvalidConfig(
                "omega must be positive and lambda_tv non-negative".into(),
            ));
        }
        let inside =
            |j: usize, axis: usize| self.domain.coordinate(axis, j).abs() <= self.pml.onset;
        let l = self.lens;
        let fits = l.rows > 0
            && l.cols > 0
            && l.row + l.rows <= n
            && l.col + l.cols <= n
            && inside(l.row, 0)
            && inside(l.row + l.rows - 1, 0)
            && inside(l.col, 1)
            && inside(l.col + l.cols - 1, 1);
        if !fits {
            return Err(Error::RegionOutOfBounds(format!("{l:?} on a {n}x{n} grid")));
        }
        if self.target.iter().any(|&t| t >= n) {
            return Err(Error::RegionOutOfBounds(format!(
                "target {:?}",
                self.target
            )));
        }
        if self.source.shape() != [n, n, 1] {
            return Err(Error::InvalidParams(format!(
                "source must have shape [{n}, {n}, 1]"
            )));
        }
        Ok(())
    }

    /// `c = 1` everywhere except the lens box, where `c = 1 + sigmoid(ρ)`.
    pub fn sos_graph(&self) -> Result<ExprGraph> {
        let n = self.n();
        let l = self.lens;
        let mut b = GraphBuilder::new();
        let rho = b.input("rho", &l.shape(), DType::Real)?;
        let s = b.sigmoid(rho)?;
        let s = b.pad(
            s,
            &[(l.row, n - l.row - l.rows), (l.col, n - l.col - l.cols)],
        )?;
        let one = b.scalar(1.0);
        let c = b.add(s, one)?;
        let c = b.reshape(c, &[n, n, 1])?;
        Ok(b.finish(c))
    }

    pub fn speed_of_sound(&self, rho: &Tensor) -> Result<Tensor> {
        self.sos_graph()?.evaluate(&[("rho", rho)])
    }
}

/// Seeded uniform samples in `[−4, −3)` (ChaCha8 stream).
pub fn init_lens_params(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn_real(shape, |_| rng.gen::<f64>() - 4.0)
}

/// A compiled lens problem: traced Helmholtz operator and adjoint, the
/// sound-speed graph and the regularizer graph.
#[derive(Clone, Debug)]
pub struct LensProblem {
    pub config: HelmholtzProblem,
    system: ParametricSystem,
    sos: ExprGraph,
    tv: ExprGraph,
    tv_integrand: ExprGraph,
    tv_params: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug)]
pub struct LensEvaluation {
    pub loss: f64,
    pub target_amplitude: f64,
    pub tv: f64,
    pub c: Tensor,
    pub u: Tensor,
    /// `∂loss/∂ρ`, when requested.
    pub grad: Option<Tensor>,
    pub forward_converged: bool,
    pub forward_relative_residual: f64,
    pub adjoint_converged: bool,
}

impl LensEvaluation {
    pub fn converged(&self) -> bool {
        self.forward_converged && self.adjoint_converged
    }
}

impl LensProblem {
    pub fn new(config: HelmholtzProblem) -> Result<Self> {
        config.validate()?;
        let d = &config.domain;
        let fu = Family::complex_fourier(d);
        let fc = Family::real_fourier(d);
        let fx = Family::fourier(d, 2, DType::Real)?;
        let (u, c, x) = (Expr::field("u"), Expr::field("c"), Expr::field("x"));
        let inputs = [("u", &fu), ("c", &fc), ("x", &fx)];
        let h = helmholtz(&u, &c, &x, config.omega, config.pml).trace_families(&inputs)?;
        let ha = helmholtz_adjoint(&u, &c, &x, config.omega, config.pml).trace_families(&inputs)?;
        let system = ParametricSystem::from_operators(&h, Some(&ha), "u")
            .with_fixed("x", d.grid_coordinates());

        let tv_op = tv_integrand(&c).trace_families(&[("c", &fc)])?;
        let sos = config.sos_graph()?;
        let mut b = GraphBuilder::new();
        let cn = b.inline(&sos, |_| None)?;
        let integrand = b.inline(tv_op.param_graph(), |name| (name == "c").then_some(cn))?;
        let mean = b.mean_all(integrand);
        let tv = b.finish(mean);

        Ok(Self {
            config,
            system,
            sos,
            tv,
            tv_integrand: tv_op.param_graph().clone(),
            tv_params: tv_op.global_params().clone(),
        })
    }

    pub fn system(&self) -> &ParametricSystem {
        &self.system
    }

    /// Initial `ρ` from the configured seed.
    pub fn initial_params(&self) -> Tensor {
        init_lens_params(self.config.seed, &self.config.lens.shape())
    }

    /// `Σ_j |∂_j c|` on the grid.
    pub fn tv_field(&self, c: &Tensor) -> Result<Tensor> {
        self.tv_integrand
            .evaluate(&Layered([("c", c)], &self.tv_params))
    }

    /// Solves `H(c) u = s` for the given `ρ`.
    pub fn solve(&self, rho: &Tensor) -> Result<(Tensor, crate::solvers::ImplicitSolution<'_>)> {
        let c = self.sos.evaluate(&[("rho", rho)])?;
        let params = BTreeMap::from([("c".to_string(), c.clone())]);
        let sol = self
            .system
            .solve(&params, &self.config.source, &self.config.gmres)?;
        Ok((c, sol))
    }

    /// `−|u(x_T)| + λ·mean TV(c(ρ))`, with its gradient when `with_grad`.
    pub fn evaluate(&self, rho: &Tensor, with_grad: bool) -> Result<LensEvaluation> {
        let (c, sol) = self.solve(rho)?;
        let n = self.config.n();
        let t = self.config.target[0] * n + self.config.target[1];
        let ut = sol.u.get_c(t);
        let amp = ut.norm();
        let lambda = self.config.lambda_tv;
        let tv_bind = Layered([("rho", rho)], &self.tv_params);

        let (tv, grad, adjoint_converged) = if with_grad {
            let (tv, g_tv) = self.tv.vjp(&tv_bind, &Tensor::scalar(1.0), &["rho"])?;
            let mut cot = vec![C64::new(0.0, 0.0); sol.u.len()];
            if amp > 0.0 {
                cot[t] = -ut / amp;
            }
            let cot = Tensor::complex(sol.u.shape(), cot)?;
            let back = sol.backward(&cot, &["c"])?;
            let (_, g_sos) = self.sos.vjp(&[("rho", rho)], &back.grads["c"], &["rho"])?;
            let grad = g_sos["rho"].axpby(1.0, &g_tv["rho"], lambda)?;
            (
                tv.as_real().expect("real")[0],
                Some(grad),
                back.adjoint_converged,
            )
        } else {
            let tv = self.tv.evaluate(&tv_bind)?;
            (tv.as_real().expect("real")[0], None, true)
        };

        Ok(LensEvaluation {
            loss: -amp + lambda * tv,
            target_amplitude: amp,
            tv,
            c,
            grad,
            forward_converged: sol.converged,
            forward_relative_residual: sol.relative_residual,
            adjoint_converged,
            u: sol.u,
        })
    }

    pub fn loss(&self, rho: &Tensor) -> Result<f64> {
        Ok(self.evaluate(rho, false)?.loss)
    }
}
