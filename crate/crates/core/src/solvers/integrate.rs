//! Classical fourth-order Runge-Kutta integration of `du/dt = L(u)`.

use crate::engine::{ExprGraph, GraphBuilder, NodeId};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::operator::TracedOperator;
use crate::tensor::Tensor;

/// `0.1 · min(dx)²`, inside the RK4 stability region of second-order
/// spatial operators with unit diffusivity.
pub fn default_dt(domain: &Domain) -> f64 {
    let h = domain.dx().iter().cloned().fold(f64::INFINITY, f64::min);
    0.1 * h * h
}

fn state_name(rhs: &TracedOperator) -> Result<&str> {
    match rhs.inputs() {
        [(name, family)] if family == rhs.output_family() => Ok(name),
        _ => Err(Error::NonEndomorphicOperator),
    }
}

/// Integrates from `u0` for `steps` steps of size `dt`. `observer(step, t,
/// u)` runs at step 0 and after every `every`-th step. Returns the final
/// state.
pub fn integrate_explicit(
    rhs: &TracedOperator,
    u0: &Tensor,
    dt: f64,
    steps: usize,
    every: usize,
    mut observer: impl FnMut(usize, f64, &Tensor) -> Result<()>,
) -> Result<Tensor> {
    let name = state_name(rhs)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if every == 0 {
        return Err(Error::InvalidConfig(
            "observer interval must be at least 1".into(),
        ));
    }
    let family = rhs.output_family();
    family.check_params(u0)?;
    let f = |u: &Tensor| rhs.evaluate(&[(name, u)]);

    let mut u = u0.to_dtype(family.param_dtype());
    observer(0, 0.0, &u)?;
    for step in 1..=steps {
        let k1 = f(&u)?;
        let k2 = f(&u.axpby(1.0, &k1, 0.5 * dt)?)?;
        let k3 = f(&u.axpby(1.0, &k2, 0.5 * dt)?)?;
        let k4 = f(&u.axpby(1.0, &k3, dt)?)?;
        let incr = k1.axpby(1.0, &k2, 2.0)?.axpby(1.0, &k3, 2.0)?.add(&k4)?;
        u = u.axpby(1.0, &incr, dt / 6.0)?;
        if !u.is_finite() {
            return Err(Error::NaNEncountered(format!("time step {step}")));
        }
        if step % every == 0 {
            observer(step, step as f64 * dt, &u)?;
        }
    }
    Ok(u)
}

/// The whole integration as one graph from the initial state (same input
/// name as `rhs`) to the final state, for differentiating through the time
/// loop. Operator parameters remain graph inputs; bind them from
/// `rhs.global_params()`.
pub fn rk4_unrolled_graph(rhs: &TracedOperator, dt: f64, steps: usize) -> Result<ExprGraph> {
    let name = state_name(rhs)?.to_string();
    let family = rhs.output_family();
    let g = rhs.param_graph();
    let mut b = GraphBuilder::new();
    let mut u = b.input(&name, &family.param_shape(), family.param_dtype())?;
    let eval = |b: &mut GraphBuilder, x: NodeId| b.inline(g, |n| (n == name).then_some(x));
    let axpy = |b: &mut GraphBuilder, u: NodeId, k: NodeId, a: f64| -> Result<NodeId> {
        let s = b.scalar(a);
        let t = b.mul(s, k)?;
        b.add(u, t)
    };
    for _ in 0..steps {
        let k1 = eval(&mut b, u)?;
        let x2 = axpy(&mut b, u, k1, 0.5 * dt)?;
        let k2 = eval(&mut b, x2)?;
        let x3 = axpy(&mut b, u, k2, 0.5 * dt)?;
        let k3 = eval(&mut b, x3)?;
        let x4 = axpy(&mut b, u, k3, dt)?;
        let k4 = eval(&mut b, x4)?;
        let two = b.scalar(2.0);
        let k2 = b.mul(two, k2)?;
        let k3 = b.mul(two, k3)?;
        let s = b.add(k1, k2)?;
        let s = b.add(s, k3)?;
        let s = b.add(s, k4)?;
        u = axpy(&mut b, u, s, dt / 6.0)?;
    }
    Ok(b.finish(u))
}
