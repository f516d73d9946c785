//! Browser bindings: derivative profiles, heat diffusion and a Laplacian
//! swap between finite differences and Fourier series.

use dfx::discretization::Family;
use dfx::geometry::Domain;
use dfx::operator::Expr;
use dfx::solvers::{default_dt, integrate_explicit};
use dfx::{DType, Result, Tensor};
use wasm_bindgen::prelude::*;

fn family(d: &Domain, discr: &str) -> Result<Family> {
    match discr {
        "fourier" => Ok(Family::real_fourier(d)),
        "fd2" => Family::finite_differences(d, 2, 1, DType::Real),
        "fd4" => Family::finite_differences(d, 4, 1, DType::Real),
        "fd6" => Family::finite_differences(d, 6, 1, DType::Real),
        other => Err(dfx::Error::InvalidConfig(format!(
            "unknown discretization `{other}`"
        ))),
    }
}

/// Derivative of `sin(2π·freq·x)` on `n` points of `[0, 1)` under the given
/// discretization, followed by the exact derivative: `2n` values.
pub fn derivative_profile(n: usize, freq: f64, discr: &str) -> Result<Vec<f64>> {
    let d = Domain::new(&[n], &[1.0 / n as f64])?;
    let fam = family(&d, discr)?;
    let w = 2.0 * std::f64::consts::PI * freq;
    let f = fam.scalar_field("u", |x| (w * x[0]).sin())?;
    let out = Expr::field("u")
        .gradient()
        .trace(&[&f])?
        .apply(&[&f])?
        .params;
    let mut v = out.as_real().expect("real field").to_vec();
    v.extend((0..n).map(|j| w * (w * d.coordinate(0, j)).cos()));
    Ok(v)
}

/// Integrates `∂u/∂t = Δu` on an `n × n` unit grid from `values` (row-major)
/// to `t_end`.
pub fn heat(values: &[f64], n: usize, t_end: f64, discr: &str) -> Result<Vec<f64>> {
    let d = Domain::square(n, 1.0)?;
    let fam = family(&d, discr)?;
    let op = Expr::field("u")
        .laplacian()
        .trace_families(&[("u", &fam)])?;
    let u0 = Tensor::real(&[n, n, 1], values.to_vec())?;
    let dt0 = default_dt(&d);
    let steps = (t_end / dt0).ceil().max(1.0) as usize;
    let u = integrate_explicit(&op, &u0, t_end / steps as f64, steps, steps, |_, _, _| {
        Ok(())
    })?;
    Ok(u.as_real().expect("real field").to_vec())
}

/// Relative L2 difference between the finite-difference and Fourier
/// Laplacians of `values`.
pub fn swap_discrepancy(values: &[f64], n: usize, discr: &str) -> Result<f64> {
    let d = Domain::square(n, 1.0)?;
    let u = Tensor::real(&[n, n, 1], values.to_vec())?;
    let lap = Expr::field("u").laplacian();
    let a = lap
        .trace_families(&[("u", &family(&d, discr)?)])?
        .evaluate(&[("u", &u)])?;
    let b = lap
        .trace_families(&[("u", &Family::real_fourier(&d))])?
        .evaluate(&[("u", &u)])?;
    let den = b.norm_l2();
    let diff = a.sub(&b)?.norm_l2();
    Ok(if den > 0.0 { diff / den } else { diff })
}

fn js(e: dfx::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = derivativeProfile)]
pub fn derivative_profile_js(
    n: usize,
    freq: f64,
    discr: &str,
) -> std::result::Result<Vec<f64>, JsError> {
    derivative_profile(n, freq, discr).map_err(js)
}

#[wasm_bindgen(js_name = heat)]
pub fn heat_js(
    values: &[f64],
    n: usize,
    t_end: f64,
    discr: &str,
) -> std::result::Result<Vec<f64>, JsError> {
    heat(values, n, t_end, discr).map_err(js)
}

#[wasm_bindgen(js_name = swapDiscrepancy)]
pub fn swap_discrepancy_js(
    values: &[f64],
    n: usize,
    discr: &str,
) -> std::result::Result<f64, JsError> {
    swap_discrepancy(values, n, discr).map_err(js)
}
