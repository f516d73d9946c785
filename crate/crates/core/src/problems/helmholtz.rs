use crate::discretization::Field;
use crate::error::Result;
use crate::operator::Expr;
use crate::tensor::C64;

/// Absorbing layer profile: zero for `|x| ≤ onset`, then
/// `((|x| − onset)/width)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pml {
    pub onset: f64,
    pub width: f64,
}

impl Pml {
    /// Layer for a grid of `n` unit cells: onset at `110/128` of the
    /// half-width, the rest of the half-width absorbing.
    pub fn for_grid(n: usize) -> Self {
        let half = n as f64 / 2.0;
        let onset = 110.0 / 128.0 * half;
        Self {
            onset,
            width: half - onset,
        }
    }

    /// A layer beyond any coordinate of the grid; `γ ≡ 1`.
    pub fn none() -> Self {
        Self {
            onset: f64::MAX / 4.0,
            width: 1.0,
        }
    }

    pub fn absorption(&self, x: f64) -> f64 {
        let t = (x.abs() - self.onset) / self.width;
        if t > 0.0 {
            t * t
        } else {
            0.0
        }
    }
}

/// `γ_j = 1/(1 + i·a(x_j))` for every component of the coordinate field `x`.
pub fn pml_gamma(x: &Expr, pml: Pml) -> Expr {
    let t = (x.abs() - pml.onset) * (1.0 / pml.width);
    let relu = (&t + t.abs()) * 0.5;
    let a = relu.powi(2);
    (1.0 + C64::new(0.0, 1.0) * a).reciprocal()
}

/// `Σ_j γ_j ∂_j(γ_j ∂_j u) + ω² u / c²`.
pub fn helmholtz(u: &Expr, c: &Expr, x: &Expr, omega: f64, pml: Pml) -> Expr {
    let gamma = pml_gamma(x, pml);
    let du = u.gradient() * &gamma;
    let lap = (du.diag_jacobian() * &gamma).sum_over_dims();
    lap + (omega * omega) * c.reciprocal().powi(2) * u
}

/// Conjugate transpose of [`helmholtz`] for real `c`:
/// `Σ_j ∂_j(γ̄_j ∂_j(γ̄_j y)) + ω² y / c²`.
pub fn helmholtz_adjoint(y: &Expr, c: &Expr, x: &Expr, omega: f64, pml: Pml) -> Expr {
    let gc = pml_gamma(x, pml).conj();
    let v = (&gc * y).diag_jacobian();
    let lap = (v * &gc).diag_jacobian().sum_over_dims();
    lap + (omega * omega) * c.reciprocal().powi(2) * y
}

/// `Σ_j |∂_j c|`.
pub fn tv_integrand(c: &Expr) -> Expr {
    c.gradient().abs().sum_over_dims()
}

/// Grid mean of the total variation integrand of `c`.
pub fn tv_value(c: &Field) -> Result<f64> {
    let op = tv_integrand(&Expr::field(&c.name)).trace(&[c])?;
    let out = op.apply(&[c])?.params;
    Ok(out.sum_c().re / out.len() as f64)
}
