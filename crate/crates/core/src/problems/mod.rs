//! Problem assembly for the acoustic lens design example: PML coefficients,
//! the Helmholtz operator, total variation, the sound-speed parametrization,
//! the loss with its gradient, and Adam.

mod adam;
mod helmholtz;
mod lens;

pub use adam::{adam_step, AdamState};
pub use helmholtz::{helmholtz, helmholtz_adjoint, pml_gamma, tv_integrand, tv_value, Pml};
pub use lens::{init_lens_params, HelmholtzProblem, LensEvaluation, LensProblem, LensRegion};

#[cfg(test)]
mod tests;
