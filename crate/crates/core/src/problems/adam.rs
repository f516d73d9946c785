use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bias-corrected Adam on real tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize], alpha: f64, beta1: f64, beta2: f64) -> Self {
        let zero = Tensor::zeros(shape, crate::tensor::DType::Real);
        Self {
            m: zero.clone(),
            v: zero,
            t: 0,
            alpha,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    /// One update in place; returns the new parameters.
    pub fn step(&mut self, params: &Tensor, grads: &Tensor) -> Result<Tensor> {
        let (p, g) = match (params.as_real(), grads.as_real()) {
            (Some(p), Some(g))
                if params.shape() == grads.shape() && params.shape() == self.m.shape() =>
            {
                (p, g)
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    node: 0,
                    expected: self.m.shape().to_vec(),
                    got: grads.shape().to_vec(),
                })
            }
        };
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut m = self.m.as_real().expect("real moments").to_vec();
        let mut v = self.v.as_real().expect("real moments").to_vec();
        let mut out = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            out.push(p[i] - self.alpha * mh / (vh.sqrt() + self.eps));
        }
        let shape = params.shape();
        self.m = Tensor::real(shape, m)?;
        self.v = Tensor::real(shape, v)?;
        Tensor::real(shape, out)
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &Tensor,
    grads: &Tensor,
) -> Result<(AdamState, Tensor)> {
    let mut s = state.clone();
    let p = s.step(params, grads)?;
    Ok((s, p))
}
