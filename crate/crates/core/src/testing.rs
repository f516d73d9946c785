//! Finite-difference gradient oracles.
//!
//! These only ever call a scalar function; they never look inside the engine,
//! so they can check reverse-mode gradients independently.

use crate::tensor::{Data, Tensor, C64};

/// Central-difference gradient of `f` at `x`, using the same real-pair layout
/// as engine gradients: for complex `x` the real part of each entry is
/// `∂f/∂Re x` and the imaginary part `∂f/∂Im x`.
pub fn central_difference(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    match x.data() {
        Data::Real(v) => {
            let mut g = Vec::with_capacity(v.len());
            let mut work = v.clone();
            for i in 0..v.len() {
                work[i] = v[i] + h;
                let fp = f(&Tensor::real(x.shape(), work.clone()).unwrap());
                work[i] = v[i] - h;
                let fm = f(&Tensor::real(x.shape(), work.clone()).unwrap());
                work[i] = v[i];
                g.push((fp - fm) / (2.0 * h));
            }
            Tensor::real(x.shape(), g).unwrap()
        }
        Data::Complex(v) => {
            let mut g = Vec::with_capacity(v.len());
            let mut work = v.clone();
            for i in 0..v.len() {
                let mut parts = [0.0; 2];
                for (p, dir) in [C64::new(h, 0.0), C64::new(0.0, h)].into_iter().enumerate() {
                    work[i] = v[i] + dir;
                    let fp = f(&Tensor::complex(x.shape(), work.clone()).unwrap());
                    work[i] = v[i] - dir;
                    let fm = f(&Tensor::complex(x.shape(), work.clone()).unwrap());
                    work[i] = v[i];
                    parts[p] = (fp - fm) / (2.0 * h);
                }
                g.push(C64::new(parts[0], parts[1]));
            }
            Tensor::complex(x.shape(), g).unwrap()
        }
    }
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.max_abs_diff(b) / b.max_abs().max(floor)
}

/// Largest relative discrepancy between the reverse-mode gradient of
/// `Σ|out|²` and central differences, over every input field and every
/// real operator parameter of `op`.
pub fn operator_gradient_error(
    op: &crate::operator::TracedOperator,
    inputs: &std::collections::BTreeMap<String, Tensor>,
    h: f64,
) -> crate::Result<f64> {
    use crate::engine::{GraphBuilder, Layered};
    use crate::tensor::DType;

    let mut b = GraphBuilder::new();
    let y = b.inline(op.param_graph(), |_| None)?;
    let yc = b.conj(y)?;
    let sq = b.mul(y, yc)?;
    let sq = if b.dtype(sq) == DType::Complex {
        b.real(sq)?
    } else {
        sq
    };
    let loss = b.sum_all(sq);
    let graph = b.finish(loss);

    let mut all = op.global_params().clone();
    for (k, v) in inputs {
        all.insert(k.clone(), v.clone());
    }
    let mut names: Vec<&str> = op.inputs().iter().map(|(n, _)| n.as_str()).collect();
    names.extend(
        op.global_params()
            .iter()
            .filter(|(_, t)| t.dtype() == DType::Real)
            .map(|(n, _)| n.as_str()),
    );
    let analytic = graph.gradient(&names, &Layered(inputs, op.global_params()))?;

    let mut worst = 0.0f64;
    for name in names {
        let x0 = all[name].clone();
        let mut f = |x: &Tensor| {
            let mut b = all.clone();
            b.insert(name.to_string(), x.clone());
            graph
                .evaluate(&b)
                .expect("loss evaluates")
                .as_real()
                .expect("real")[0]
        };
        let numeric = central_difference(&mut f, &x0, h);
        worst = worst.max(relative_error(&analytic.grads[name], &numeric, 1e-8));
    }
    Ok(worst)
}
