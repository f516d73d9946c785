//! Centred finite-difference stencils from Taylor conditions.

use crate::error::{Error, Result};

/// Number of points in the centred stencil for derivative `order` at
/// accuracy `accuracy`.
pub fn stencil_len(order: usize, accuracy: usize) -> usize {
    2 * order.div_ceil(2) - 1 + accuracy
}

/// Weights `w` on offsets `-r..=r` (unit spacing) such that
/// `Σ w_j f(x + j) = f^{(order)}(x) + O(h^accuracy)`.
pub fn centred_stencil(order: usize, accuracy: usize) -> Result<Vec<f64>> {
    if accuracy < 2 || accuracy % 2 == 1 {
        return Err(Error::InvalidAccuracy(accuracy));
    }
    if order == 0 {
        return Err(Error::InvalidParams(
            "derivative order must be at least 1".into(),
        ));
    }
    let k = stencil_len(order, accuracy);
    let r = (k / 2) as f64;
    let offsets: Vec<f64> = (0..k).map(|j| j as f64 - r).collect();

    // rows m = 0..k: Σ_j w_j s_j^m = m! δ_{m,order}
    let mut a = vec![vec![0.0; k + 1]; k];
    for (m, row) in a.iter_mut().enumerate() {
        for (j, &s) in offsets.iter().enumerate() {
            row[j] = s.powi(m as i32);
        }
    }
    a[order][k] = (1..=order).map(|i| i as f64).product();
    solve_dense(a)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[piv][col] == 0.0 {
            return Err(Error::InvalidParams("singular stencil system".into()));
        }
        a.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..=n {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    // remove round-off from entries that are exactly zero by symmetry
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut x {
        if v.abs() < 1e-14 * scale {
            *v = 0.0;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn classic_stencils() {
        assert!(close(&centred_stencil(2, 2).unwrap(), &[1.0, -2.0, 1.0]));
        assert!(close(&centred_stencil(1, 2).unwrap(), &[-0.5, 0.0, 0.5]));
        assert!(close(
            &centred_stencil(1, 4).unwrap(),
            &[1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0]
        ));
        assert!(close(
            &centred_stencil(2, 4).unwrap(),
            &[-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0]
        ));
    }

    #[test]
    fn stencils_differentiate_polynomials_exactly() {
        for order in 1..=2 {
            for acc in [2, 4, 6] {
                let w = centred_stencil(order, acc).unwrap();
                let r = (w.len() / 2) as f64;
                // exact for polynomials up to degree order + acc - 1
                for deg in 0..order + acc {
                    let x0 = 0.3;
                    let approx: f64 = w
                        .iter()
                        .enumerate()
                        .map(|(j, wj)| wj * (x0 + j as f64 - r).powi(deg as i32))
                        .sum();
                    let exact = if deg < order {
                        0.0
                    } else {
                        let c: f64 = (deg - order + 1..=deg).map(|i| i as f64).product();
                        c * x0.powi((deg - order) as i32)
                    };
                    assert!(
                        (approx - exact).abs() < 1e-8,
                        "order {order} acc {acc} deg {deg}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_odd_accuracy() {
        assert!(matches!(
            centred_stencil(1, 3),
            Err(Error::InvalidAccuracy(3))
        ));
    }
}
