//! Rectangular domains, collocation grids and wavenumber grids.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A rectangular domain sampled on a regular grid of `n[a]` cells with
/// spacing `dx[a]` along each axis, centred on the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    n: Vec<usize>,
    dx: Vec<f64>,
}

impl Domain {
    pub fn new(n: &[usize], dx: &[f64]) -> Result<Self> {
        if n.is_empty() || n.len() > 3 {
            return Err(Error::InvalidDomain(format!(
                "dimension {} not in 1..=3",
                n.len()
            )));
        }
        if n.len() != dx.len() {
            return Err(Error::InvalidDomain(
                "extents and spacings differ in length".into(),
            ));
        }
        if n.iter().any(|&e| e < 2) {
            return Err(Error::InvalidDomain(format!(
                "extents {n:?} must all be at least 2"
            )));
        }
        if dx.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidDomain(format!(
                "spacings {dx:?} must be positive"
            )));
        }
        Ok(Self {
            n: n.to_vec(),
            dx: dx.to_vec(),
        })
    }

    /// Square 2-D domain.
    pub fn square(n: usize, dx: f64) -> Result<Self> {
        Self::new(&[n, n], &[dx, dx])
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn ndim(&self) -> usize {
        self.n.len()
    }

    pub fn num_points(&self) -> usize {
        self.n.iter().product()
    }

    /// Physical extent (period) along `axis`.
    pub fn length(&self, axis: usize) -> f64 {
        self.n[axis] as f64 * self.dx[axis]
    }

    /// Coordinate of cell `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        (j as f64 - (self.n[axis] / 2) as f64) * self.dx[axis]
    }

    /// Coordinates of all cells, shape `n ⊕ [D]`.
    pub fn grid_coordinates(&self) -> Tensor {
        let d = self.ndim();
        let mut shape = self.n.clone();
        shape.push(d);
        let mut values = Vec::with_capacity(self.num_points() * d);
        for idx in self.indices() {
            values.extend((0..d).map(|a| self.coordinate(a, idx[a])));
        }
        Tensor::real(&shape, values).expect("grid shape")
    }

    /// The grid as a list of points, shape `[P, D]`.
    pub fn grid_points(&self) -> Tensor {
        let c = self.grid_coordinates();
        c.reshape(&[self.num_points(), self.ndim()])
            .expect("grid shape")
    }

    /// Multi-indices of every cell in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let total = self.num_points();
        (0..total).map(move |mut flat| {
            let mut idx = vec![0; self.ndim()];
            for a in (0..self.ndim()).rev() {
                idx[a] = flat % self.n[a];
                flat /= self.n[a];
            }
            idx
        })
    }

    /// Angular wavenumbers along `axis` in standard DFT order; the Nyquist
    /// bin of an even grid sits on the negative branch.
    pub fn frequency_grid(&self, axis: usize) -> Tensor {
        let n = self.n[axis];
        let scale = 2.0 * PI / (n as f64 * self.dx[axis]);
        let positive = n.div_ceil(2);
        let k = (0..n)
            .map(|j| {
                let f = if j < positive {
                    j as f64
                } else {
                    j as f64 - n as f64
                };
                f * scale
            })
            .collect::<Vec<_>>();
        Tensor::vector(&k)
    }

    /// Same domain with every extent multiplied by `factor` and spacing divided
    /// by it.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let n: Vec<usize> = self.n.iter().map(|&e| e * factor).collect();
        let dx: Vec<f64> = self.dx.iter().map(|&h| h / factor as f64).collect();
        Self::new(&n, &dx)
    }
}
