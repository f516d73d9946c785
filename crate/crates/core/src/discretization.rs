//! Discretization families and fields.
//!
//! A [`Family`] maps a parameter tensor `θ` to a continuous function
//! `f_θ(x)`; a [`Field`] pairs a family with one concrete `θ`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::engine::ExprGraph;
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::tensor::{numel, strides, DType, Tensor, C64};

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    /// Trigonometric interpolation through the collocation grid; `θ` holds
    /// the samples.
    FourierSeries,
    /// Grid samples, differentiated with centred stencils of the given even
    /// accuracy order.
    FiniteDifferences { accuracy: usize },
    /// `Σ θ_i x^i` on the unit interval.
    Polynomial { degree: usize },
    /// Interpolant given by a graph with inputs `theta` and `x` (shape `[D]`)
    /// returning an `[M]` vector. The graph may ignore `theta`, so its
    /// shape and dtype are kept alongside.
    Arbitrary {
        graph: Arc<ExprGraph>,
        theta_shape: Vec<usize>,
        theta_dtype: DType,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Family {
    kind: FamilyKind,
    domain: Option<Domain>,
    components: usize,
    dtype: DType,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FamilyKind::FourierSeries => write!(f, "FourierSeries({})", self.dtype)?,
            FamilyKind::FiniteDifferences { accuracy } => {
                write!(f, "FiniteDifferences(accuracy={accuracy}, {})", self.dtype)?
            }
            FamilyKind::Polynomial { degree } => write!(f, "Polynomial({degree})")?,
            FamilyKind::Arbitrary { .. } => write!(f, "Arbitrary")?,
        }
        write!(f, "[M={}]", self.components)
    }
}

impl Family {
    pub fn fourier(domain: &Domain, components: usize, dtype: DType) -> Result<Self> {
        check_components(components)?;
        Ok(Self {
            kind: FamilyKind::FourierSeries,
            domain: Some(domain.clone()),
            components,
            dtype,
        })
    }

    pub fn real_fourier(domain: &Domain) -> Self {
        Self::fourier(domain, 1, DType::Real).expect("one component")
    }

    pub fn complex_fourier(domain: &Domain) -> Self {
        Self::fourier(domain, 1, DType::Complex).expect("one component")
    }

    pub fn finite_differences(
        domain: &Domain,
        accuracy: usize,
        components: usize,
        dtype: DType,
    ) -> Result<Self> {
        check_components(components)?;
        if accuracy < 2 || accuracy % 2 == 1 {
            return Err(Error::InvalidAccuracy(accuracy));
        }
        Ok(Self {
            kind: FamilyKind::FiniteDifferences { accuracy },
            domain: Some(domain.clone()),
            components,
            dtype,
        })
    }

    pub fn polynomial(degree: usize) -> Self {
        Self {
            kind: FamilyKind::Polynomial { degree },
            domain: None,
            components: 1,
            dtype: DType::Real,
        }
    }

    /// Family whose interpolant is `graph(theta, x)`. The graph may read
    /// `theta` (declared with `theta_shape`/`theta_dtype`) and `x` (real,
    /// shape `[D]`), and must return a 1-D vector.
    pub fn arbitrary(
        domain: &Domain,
        graph: ExprGraph,
        theta_shape: &[usize],
        theta_dtype: DType,
    ) -> Result<Self> {
        for (name, shape, dtype) in graph.inputs() {
            match name {
                "theta" if shape == theta_shape && dtype == theta_dtype => {}
                "theta" => {
                    return Err(Error::InvalidParams(format!(
                        "graph declares theta as {shape:?} {dtype}, family as {theta_shape:?} {theta_dtype}"
                    )))
                }
                "x" if shape == [domain.ndim()] && dtype == DType::Real => {}
                "x" => {
                    return Err(Error::PointDimensionMismatch {
                        expected: domain.ndim(),
                        got: shape.iter().product(),
                    })
                }
                other => {
                    return Err(Error::InvalidParams(format!(
                        "interpolation graph may only read `theta` and `x`, found `{other}`"
                    )))
                }
            }
        }
        let [m] = graph.output_shape() else {
            return Err(Error::InvalidParams(format!(
                "interpolation graph must return a vector, got shape {:?}",
                graph.output_shape()
            )));
        };
        Ok(Self {
            components: *m,
            dtype: graph.output_dtype(),
            kind: FamilyKind::Arbitrary {
                graph: Arc::new(graph),
                theta_shape: theta_shape.to_vec(),
                theta_dtype,
            },
            domain: Some(domain.clone()),
        })
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn domain(&self) -> Option<&Domain> {
        self.domain.as_ref()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Value type of the represented function.
    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn ndim(&self) -> usize {
        self.domain.as_ref().map_or(1, Domain::ndim)
    }

    /// Shape of `θ`.
    pub fn param_shape(&self) -> Vec<usize> {
        match &self.kind {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                let mut s = self.domain.as_ref().expect("gridded family").n().to_vec();
                s.push(self.components);
                s
            }
            FamilyKind::Polynomial { degree } => vec![degree + 1],
            FamilyKind::Arbitrary { theta_shape, .. } => theta_shape.clone(),
        }
    }

    /// Dtype of `θ`.
    pub fn param_dtype(&self) -> DType {
        match &self.kind {
            FamilyKind::Arbitrary { theta_dtype, .. } => *theta_dtype,
            _ => self.dtype,
        }
    }

    pub(crate) fn with(&self, kind: FamilyKind, components: usize, dtype: DType) -> Self {
        Self {
            kind,
            domain: self.domain.clone(),
            components,
            dtype,
        }
    }

    pub(crate) fn short_name(&self) -> String {
        match &self.kind {
            FamilyKind::FourierSeries => "FourierSeries".into(),
            FamilyKind::FiniteDifferences { .. } => "FiniteDifferences".into(),
            FamilyKind::Polynomial { .. } => "Polynomial".into(),
            FamilyKind::Arbitrary { .. } => "Arbitrary".into(),
        }
    }

    pub fn check_params(&self, params: &Tensor) -> Result<()> {
        let shape = self.param_shape();
        if params.shape() != shape.as_slice() {
            return Err(Error::InvalidParams(format!(
                "{self} expects shape {shape:?}, got {:?}",
                params.shape()
            )));
        }
        if params.dtype() == DType::Complex && self.param_dtype() == DType::Real {
            return Err(Error::InvalidParams(format!(
                "{self} expects real parameters"
            )));
        }
        Ok(())
    }

    pub fn empty_field(&self, name: &str) -> Field {
        Field {
            family: self.clone(),
            params: Tensor::zeros(&self.param_shape(), self.param_dtype()),
            name: name.to_string(),
        }
    }

    /// Field with parameters `params`; real tensors are promoted for complex
    /// families.
    pub fn field(&self, name: &str, params: Tensor) -> Result<Field> {
        self.check_params(&params)?;
        Ok(Field {
            family: self.clone(),
            params: params.to_dtype(self.param_dtype()),
            name: name.to_string(),
        })
    }

    /// Field whose grid samples are `f(coordinates)`; only for the gridded
    /// families.
    pub fn field_from_fn(
        &self,
        name: &str,
        mut f: impl FnMut(&[f64]) -> Vec<C64>,
    ) -> Result<Field> {
        let domain = match &self.kind {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                self.domain.as_ref().expect("gridded family")
            }
            _ => return Err(Error::NoGrid),
        };
        let m = self.components;
        let mut values = Vec::with_capacity(domain.num_points() * m);
        for idx in domain.indices() {
            let x: Vec<f64> = idx
                .iter()
                .enumerate()
                .map(|(a, &j)| domain.coordinate(a, j))
                .collect();
            let v = f(&x);
            if v.len() != m {
                return Err(Error::ComponentMismatch {
                    expected: m,
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        let t = Tensor::complex(&self.param_shape(), values)?;
        let t = if self.dtype == DType::Real {
            t.real_part()
        } else {
            t
        };
        self.field(name, t)
    }

    /// Scalar real field sampled from `f`.
    pub fn scalar_field(&self, name: &str, mut f: impl FnMut(&[f64]) -> f64) -> Result<Field> {
        self.field_from_fn(name, |x| vec![Complex64::new(f(x), 0.0)])
    }
}

fn check_components(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParams(
            "a family needs at least one component".into(),
        ));
    }
    Ok(())
}

/// A continuous function named by `(family, θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub family: Family,
    pub params: Tensor,
    pub name: String,
}

impl Field {
    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Same family and name, new parameters.
    pub fn with_params(&self, params: Tensor) -> Result<Field> {
        self.family.field(&self.name, params)
    }

    /// Evaluates the function at `points` (shape `[P, D]`), returning `[P, M]`.
    pub fn interpolate(&self, points: &Tensor) -> Result<Tensor> {
        let d = self.family.ndim();
        let (p, got) = match points.shape() {
            [p, got] => (*p, *got),
            [got] => (1, *got),
            s => {
                return Err(Error::InvalidShape(format!(
                    "points must be [P, D], got {s:?}"
                )))
            }
        };
        if got != d {
            return Err(Error::PointDimensionMismatch { expected: d, got });
        }
        let pts = points
            .as_real()
            .ok_or_else(|| Error::DTypeMismatch("points".into()))?;
        let m = self.family.components;
        let mut out: Vec<C64> = Vec::with_capacity(p * m);
        for x in pts.chunks(d) {
            match &self.family.kind {
                FamilyKind::Polynomial { .. } => out.push(polynomial_value(&self.params, x[0])),
                FamilyKind::FourierSeries => out.extend(self.fourier_value(x)),
                FamilyKind::FiniteDifferences { .. } => out.extend(self.multilinear_value(x)),
                FamilyKind::Arbitrary { graph, .. } => {
                    let xt = Tensor::vector(x);
                    let v = graph.evaluate(&[("theta", &self.params), ("x", &xt)])?;
                    out.extend(v.to_complex_vec());
                }
            }
        }
        let t = Tensor::complex(&[p, m], out)?;
        Ok(if self.family.dtype == DType::Real {
            t.real_part()
        } else {
            t
        })
    }

    /// Function values on the collocation grid, shape `n ⊕ [M]`.
    pub fn sample_on_grid(&self) -> Result<Tensor> {
        match &self.family.kind {
            FamilyKind::FourierSeries | FamilyKind::FiniteDifferences { .. } => {
                Ok(self.params.clone())
            }
            FamilyKind::Polynomial { .. } => Err(Error::NoGrid),
            FamilyKind::Arbitrary { .. } => {
                let domain = self.family.domain.as_ref().ok_or(Error::NoGrid)?;
                let v = self.interpolate(&domain.grid_points())?;
                let mut shape = domain.n().to_vec();
                shape.push(self.family.components);
                v.reshape(&shape)
            }
        }
    }

    /// Trigonometric interpolation, evaluated as a separable sum over the
    /// discrete spectrum of `θ`.
    fn fourier_value(&self, x: &[f64]) -> Vec<C64> {
        let domain = self.family.domain.as_ref().expect("gridded family");
        let shape = self.params.shape();
        let spectrum =
            crate::engine::dft_tensor(&self.params.to_complex(), &(0..x.len()).collect::<Vec<_>>());
        let basis: Vec<Vec<C64>> = x
            .iter()
            .enumerate()
            .map(|(a, &xa)| fourier_basis(domain, a, xa))
            .collect();
        weighted_sum(spectrum.as_complex().expect("complex"), shape, &basis)
    }

    fn multilinear_value(&self, x: &[f64]) -> Vec<C64> {
        let domain = self.family.domain.as_ref().expect("gridded family");
        let shape = self.params.shape();
        let basis: Vec<Vec<C64>> = x
            .iter()
            .enumerate()
            .map(|(a, &xa)| {
                let n = domain.n()[a];
                let t =
                    ((xa - domain.coordinate(a, 0)) / domain.dx()[a]).clamp(0.0, (n - 1) as f64);
                let i0 = (t.floor() as usize).min(n - 2);
                let frac = t - i0 as f64;
                let mut w = vec![C64::new(0.0, 0.0); n];
                w[i0] = C64::new(1.0 - frac, 0.0);
                w[i0 + 1] = C64::new(frac, 0.0);
                w
            })
            .collect();
        weighted_sum(&self.params.to_complex_vec(), shape, &basis)
    }
}

fn polynomial_value(theta: &Tensor, x: f64) -> C64 {
    theta
        .to_complex_vec()
        .iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

/// Per-axis weights `b[k]` such that `f(x) = Σ_k F[k] Π_a b_a[k_a]` for the
/// spectrum `F` of the grid samples. The Nyquist mode of an even grid is
/// split symmetrically so real samples give a real interpolant.
fn fourier_basis(domain: &Domain, axis: usize, x: f64) -> Vec<C64> {
    let n = domain.n()[axis];
    let s = x - domain.coordinate(axis, 0);
    let k = domain.frequency_grid(axis);
    let k = k.as_real().expect("real wavenumbers");
    let inv = 1.0 / n as f64;
    (0..n)
        .map(|j| {
            if n % 2 == 0 && j == n / 2 {
                C64::new((k[j] * s).cos() * inv, 0.0)
            } else {
                C64::from_polar(inv, k[j] * s)
            }
        })
        .collect()
}

/// Contracts every spatial axis of `values` (shape `n ⊕ [M]`) against the
/// per-axis weights.
fn weighted_sum(values: &[C64], shape: &[usize], basis: &[Vec<C64>]) -> Vec<C64> {
    let d = basis.len();
    let m = shape[d];
    let st = strides(shape);
    let mut out = vec![C64::new(0.0, 0.0); m];
    let npts = numel(&shape[..d]);
    let mut idx = vec![0usize; d];
    for _ in 0..npts {
        let mut w = C64::new(1.0, 0.0);
        let mut off = 0;
        for a in 0..d {
            w *= basis[a][idx[a]];
            off += idx[a] * st[a];
        }
        if w != C64::new(0.0, 0.0) {
            for c in 0..m {
                out[c] += w * values[off + c];
            }
        }
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

/// Wavenumber vector `k` along `axis` scaled to `2π/L`.
pub(crate) fn wavenumbers(domain: &Domain, axis: usize, zero_nyquist: bool) -> Tensor {
    let mut k = domain.frequency_grid(axis);
    let n = domain.n()[axis];
    if zero_nyquist && n % 2 == 0 {
        let mut v = k.as_real().expect("real").to_vec();
        v[n / 2] = 0.0;
        k = Tensor::vector(&v);
    }
    k
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::engine::GraphBuilder;

    fn sin_field(n: usize) -> Field {
        let d = Domain::new(&[n], &[1.0]).unwrap();
        let l = d.length(0);
        Family::real_fourier(&d)
            .scalar_field("u", |x| (2.0 * PI * x[0] / l).sin())
            .unwrap()
    }

    #[test]
    fn empty_fields_have_contract_shapes() {
        let d = Domain::square(8, 1.0).unwrap();
        let f = Family::complex_fourier(&d).empty_field("u");
        assert_eq!(f.params.shape(), &[8, 8, 1]);
        assert_eq!(f.params.dtype(), DType::Complex);
        assert_eq!(f.params.max_abs(), 0.0);

        let f = Family::polynomial(3).empty_field("p");
        assert_eq!(f.params.shape(), &[4]);
        assert_eq!(f.params.dtype(), DType::Real);

        let d = Domain::new(&[16], &[1.0]).unwrap();
        let f = Family::finite_differences(&d, 2, 2, DType::Real)
            .unwrap()
            .empty_field("v");
        assert_eq!(f.params.shape(), &[16, 2]);
        assert_eq!(f.params.dtype(), DType::Real);
    }

    #[test]
    fn polynomial_interpolation() {
        let f = Family::polynomial(2)
            .field("p", Tensor::vector(&[1.0, 2.0, 3.0]))
            .unwrap();
        let v = f
            .interpolate(&Tensor::real(&[1, 1], vec![0.5]).unwrap())
            .unwrap();
        assert_eq!(v.as_real().unwrap(), &[2.75]);
    }

    #[test]
    fn fourier_collocation_is_exact() {
        let d = Domain::new(&[6, 5], &[0.5, 1.5]).unwrap();
        let fam = Family::fourier(&d, 2, DType::Complex).unwrap();
        let mut seed = 1u64;
        let mut rnd = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let theta = Tensor::from_fn_complex(&[6, 5, 2], |_| C64::new(rnd(), rnd()));
        let f = fam.field("u", theta.clone()).unwrap();
        let v = f.interpolate(&d.grid_points()).unwrap();
        let v = v.reshape(&[6, 5, 2]).unwrap();
        assert!(v.max_abs_diff(&theta) < 1e-12);
        assert_eq!(f.sample_on_grid().unwrap(), theta);
    }

    #[test]
    fn fourier_midpoints_match_sine() {
        let f = sin_field(8);
        let l = 8.0;
        let mids: Vec<f64> = (0..8).map(|j| j as f64 - 4.0 + 0.5).collect();
        let v = f
            .interpolate(&Tensor::real(&[8, 1], mids.clone()).unwrap())
            .unwrap();
        for (x, got) in mids.iter().zip(v.as_real().unwrap()) {
            assert!((got - (2.0 * PI * x / l).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn fourier_is_periodic() {
        let d = Domain::new(&[7], &[0.3]).unwrap();
        let f = Family::real_fourier(&d)
            .scalar_field("u", |x| (x[0] * 2.0).cos() + x[0])
            .unwrap();
        let l = d.length(0);
        for x in [-0.77, 0.1, 0.9] {
            let a = f
                .interpolate(&Tensor::real(&[1, 1], vec![x]).unwrap())
                .unwrap();
            let b = f
                .interpolate(&Tensor::real(&[1, 1], vec![x + l]).unwrap())
                .unwrap();
            assert!(a.max_abs_diff(&b) < 1e-10);
        }
    }

    #[test]
    fn fd_interpolation_is_multilinear() {
        let d = Domain::new(&[4, 3], &[1.0, 2.0]).unwrap();
        let fam = Family::finite_differences(&d, 2, 1, DType::Real).unwrap();
        let f = fam.scalar_field("u", |x| 3.0 * x[0] - x[1] + 0.5).unwrap();
        let v = f.interpolate(&d.grid_points()).unwrap();
        assert_eq!(v.reshape(&[4, 3, 1]).unwrap(), f.params);
        let p = Tensor::real(&[2, 2], vec![0.25, -1.0, 0.7, 1.3]).unwrap();
        let v = f.interpolate(&p).unwrap();
        let v = v.as_real().unwrap();
        assert!((v[0] - (0.75 + 1.0 + 0.5)).abs() < 1e-12);
        assert!((v[1] - (2.1 - 1.3 + 0.5)).abs() < 1e-12);
        // clamped outside the grid
        let far = f
            .interpolate(&Tensor::real(&[1, 2], vec![100.0, 0.0]).unwrap())
            .unwrap();
        assert!((far.as_real().unwrap()[0] - (3.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_is_linear() {
        let d = Domain::new(&[9], &[0.4]).unwrap();
        let pts = Tensor::real(&[3, 1], vec![-1.1, 0.05, 1.37]).unwrap();
        let families = [
            Family::real_fourier(&d),
            Family::finite_differences(&d, 2, 1, DType::Real).unwrap(),
        ];
        for fam in families {
            let a = fam.scalar_field("u", |x| x[0].sin()).unwrap();
            let b = fam.scalar_field("u", |x| x[0] * x[0]).unwrap();
            let comb = a.params.axpby(2.0, &b.params, -0.5).unwrap();
            let c = a.with_params(comb).unwrap();
            let lhs = c.interpolate(&pts).unwrap();
            let rhs = a
                .interpolate(&pts)
                .unwrap()
                .axpby(2.0, &b.interpolate(&pts).unwrap(), -0.5)
                .unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
        let p1 = Family::polynomial(2)
            .field("p", Tensor::vector(&[1.0, -2.0, 0.5]))
            .unwrap();
        let p2 = p1.with_params(Tensor::vector(&[0.0, 3.0, 4.0])).unwrap();
        let c = p1
            .with_params(p1.params.axpby(2.0, &p2.params, -0.5).unwrap())
            .unwrap();
        let pts = Tensor::real(&[2, 1], vec![0.2, 0.9]).unwrap();
        let rhs = p1
            .interpolate(&pts)
            .unwrap()
            .axpby(2.0, &p2.interpolate(&pts).unwrap(), -0.5)
            .unwrap();
        assert!(c.interpolate(&pts).unwrap().max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn arbitrary_family_samples_graph() {
        let d = Domain::new(&[4], &[1.0]).unwrap();
        let mut b = GraphBuilder::new();
        let _theta = b.input("theta", &[1], DType::Real).unwrap();
        let x = b.input("x", &[1], DType::Real).unwrap();
        let fam = Family::arbitrary(&d, b.finish(x), &[1], DType::Real).unwrap();
        let f = fam.empty_field("u");
        let g = f.sample_on_grid().unwrap();
        assert_eq!(g.shape(), &[4, 1]);
        assert_eq!(g.as_real().unwrap(), &[-2.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn errors() {
        let d = Domain::new(&[4], &[1.0]).unwrap();
        let f = Family::real_fourier(&d).empty_field("u");
        assert!(matches!(
            f.interpolate(&Tensor::real(&[1, 2], vec![0.0, 0.0]).unwrap()),
            Err(Error::PointDimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
        assert!(matches!(
            Family::polynomial(2).empty_field("p").sample_on_grid(),
            Err(Error::NoGrid)
        ));
        assert!(matches!(
            Family::finite_differences(&d, 3, 1, DType::Real),
            Err(Error::InvalidAccuracy(3))
        ));
    }
}
