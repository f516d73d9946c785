//! Dense row-major tensors of `f64` or `Complex64` values.
//!
//! A [`Tensor`] is the numeric carrier for every discrete representation in
//! the crate: field parameters, operator parameters, gradients. Tensors are
//! immutable once built; all arithmetic produces new tensors.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    Real,
    Complex,
}

impl DType {
    pub fn promote(self, other: DType) -> DType {
        if self == DType::Complex || other == DType::Complex {
            DType::Complex
        } else {
            DType::Real
        }
    }

    /// Bytes per element.
    pub fn width(self) -> usize {
        match self {
            DType::Real => 8,
            DType::Complex => 16,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Real => f.write_str("real64"),
            DType::Complex => f.write_str("complex128"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::Real(v) => v.len(),
            Data::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Data::Real(_) => DType::Real,
            Data::Complex(_) => DType::Complex,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Data,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &self.dtype())
            .finish_non_exhaustive()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Decomposes `shape` around `axis` into `(outer, extent, inner)` so that the
/// flat index of `(o, j, i)` is `(o * extent + j) * inner + i`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` broadcast against it.
pub fn broadcast_index_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    if in_shape == out_shape {
        return (0..n).collect();
    }
    if numel(in_shape) == 1 {
        return vec![0; n];
    }
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0usize; rank];
    for a in 0..in_shape.len() {
        if in_shape[a] != 1 {
            eff[a + offset] = in_strides[a];
        }
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for a in (0..rank).rev() {
            idx[a] += 1;
            flat += eff[a];
            if idx[a] < out_shape[a] {
                break;
            }
            flat -= eff[a] * idx[a];
            idx[a] = 0;
        }
    }
    map
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Data) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {:?} holds {} values, data has {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        Ok(Self { shape, data })
    }

    pub fn real(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::new(shape.to_vec(), Data::Real(values))
    }

    pub fn complex(shape: &[usize], values: Vec<C64>) -> Result<Self> {
        Self::new(shape.to_vec(), Data::Complex(values))
    }

    /// A 1-D real tensor.
    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: Data::Real(values.to_vec()),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: Data::Real(vec![v]),
        }
    }

    pub fn complex_scalar(v: C64) -> Self {
        Self {
            shape: vec![],
            data: Data::Complex(vec![v]),
        }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = numel(shape);
        let data = match dtype {
            DType::Real => Data::Real(vec![0.0; n]),
            DType::Complex => Data::Complex(vec![C64::new(0.0, 0.0); n]),
        };
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: Data::Real(vec![v; numel(shape)]),
        }
    }

    pub fn from_fn_real(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: Data::Real((0..numel(shape)).map(f).collect()),
        }
    }

    pub fn from_fn_complex(shape: &[usize], f: impl FnMut(usize) -> C64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: Data::Complex((0..numel(shape)).map(f).collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn into_data(self) -> Data {
        self.data
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            Data::Real(v) => Some(v),
            Data::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[C64]> {
        match &self.data {
            Data::Complex(v) => Some(v),
            Data::Real(_) => None,
        }
    }

    /// Value at a flat index, promoted to complex.
    pub fn get_c(&self, flat: usize) -> C64 {
        match &self.data {
            Data::Real(v) => C64::new(v[flat], 0.0),
            Data::Complex(v) => v[flat],
        }
    }

    pub fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let st = strides(&self.shape);
        let mut flat = 0;
        for ((&i, &e), &s) in index.iter().zip(&self.shape).zip(&st) {
            if i >= e {
                return None;
            }
            flat += i * s;
        }
        Some(flat)
    }

    /// Values promoted to complex.
    pub fn to_complex_vec(&self) -> Vec<C64> {
        match &self.data {
            Data::Real(v) => v.iter().map(|&x| C64::new(x, 0.0)).collect(),
            Data::Complex(v) => v.clone(),
        }
    }

    pub fn to_complex(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Data::Complex(self.to_complex_vec()),
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        match dtype {
            DType::Complex => self.to_complex(),
            DType::Real => self.real_part(),
        }
    }

    pub fn real_part(&self) -> Tensor {
        let data = match &self.data {
            Data::Real(v) => v.clone(),
            Data::Complex(v) => v.iter().map(|z| z.re).collect(),
        };
        Tensor {
            shape: self.shape.clone(),
            data: Data::Real(data),
        }
    }

    pub fn imag_part(&self) -> Tensor {
        let data = match &self.data {
            Data::Real(v) => vec![0.0; v.len()],
            Data::Complex(v) => v.iter().map(|z| z.im).collect(),
        };
        Tensor {
            shape: self.shape.clone(),
            data: Data::Real(data),
        }
    }

    /// Elementwise modulus as a real tensor.
    pub fn abs(&self) -> Tensor {
        let data = match &self.data {
            Data::Real(v) => v.iter().map(|x| x.abs()).collect(),
            Data::Complex(v) => v.iter().map(|z| z.norm()).collect(),
        };
        Tensor {
            shape: self.shape.clone(),
            data: Data::Real(data),
        }
    }

    /// Real view: a complex tensor of shape `s` becomes a real tensor of shape
    /// `s ⊕ [2]` holding interleaved `(re, im)` pairs.
    pub fn to_real_view(&self) -> Tensor {
        match &self.data {
            Data::Real(_) => self.clone(),
            Data::Complex(v) => {
                let mut shape = self.shape.clone();
                shape.push(2);
                let data = v.iter().flat_map(|z| [z.re, z.im]).collect();
                Tensor {
                    shape,
                    data: Data::Real(data),
                }
            }
        }
    }

    pub fn from_real_view(view: &Tensor) -> Result<Tensor> {
        let v = view
            .as_real()
            .ok_or_else(|| Error::DTypeMismatch("real view must be real".into()))?;
        if view.shape.last() != Some(&2) {
            return Err(Error::InvalidShape(
                "real view needs trailing extent 2".into(),
            ));
        }
        let shape = view.shape[..view.shape.len() - 1].to_vec();
        let data = v.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
        Tensor::new(shape, Data::Complex(data))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map_real(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        match &self.data {
            Data::Real(v) => Ok(Tensor {
                shape: self.shape.clone(),
                data: Data::Real(v.iter().map(|&x| f(x)).collect()),
            }),
            Data::Complex(_) => Err(Error::UnsupportedDType("map_real")),
        }
    }

    /// `a * self + b * other` with dtype promotion; shapes must agree.
    pub fn axpby(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::InvalidShape(format!(
                "axpby shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = match (&self.data, &other.data) {
            (Data::Real(x), Data::Real(y)) => {
                Data::Real(x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())
            }
            _ => {
                let x = self.to_complex_vec();
                let y = other.to_complex_vec();
                Data::Complex(x.iter().zip(&y).map(|(x, y)| x * a + y * b).collect())
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> Tensor {
        let data = match &self.data {
            Data::Real(v) => Data::Real(v.iter().map(|x| a * x).collect()),
            Data::Complex(v) => Data::Complex(v.iter().map(|z| z * a).collect()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale_c(&self, a: C64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Data::Complex(self.to_complex_vec().into_iter().map(|z| z * a).collect()),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        match &self.data {
            Data::Real(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Data::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.data {
            Data::Real(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Data::Complex(v) => v.iter().fold(0.0, |m, z| m.max(z.norm())),
        }
    }

    pub fn sum_c(&self) -> C64 {
        match &self.data {
            Data::Real(v) => C64::new(v.iter().sum(), 0.0),
            Data::Complex(v) => v.iter().sum(),
        }
    }

    /// Largest elementwise modulus of the difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        match (&self.data, &other.data) {
            (Data::Real(a), Data::Real(b)) => {
                a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
            }
            _ => {
                let a = self.to_complex_vec();
                let b = other.to_complex_vec();
                a.iter()
                    .zip(&b)
                    .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
            }
        }
    }

    /// Hermitian inner product `Σ conj(self)·other`.
    pub fn dot(&self, other: &Tensor) -> C64 {
        let a = self.to_complex_vec();
        let b = other.to_complex_vec();
        a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum()
    }

    pub fn is_finite(&self) -> bool {
        match &self.data {
            Data::Real(v) => v.iter().all(|x| x.is_finite()),
            Data::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }
}
