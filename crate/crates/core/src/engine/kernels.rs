//! Numeric kernels behind the graph node kinds.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Mul};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{broadcast_index_map, numel, split_axis, strides, DType, Data, Tensor, C64};

pub(crate) trait Elem:
    Copy + Add<Output = Self> + Mul<Output = Self> + AddAssign + Default
{
    fn conj(self) -> Self;
}

impl Elem for f64 {
    fn conj(self) -> Self {
        self
    }
}

impl Elem for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
}

/// Applies a generic kernel to a tensor's data regardless of dtype.
macro_rules! dispatch {
    ($data:expr, $v:ident => $body:expr) => {
        match $data {
            Data::Real($v) => Data::Real($body),
            Data::Complex($v) => Data::Complex($body),
        }
    };
}

fn build(shape: Vec<usize>, data: Data) -> Tensor {
    Tensor::new(shape, data).expect("kernel produced inconsistent shape")
}

fn zip_broadcast<T: Copy, U>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> U,
) -> Vec<U> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 && a_shape == out_shape {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 && b_shape == out_shape {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    let ia = broadcast_index_map(a_shape, out_shape);
    let ib = broadcast_index_map(b_shape, out_shape);
    ia.iter().zip(&ib).map(|(&i, &j)| f(a[i], b[j])).collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) fn binary(kind: BinKind, a: &Tensor, b: &Tensor, out_shape: &[usize]) -> Tensor {
    let data = match (a.data(), b.data()) {
        (Data::Real(x), Data::Real(y)) => {
            let f = |p: f64, q: f64| match kind {
                BinKind::Add => p + q,
                BinKind::Sub => p - q,
                BinKind::Mul => p * q,
                BinKind::Div => p / q,
            };
            Data::Real(zip_broadcast(x, a.shape(), y, b.shape(), out_shape, f))
        }
        _ => {
            let x = a.to_complex_vec();
            let y = b.to_complex_vec();
            let f = |p: C64, q: C64| match kind {
                BinKind::Add => p + q,
                BinKind::Sub => p - q,
                BinKind::Mul => p * q,
                BinKind::Div => p / q,
            };
            Data::Complex(zip_broadcast(&x, a.shape(), &y, b.shape(), out_shape, f))
        }
    };
    build(out_shape.to_vec(), data)
}

/// Elementwise map with separate real and complex rules.
pub(crate) fn map(t: &Tensor, fr: impl Fn(f64) -> f64, fc: impl Fn(C64) -> C64) -> Tensor {
    let data = match t.data() {
        Data::Real(v) => Data::Real(v.iter().map(|&x| fr(x)).collect()),
        Data::Complex(v) => Data::Complex(v.iter().map(|&z| fc(z)).collect()),
    };
    build(t.shape().to_vec(), data)
}

pub(crate) fn make_complex(re: &Tensor, im: &Tensor, out_shape: &[usize]) -> Tensor {
    let r = re.as_real().expect("real part");
    let i = im.as_real().expect("imag part");
    let data = zip_broadcast(r, re.shape(), i, im.shape(), out_shape, C64::new);
    build(out_shape.to_vec(), Data::Complex(data))
}

/// Sums `t` (shaped like the broadcast output) down to `in_shape`.
pub(crate) fn unbroadcast(t: &Tensor, in_shape: &[usize]) -> Tensor {
    if t.shape() == in_shape {
        return t.clone();
    }
    let map = broadcast_index_map(in_shape, t.shape());
    let n = numel(in_shape);
    let data = dispatch!(t.data(), v => {
        let mut out = vec![Default::default(); n];
        for (k, &j) in map.iter().enumerate() {
            out[j] += v[k];
        }
        out
    });
    build(in_shape.to_vec(), data)
}

pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    let map = broadcast_index_map(t.shape(), shape);
    let data = dispatch!(t.data(), v => map.iter().map(|&j| v[j]).collect());
    build(shape.to_vec(), data)
}

pub(crate) fn sum_all(t: &Tensor) -> Tensor {
    match t.data() {
        Data::Real(v) => Tensor::scalar(v.iter().sum()),
        Data::Complex(v) => Tensor::complex_scalar(v.iter().sum()),
    }
}

pub(crate) fn sum_axis(t: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(t.shape(), axis);
    let mut shape = t.shape().to_vec();
    shape[axis] = 1;
    let data = dispatch!(t.data(), v => {
        let mut out = vec![Default::default(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += v[base + i];
                }
            }
        }
        out
    });
    build(shape, data)
}

/// Repeats a tensor with extent 1 along `axis` to extent `n`.
pub(crate) fn expand_axis(t: &Tensor, axis: usize, n: usize) -> Tensor {
    let mut shape = t.shape().to_vec();
    shape[axis] = n;
    broadcast_to(t, &shape)
}

pub(crate) fn slice(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, n, inner) = split_axis(t.shape(), axis);
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    let data = dispatch!(t.data(), v => {
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        out
    });
    build(shape, data)
}

/// Zero padding with `(before, after)` widths per axis.
pub(crate) fn pad(t: &Tensor, widths: &[(usize, usize)]) -> Tensor {
    let shape: Vec<usize> = t
        .shape()
        .iter()
        .zip(widths)
        .map(|(&e, &(b, a))| e + b + a)
        .collect();
    let out_strides = strides(&shape);
    let in_shape = t.shape().to_vec();
    let rank = in_shape.len();
    let n_out = numel(&shape);
    let data = dispatch!(t.data(), v => {
        let mut out = vec![Default::default(); n_out];
        let mut idx = vec![0usize; rank];
        for &x in v.iter() {
            let mut flat = 0;
            for a in 0..rank {
                flat += (idx[a] + widths[a].0) * out_strides[a];
            }
            out[flat] = x;
            for a in (0..rank).rev() {
                idx[a] += 1;
                if idx[a] < in_shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    });
    build(shape, data)
}

/// Inverse of [`pad`]: extracts the interior block.
pub(crate) fn unpad(t: &Tensor, widths: &[(usize, usize)]) -> Tensor {
    let mut out = t.clone();
    for (axis, &(b, a)) in widths.iter().enumerate() {
        if b == 0 && a == 0 {
            continue;
        }
        let len = out.shape()[axis] - b - a;
        out = slice(&out, axis, b, len);
    }
    out
}

pub(crate) fn gather(t: &Tensor, flat: usize) -> Tensor {
    match t.data() {
        Data::Real(v) => Tensor::scalar(v[flat]),
        Data::Complex(v) => Tensor::complex_scalar(v[flat]),
    }
}

pub(crate) fn scatter(value: &Tensor, shape: &[usize], flat: usize) -> Tensor {
    let mut out = Tensor::zeros(shape, value.dtype()).into_data();
    match (&mut out, value.data()) {
        (Data::Real(o), Data::Real(v)) => o[flat] = v[0],
        (Data::Complex(o), Data::Complex(v)) => o[flat] = v[0],
        _ => unreachable!("scatter dtype"),
    }
    build(shape.to_vec(), out)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize, dtype: DType) -> Tensor {
    let mut shape = parts[0].shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(&shape, axis);
    let promoted: Vec<Tensor> = parts.iter().map(|p| p.to_dtype(dtype)).collect();
    let mut data = Tensor::zeros(&[1], dtype).into_data();
    match &mut data {
        Data::Real(out) => {
            out.clear();
            for o in 0..outer {
                for p in &promoted {
                    let w = p.shape()[axis] * inner;
                    out.extend_from_slice(&p.as_real().unwrap()[o * w..(o + 1) * w]);
                }
            }
        }
        Data::Complex(out) => {
            out.clear();
            for o in 0..outer {
                for p in &promoted {
                    let w = p.shape()[axis] * inner;
                    out.extend_from_slice(&p.as_complex().unwrap()[o * w..(o + 1) * w]);
                }
            }
        }
    }
    build(shape, data)
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized transform along one axis.
fn fft_axis(data: &mut [C64], shape: &[usize], axis: usize, inverse: bool) {
    let (outer, n, inner) = split_axis(shape, axis);
    if n == 1 {
        return;
    }
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    if inner == 1 {
        fft.process(data);
        return;
    }
    // transpose each (n × inner) block so lanes become contiguous
    let mut buf = vec![C64::new(0.0, 0.0); n * inner];
    for o in 0..outer {
        let block = &mut data[o * n * inner..(o + 1) * n * inner];
        for j in 0..n {
            for i in 0..inner {
                buf[i * n + j] = block[j * inner + i];
            }
        }
        fft.process(&mut buf);
        for j in 0..n {
            for i in 0..inner {
                block[j * inner + i] = buf[i * n + j];
            }
        }
    }
}

/// Forward DFT (`e^{-ikx}`, unnormalized) or inverse DFT (`1/N`) over `axes`.
pub(crate) fn dft(t: &Tensor, axes: &[usize], inverse: bool) -> Tensor {
    let mut v = t.to_complex_vec();
    let mut scale = 1.0;
    for &a in axes {
        fft_axis(&mut v, t.shape(), a, inverse);
        scale *= t.shape()[a] as f64;
    }
    if inverse {
        let s = 1.0 / scale;
        v.iter_mut().for_each(|z| *z *= s);
    }
    build(t.shape().to_vec(), Data::Complex(v))
}

/// Unnormalized transform in either direction, used for adjoints.
pub(crate) fn dft_unnormalized(t: &Tensor, axes: &[usize], inverse: bool) -> Tensor {
    let mut v = t.to_complex_vec();
    for &a in axes {
        fft_axis(&mut v, t.shape(), a, inverse);
    }
    build(t.shape().to_vec(), Data::Complex(v))
}

fn convolve_lanes<T: Elem>(x: &[T], w: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let k = w.len();
    let r = (k / 2) as isize;
    let mut out = vec![T::default(); x.len()];
    for o in 0..outer {
        for j in 0..n {
            let obase = (o * n + j) * inner;
            for (kk, &wk) in w.iter().enumerate() {
                let src = j as isize + kk as isize - r;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let ibase = (o * n + src as usize) * inner;
                for i in 0..inner {
                    out[obase + i] += wk * x[ibase + i];
                }
            }
        }
    }
    out
}

/// Centered stencil application with zero padding:
/// `out[j] = Σ_k kernel[k] · x[j + k − r]`, `r = (K − 1)/2`.
pub(crate) fn convolve(x: &Tensor, kernel: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let data = match (x.data(), kernel.data()) {
        (Data::Real(xv), Data::Real(wv)) => Data::Real(convolve_lanes(xv, wv, outer, n, inner)),
        _ => Data::Complex(convolve_lanes(
            &x.to_complex_vec(),
            &kernel.to_complex_vec(),
            outer,
            n,
            inner,
        )),
    };
    build(x.shape().to_vec(), data)
}

/// Gradient of a real loss w.r.t. the kernel: `Σ conj(x[j+k−r]) · g[j]`.
pub(crate) fn convolve_kernel_cotangent(
    x: &Tensor,
    g: &Tensor,
    axis: usize,
    klen: usize,
) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let xv = x.to_complex_vec();
    let gv = g.to_complex_vec();
    let r = (klen / 2) as isize;
    let mut out = vec![C64::new(0.0, 0.0); klen];
    for (kk, acc) in out.iter_mut().enumerate() {
        for o in 0..outer {
            for j in 0..n {
                let src = j as isize + kk as isize - r;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let gb = (o * n + j) * inner;
                let xb = (o * n + src as usize) * inner;
                for i in 0..inner {
                    *acc += xv[xb + i].conj() * gv[gb + i];
                }
            }
        }
    }
    build(vec![klen], Data::Complex(out))
}

pub(crate) fn flip_conj(kernel: &Tensor) -> Tensor {
    let data = dispatch!(kernel.data(), v => v.iter().rev().map(|z| z.conj()).collect());
    build(kernel.shape().to_vec(), data)
}

fn scale_lanes<T: Elem>(x: &[T], s: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for o in 0..outer {
        for (j, &sj) in s.iter().enumerate().take(n) {
            let base = (o * n + j) * inner;
            out.extend(x[base..base + inner].iter().map(|&v| v * sj));
        }
    }
    out
}

/// Multiplies every lane along `axis` by the 1-D vector `s`.
pub(crate) fn scale_axis(x: &Tensor, s: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let data = match (x.data(), s.data()) {
        (Data::Real(xv), Data::Real(sv)) => Data::Real(scale_lanes(xv, sv, outer, n, inner)),
        _ => Data::Complex(scale_lanes(
            &x.to_complex_vec(),
            &s.to_complex_vec(),
            outer,
            n,
            inner,
        )),
    };
    build(x.shape().to_vec(), data)
}

/// `Σ_{lanes} conj(x) · g` reduced onto `axis`.
pub(crate) fn scale_axis_cotangent(x: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let xv = x.to_complex_vec();
    let gv = g.to_complex_vec();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for o in 0..outer {
        for (j, acc) in out.iter_mut().enumerate() {
            let base = (o * n + j) * inner;
            for i in 0..inner {
                *acc += xv[base + i].conj() * gv[base + i];
            }
        }
    }
    build(vec![n], Data::Complex(out))
}

pub(crate) fn conj(t: &Tensor) -> Tensor {
    map(t, |x| x, |z| z.conj())
}

pub(crate) fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    let shape = crate::tensor::broadcast_shapes(a.shape(), b.shape()).expect("mul shapes");
    binary(BinKind::Mul, a, b, &shape)
}

/// Ensures a dtype for an accumulated cotangent: real inputs keep only the
/// real component of a complex cotangent.
pub(crate) fn project(t: Tensor, dtype: DType) -> Tensor {
    match (t.dtype(), dtype) {
        (DType::Complex, DType::Real) => t.real_part(),
        (DType::Real, DType::Complex) => t.to_complex(),
        _ => t,
    }
}

pub(crate) fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::AxisOutOfRange { axis, rank })
    } else {
        Ok(())
    }
}
