//! Dense vectors and matrices, activations and the central-difference oracle.
//!
//! All transcendental functions go through `libm` so results are the same with
//! and without `std` and across platforms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::rng::Rng;
use crate::{Error, Result};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `acc += src`, elementwise.
#[inline]
pub fn add_assign(acc: &mut [f64], src: &[f64]) {
    debug_assert_eq!(acc.len(), src.len());
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// A dense vector of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    /// Builds a vector, rejecting non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !all_finite(&data) {
            return Err(Error::NonFinite("vector".into()));
        }
        Ok(RealVector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        RealVector(vec![0.0; dim])
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        RealVector(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if all_finite(&self.0) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }
}

impl Deref for RealVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RealVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<RealVector> for Vec<f64> {
    fn from(v: RealVector) -> Self {
        v.0
    }
}

/// A dense row-major matrix of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix data",
                format!("{} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite("matrix".into()));
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Entries drawn independently from `Uniform[-scale, scale]`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
        RealMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `out += self · x`
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        out
    }

    /// `out += selfᵀ · v`
    #[inline]
    pub fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
    }

    /// `self += u · vᵀ`
    #[inline]
    pub fn outer_acc(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (r, &ur) in u.iter().enumerate() {
            if ur == 0.0 {
                continue;
            }
            for (a, b) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(v) {
                *a += ur * b;
            }
        }
    }

    pub(crate) fn check_shape(&self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::shape(
                name,
                format!("{rows}x{cols}"),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

/// Elementwise logistic function.
pub fn sigmoid(x: &RealVector) -> Result<RealVector> {
    x.ensure_finite("sigmoid input")?;
    Ok(RealVector(x.iter().map(|&v| sigmoid_scalar(v)).collect()))
}

/// Elementwise hyperbolic tangent.
pub fn tanh_vec(x: &RealVector) -> Result<RealVector> {
    x.ensure_finite("tanh input")?;
    Ok(RealVector(x.iter().map(|&v| tanh(v)).collect()))
}

/// Central-difference gradient estimate of `f` at `theta`.
///
/// Each coordinate is `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`. `theta` is restored
/// after every probe, so `f` always sees exactly one perturbed coordinate.
pub fn finite_diff_grad<F>(mut f: F, theta: &RealVector, h: f64) -> Result<RealVector>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = theta.0.clone();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(RealVector(grad))
}

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> RealVector {
        RealVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(&v(&[0.0])).unwrap()[0], 0.5);
        assert!((sigmoid(&v(&[50.0])).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!((sigmoid(&v(&[-1.5])).unwrap()[0] - 0.18242552380635635).abs() < 1e-15);
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_vec(&v(&[0.0])).unwrap()[0], 0.0);
        assert!((tanh_vec(&v(&[0.5])).unwrap()[0] - 0.46211715726000974).abs() < 1e-15);
        let a = tanh_vec(&v(&[0.3, -2.0])).unwrap();
        let b = tanh_vec(&v(&[-0.3, 2.0])).unwrap();
        assert_eq!(a[0], -b[0]);
        assert_eq!(a[1], -b[1]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(RealVector::new(vec![f64::NAN]).is_err());
        let mut x = RealVector::zeros(2);
        x[1] = f64::INFINITY;
        assert!(matches!(sigmoid(&x), Err(Error::NonFinite(_))));
        assert!(matches!(tanh_vec(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|t| t[0] * t[0], &v(&[3.0]), 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);

        let g = finite_diff_grad(|_| 4.2, &v(&[1.0, 2.0, 3.0]), 1e-5).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));

        let g = finite_diff_grad(|t| t.iter().map(|x| x * x).sum(), &v(&[1.0, -2.0]), 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] + 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_propagates_non_finite() {
        let r = finite_diff_grad(|t| 1.0 / (t[0] - 1e-5), &v(&[0.0]), 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert!(finite_diff_grad(|t| t[0], &v(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn matrix_products() {
        let m = RealMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        m.matvec_t_acc(&[1.0, 1.0], &mut out);
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
        let mut z = RealMatrix::zeros(2, 3);
        z.outer_acc(&[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(z.as_slice(), &[1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
        assert!(RealMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_symmetry(x in -700.0f64..700.0) {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sigmoid_in_open_interval(x in -30.0f64..30.0) {
            let s = sigmoid_scalar(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
