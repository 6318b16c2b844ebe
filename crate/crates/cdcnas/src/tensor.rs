//! Dense 5-D tensors in (batch, channel, time, height, width) layout.
//!
//! Data is contiguous row-major in (N, C, T, H, W) order. Kernel tensors reuse
//! the same layout as (C_out, C_in/groups, kT, kH, kW).

use crate::elem::Elem;
use crate::error::{Error, Result};
use rand::Rng;
use std::fmt;

/// Extents of a 5-D tensor: (N, C, T, H, W).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub const fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Shape5 { n, c, t, h, w }
    }

    /// Shape of a scalar (all extents 1).
    pub const fn scalar() -> Self {
        Shape5::new(1, 1, 1, 1, 1)
    }

    /// A length-`k` vector laid out along the channel axis.
    pub const fn vector(k: usize) -> Self {
        Shape5::new(1, k, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.t * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && t < self.t && h < self.h && w < self.w);
        (((n * self.c + c) * self.t + t) * self.h + h) * self.w + w
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.n, self.c, self.t, self.h, self.w]
    }

    pub fn from_array(a: [usize; 5]) -> Self {
        Shape5::new(a[0], a[1], a[2], a[3], a[4])
    }

    /// Spatio-temporal volume T*H*W.
    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{},{})",
            self.n, self.c, self.t, self.h, self.w
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Elem> {
    shape: Shape5,
    data: Vec<E>,
}

impl<E: Elem> Tensor<E> {
    pub fn new(shape: Shape5, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {} (numel {})",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape5) -> Self {
        Tensor {
            shape,
            data: vec![E::ZERO; shape.numel()],
        }
    }

    pub fn full(shape: Shape5, value: E) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor::full(Shape5::scalar(), value)
    }

    /// Vector along the channel axis.
    pub fn from_vec(values: Vec<E>) -> Self {
        Tensor {
            shape: Shape5::vector(values.len()),
            data: values,
        }
    }

    pub fn from_fn(shape: Shape5, mut f: impl FnMut(usize) -> E) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Standard-normal fill scaled by `std`, via Box-Muller on the given rng.
    pub fn randn(shape: Shape5, std: f64, rng: &mut impl Rng) -> Self {
        let n = shape.numel();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            data.push(E::from_f64(z * std));
        }
        Tensor { shape, data }
    }

    pub fn uniform(shape: Shape5, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = shape.numel();
        let data = (0..n)
            .map(|_| E::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> E {
        self.data[self.shape.index(n, c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize, v: E) {
        let i = self.shape.index(n, c, t, h, w);
        self.data[i] = v;
    }

    /// Reinterpret with a different shape of identical numel.
    pub fn reshaped(mut self, shape: Shape5) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} elements to {}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise op on mismatched shapes {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add_assign on mismatched shapes {} vs {}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, k: E) {
        for v in self.data.iter_mut() {
            *v *= k;
        }
    }

    pub fn sum(&self) -> E {
        let mut acc = E::ZERO;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element (0 for empty tensors).
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.abs().to_f64())
            .fold(0.0, f64::max)
    }

    /// Precision cast, e.g. f32 parameters to f64 for gradient checking.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| F::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Max |a-b| over two equally shaped tensors.
pub fn max_abs_diff<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs().to_f64())
        .fold(0.0, f64::max)
}

/// Max |a-b| / max(1, |b|) over two equally shaped tensors.
pub fn max_rel_diff<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_diff shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs().to_f64() / y.abs().to_f64().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape5::new(2, 3, 4, 5, 6);
        assert_eq!(s.index(0, 0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 0, 1, 0), 6);
        assert_eq!(s.index(0, 0, 1, 0, 0), 30);
        assert_eq!(s.index(0, 1, 0, 0, 0), 120);
        assert_eq!(s.index(1, 0, 0, 0, 0), 360);
        assert_eq!(s.index(1, 2, 3, 4, 5), s.numel() - 1);
    }

    #[test]
    fn new_rejects_wrong_length() {
        let s = Shape5::new(1, 1, 2, 2, 2);
        assert!(Tensor::<f32>::new(s, vec![0.0; 7]).is_err());
        assert!(Tensor::<f32>::new(s, vec![0.0; 8]).is_ok());
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::<f32>::from_vec(vec![1.5, -2.25, 0.0]);
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t, back);
    }
}
