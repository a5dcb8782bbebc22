//! Dense NCHW tensors.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Floating-point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Real:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Extents of a 4-D tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!("all extents must be >= 1, got {n}x{c}x{h}x{w}")));
        }
        Ok(Self { n, c, h, w })
    }

    pub const fn scalar() -> Self {
        Self { n: 1, c: 1, h: 1, w: 1 }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn with_c(&self, c: usize) -> Self {
        Self { c, ..*self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor({}, ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?})", self.data)
        } else {
            write!(f, "{:?}...)", &self.data[..SHOWN])
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!("{shape} needs {} elements, got {}", shape.numel(), data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from `[n, c, h, w]` extents and `f64` values.
    pub fn from_f64(dims: [usize; 4], values: &[f64]) -> Result<Self> {
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])?;
        Self::from_vec(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.numel()] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::scalar(), v)
    }

    /// Independent uniform draws in `[lo, hi)`.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut SplitMix64) -> Self {
        let data = (0..shape.numel()).map(|_| T::from_f64(rng.uniform(lo, hi))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    /// The single value of a 1x1x1x1 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.shape, Shape::scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect() }
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op: "add_assign", left: self.shape, right: other.shape });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs()).fold(0.0, f64::max)
    }

    /// Copies sample `i` of the batch into a tensor with `n = 1`.
    pub fn sample(&self, i: usize) -> Tensor<T> {
        let per = self.shape.c * self.shape.plane();
        Tensor { shape: Shape { n: 1, ..self.shape }, data: self.data[i * per..(i + 1) * per].to_vec() }
    }

    /// Concatenates along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| Error::InvalidShape("cannot stack zero tensors".into()))?;
        let base = first.shape;
        let mut data = Vec::with_capacity(base.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (base.c, base.h, base.w) {
                return Err(Error::ShapeMismatch { op: "stack", left: base, right: s });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape { n, ..base }, data)
    }
}
