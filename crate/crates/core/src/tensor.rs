//! Dense rank-4 tensors in (batch, channels, height, width) layout.
//!
//! Storage is row-major. Lower-rank data is embedded with singleton
//! dimensions, so a scalar is a `(1, 1, 1, 1)` tensor.

use std::fmt;

use crate::error::{Error, Result};

/// Storage element of a [`Tensor`].
///
/// Every kernel in the crate computes in `f64`; the element type only
/// decides how values are stored between operations.
pub trait Element: Copy + Default + PartialOrd + Send + Sync + fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape {
        batch: 1,
        channels: 1,
        height: 1,
        width: 1,
    };

    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Pixels per channel plane.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::SCALAR
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("all dimensions must be >= 1, got {self}")));
        }
        Ok(())
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Rank-4 tensor with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Shape,
    data: Vec<E>,
    grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    /// Tensor of `shape` with every element set to `fill`.
    pub fn full(shape: impl Into<Shape>, fill: E) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![fill; shape.numel()],
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, E::default())
    }

    /// Wraps row-major `values`; their length must match the shape.
    pub fn from_vec(shape: impl Into<Shape>, values: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if values.len() != shape.numel() {
            return Err(Error::dim(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: values,
            grad: None,
        })
    }

    pub fn from_f64(shape: impl Into<Shape>, values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: Shape::SCALAR,
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [E]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = E::default());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, creating it if absent.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::dim(format!(
                "gradient of length {} for tensor {}",
                g.len(),
                self.shape
            )));
        }
        match self.grad.as_mut() {
            Some(slot) => {
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s = E::from_f64(s.to_f64() + v);
                }
            }
            None => self.grad = Some(g.iter().map(|&v| E::from_f64(v)).collect()),
        }
        Ok(())
    }

    /// Ensures a gradient slot exists (zero-filled when newly created).
    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![E::default(); self.data.len()]);
        }
    }

    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> E {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: E) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// Scalar value of a `(1, 1, 1, 1)` tensor.
    pub fn item(&self) -> Result<E> {
        if !self.shape.is_scalar() {
            return Err(Error::contract(format!(
                "item() on non-scalar tensor {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Converts storage precision. The gradient slot is converted too.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let conv = |v: &[E]| v.iter().map(|x| F::from_f64(x.to_f64())).collect::<Vec<F>>();
        Tensor {
            shape: self.shape,
            data: conv(&self.data),
            grad: self.grad.as_deref().map(conv),
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn max_value(&self) -> E {
        self.data
            .iter()
            .copied()
            .fold(self.data[0], |a, b| if b > a { b } else { a })
    }

    pub fn min_value(&self) -> E {
        self.data
            .iter()
            .copied()
            .fold(self.data[0], |a, b| if b < a { b } else { a })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if shape.numel() != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {} to {shape}", self.shape)));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// Channel plane `(n, c)` as a slice.
    pub fn plane(&self, n: usize, c: usize) -> &[E] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }
}
