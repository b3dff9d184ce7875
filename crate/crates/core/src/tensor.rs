//! Dense NCHW tensor storage.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{FfError, Result};

/// Logical shape of a rank-4 NCHW tensor.
///
/// Rank-2 `N x F` matrices use `c = F` and `h = w = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// Panics on a zero dimension; use [`Shape::try_new`] for untrusted input.
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::try_new(n, c, h, w).expect("invalid tensor shape")
    }

    pub fn try_new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(FfError::Shape(format!("all dimensions must be >= 1, got {n}x{c}x{h}x{w}")));
        }
        n.checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| FfError::Shape(format!("{n}x{c}x{h}x{w} overflows usize")))?;
        Ok(Shape { n, c, h, w })
    }

    pub fn matrix(n: usize, f: usize) -> Self {
        Self::new(n, f, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_n(&self, n: usize) -> Self {
        Shape::new(n, self.c, self.h, self.w)
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(FfError::Shape(format!(
                "buffer of {} values does not fit shape {shape} ({} values)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f32) -> Self {
        Tensor { shape, data: (0..shape.numel()).map(&mut f).collect() }
    }

    pub fn matrix(n: usize, f: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_vec(Shape::try_new(n, f, 1, 1)?, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    /// View each sample as a flat feature vector (`N x CHW x 1 x 1`).
    pub fn flatten(self) -> Self {
        let shape = Shape::matrix(self.shape.n, self.shape.sample_len());
        Tensor { shape, data: self.data }
    }

    pub fn slice_samples(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.n {
            return Err(FfError::Shape(format!("sample range {range:?} invalid for batch of {}", self.shape.n)));
        }
        let len = self.shape.sample_len();
        Ok(Tensor {
            shape: self.shape.with_n(range.len()),
            data: self.data[range.start * len..range.end * len].to_vec(),
        })
    }

    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(FfError::Shape("cannot select zero samples".into()));
        }
        let len = self.shape.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.shape.n {
                return Err(FfError::Shape(format!("sample index {i} out of range for batch of {}", self.shape.n)));
            }
            data.extend_from_slice(self.sample(i));
        }
        Ok(Tensor { shape: self.shape.with_n(indices.len()), data })
    }

    /// Concatenate along the sample axis.
    pub fn concat(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| FfError::Shape("concat of zero tensors".into()))?;
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(FfError::Shape(format!("cannot concat {} with {}", first.shape, s)));
            }
            n += s.n;
        }
        let mut data = Vec::with_capacity(n * first.shape.sample_len());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: first.shape.with_n(n), data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, k: f32) -> Self {
        self.map(|v| v * k)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error naming `context` when any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(FfError::NonFinite(context.to_string()))
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}
