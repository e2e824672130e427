//! Dense rank-4 activations in `(n, c, h, w)` order.
//!
//! Element `(i, d, y, x)` lives at flat index `((i*c + d)*h + y)*w + x`.
//! Checkpoints and every layer rely on this layout.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    /// Total element count, `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.n.checked_mul(self.c)?.checked_mul(self.h)?.checked_mul(self.w)
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn with_batch(self, n: usize) -> Self {
        Shape4 { n, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 || self.checked_len().is_none() {
            return Err(Error::InvalidShape(*self));
        }
        Ok(())
    }

    #[inline]
    pub fn flatten(&self, i: usize, d: usize, y: usize, x: usize) -> usize {
        ((i * self.c + d) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize, usize) {
        let x = idx % self.w;
        let rest = idx / self.w;
        let y = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, y, x)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(shape: Shape4, fill: T) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor4 {
            shape,
            data: vec![fill; shape.len()],
        })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::mismatch(
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Builds a tensor by evaluating `f` at every `(i, d, y, x)` in layout order.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        shape.validate()?;
        let data = (0..shape.len())
            .map(|idx| {
                let (i, d, y, x) = shape.unflatten(idx);
                f(i, d, y, x)
            })
            .collect();
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros_like(&self) -> Self {
        Tensor4 {
            shape: self.shape,
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, d: usize, y: usize, x: usize) -> T {
        self.data[self.shape.flatten(i, d, y, x)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, d: usize, y: usize, x: usize, v: T) {
        let idx = self.shape.flatten(i, d, y, x);
        self.data[idx] = v;
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        shape.validate()?;
        if shape.len() != self.data.len() {
            return Err(Error::mismatch(self.shape, shape));
        }
        Ok(Tensor4 { shape, data: self.data })
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.shape.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Copies the listed samples, in order, into a new batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let shape = self.shape.with_batch(indices.len());
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::IndexOutOfRange {
                    what: "sample",
                    index: i,
                    limit: self.shape.n,
                });
            }
            data.extend_from_slice(self.sample(i));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn ensure_shape(&self, expected: Shape4) -> Result<()> {
        if self.shape != expected {
            return Err(Error::mismatch(expected, self.shape));
        }
        Ok(())
    }
}

/// A single `h x w` plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.w + x]
    }
}

/// Mean over channels of one sample, giving an `h x w` map.
pub fn channel_mean_map<T: Scalar>(x: &Tensor4<T>, sample: usize) -> Result<Plane<T>> {
    let s = x.shape();
    if sample >= s.n {
        return Err(Error::IndexOutOfRange {
            what: "sample",
            index: sample,
            limit: s.n,
        });
    }
    let plane = s.plane_len();
    let mut out = vec![T::zero(); plane];
    for plane_data in x.sample(sample).chunks_exact(plane) {
        for (acc, &v) in out.iter_mut().zip(plane_data) {
            *acc += v;
        }
    }
    let inv = T::one() / T::lit(s.c as f64);
    for v in &mut out {
        *v *= inv;
    }
    Ok(Plane {
        h: s.h,
        w: s.w,
        data: out,
    })
}
