//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Magic bytes opening a tensor dump file.
pub const MGT1_MAGIC: &[u8; 4] = b"MGT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// Builds a shape, rejecting zero-sized dimensions.
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "all dimensions must be >= 1, got {n}x{c}x{h}x{w}"
            )));
        }
        Ok(Shape { n, c, h, w })
    }

    /// Shape `(n, features, 1, 1)` used for flat per-sample vectors.
    pub fn vector(n: usize, features: usize) -> Result<Self> {
        Self::new(n, features, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// A dense tensor with an optional gradient buffer of the same length.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    /// Convenience constructor from raw dims; fails on zero dims or length mismatch.
    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        Self::new(Shape::new(dims[0], dims[1], dims[2], dims[3])?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    /// Fills by evaluating `f(n, c, h, w)` in storage order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data, grad: None }
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

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    /// Values of batch entry `n` as a flat slice.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), shape.numel());
        }
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient length {} does not match tensor {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds `grad` into the gradient buffer, creating it if absent.
    pub fn accumulate_grad(&mut self, grad: &[T]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient length {} does not match tensor {}",
                grad.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Splits into the value buffer and a mutable handle on the gradient.
    pub(crate) fn parts_mut(&mut self) -> (&mut [T], Option<&[T]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Stacks tensors of equal `(c, h, w)` along the batch axis.
    pub fn stack(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let s = first.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::shape(format!("cannot stack {} with {}", s, p.shape)));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(Shape::new(n, s.c, s.h, s.w)?, data)
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            grad: None,
        }
    }

    /// Writes the little-endian `MGT1` dump: magic, four `u32` dims, then `f64` values.
    pub fn write_mgt1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MGT1_MAGIC)?;
        for d in self.shape.dims() {
            let d = u32::try_from(d).map_err(|_| Error::shape(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_mgt1<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MGT1_MAGIC {
            return Err(Error::Usage(format!("bad tensor magic {magic:?}")));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])?;
        let mut raw = vec![0u8; shape.numel() * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        Tensor::new(shape, data)
    }
}

/// Equality compares shape and values; gradient buffers are ignored.
impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_display_and_zero_dims() {
        let s = Shape::new(2, 3, 4, 5).unwrap();
        assert_eq!(s.to_string(), "2x3x4x5");
        assert_eq!(s.numel(), 120);
        assert!(Shape::new(1, 0, 2, 2).is_err());
    }

    #[test]
    fn data_length_checked() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        assert!(Tensor::<f64>::new(s, vec![0.0; 3]).is_err());
        let mut t = Tensor::<f64>::new(s, vec![0.0; 4]).unwrap();
        assert!(t.set_grad(vec![1.0; 5]).is_err());
        t.accumulate_grad(&[1.0; 4]).unwrap();
        t.accumulate_grad(&[1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0; 4]);
    }

    #[test]
    fn mgt1_layout_is_exact() {
        let t = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_mgt1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MGT1");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..28], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 4 + 16 + 16);
        let back = Tensor::<f64>::read_mgt1(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn mgt1_rejects_truncation() {
        let t = Tensor::<f32>::full(Shape::new(1, 2, 2, 2).unwrap(), 0.25);
        let mut buf = Vec::new();
        t.write_mgt1(&mut buf).unwrap();
        assert!(Tensor::<f32>::read_mgt1(&buf[..buf.len() - 1]).is_err());
        assert_eq!(Tensor::<f32>::read_mgt1(&buf[..]).unwrap(), t);
    }
}
