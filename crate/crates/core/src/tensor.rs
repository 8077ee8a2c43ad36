//! Dense row-major tensors over real or complex doubles.
//!
//! Every other module is built on [`DenseTensor`]: MPO sites and bond tensors
//! are real, tensor-ring sites and gate matrices are complex. Operations are
//! pure and return new values.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar element of a tensor. Implemented for `f64` and `Complex64`.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Default
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + MulAssign
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_real(x: f64) -> Self;
    fn conj(self) -> Self;
    fn abs_sq(self) -> f64;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn scale(self, x: f64) -> Self;

    fn abs(self) -> f64 {
        self.abs_sq().sqrt()
    }

    /// Unit-modulus factor `x / |x|`, or one for zero.
    fn phase(self) -> Self {
        let a = self.abs();
        if a == 0.0 {
            Self::one()
        } else {
            self.scale(1.0 / a)
        }
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn abs_sq(self) -> f64 {
        self * self
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn scale(self, x: f64) -> Self {
        self * x
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs_sq(self) -> f64 {
        self.norm_sqr()
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn scale(self, x: f64) -> Self {
        self * x
    }
}

/// Ordered list of axis extents. The empty shape is a scalar.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(extents: impl Into<Vec<usize>>) -> Result<Self> {
        let extents = extents.into();
        if extents.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "extents must be positive, got {extents:?}"
            )));
        }
        Ok(Shape(extents))
    }

    pub fn extents(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for k in (0..self.0.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.0[k + 1];
        }
        strides
    }
}

impl From<&[usize]> for Shape {
    fn from(e: &[usize]) -> Self {
        Shape::new(e.to_vec()).expect("zero extent")
    }
}

/// n-dimensional array stored as a flat row-major buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T: Scalar = f64> {
    shape: Shape,
    data: Vec<T>,
}

pub type ComplexTensor = DenseTensor<Complex64>;

impl<T: Scalar> DenseTensor<T> {
    pub fn new(extents: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(extents.to_vec())?;
        if shape.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, buffer has {}",
                extents,
                shape.len(),
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(extents: &[usize]) -> Self {
        let shape = Shape::from(extents);
        let data = vec![T::zero(); shape.len()];
        DenseTensor { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        DenseTensor {
            shape: Shape(Vec::new()),
            data: vec![v],
        }
    }

    pub fn from_fn(extents: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let shape = Shape::from(extents);
        let mut idx = vec![0usize; extents.len()];
        let mut data = Vec::with_capacity(shape.len());
        for _ in 0..shape.len() {
            data.push(f(&idx));
            increment(&mut idx, extents);
        }
        DenseTensor { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        self.shape.extents()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        let mut off = 0;
        for (k, (&i, &e)) in index.iter().zip(self.shape()).enumerate() {
            assert!(i < e, "index {i} out of bounds for axis {k} of extent {e}");
            off = off * e + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: T) {
        let off = self.offset(index);
        self.data[off] = v;
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::NotMatrix(self.rank())),
        }
    }

    pub fn reshape(&self, extents: &[usize]) -> Result<Self> {
        self.clone().into_reshape(extents)
    }

    pub fn into_reshape(self, extents: &[usize]) -> Result<Self> {
        let shape = Shape::new(extents.to_vec())?;
        if shape.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) into {:?}",
                self.shape(),
                self.data.len(),
                extents
            )));
        }
        Ok(DenseTensor {
            shape,
            data: self.data,
        })
    }

    /// Reorders axes: axis `k` of the result is axis `order[k]` of `self`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if order.len() != rank {
            return Err(Error::NotAPermutation(order.to_vec()));
        }
        for &o in order {
            if o >= rank || seen[o] {
                return Err(Error::NotAPermutation(order.to_vec()));
            }
            seen[o] = true;
        }
        if order.iter().enumerate().all(|(k, &o)| k == o) {
            return Ok(self.clone());
        }
        let in_strides = self.shape.strides();
        let out_extents: Vec<usize> = order.iter().map(|&o| self.shape()[o]).collect();
        let strides: Vec<usize> = order.iter().map(|&o| in_strides[o]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[off]);
            // odometer over the output index, tracking the input offset
            for k in (0..rank).rev() {
                idx[k] += 1;
                off += strides[k];
                if idx[k] < out_extents[k] {
                    break;
                }
                off -= strides[k] * out_extents[k];
                idx[k] = 0;
            }
        }
        DenseTensor::new(&out_extents, data)
    }

    /// Sums over the paired axes. The result carries the free axes of `self`
    /// followed by the free axes of `other`, each in their original order.
    pub fn contract(&self, other: &Self, pairs: &[(usize, usize)]) -> Result<Self> {
        let (ra, rb) = (self.rank(), other.rank());
        let mut used_a = vec![false; ra];
        let mut used_b = vec![false; rb];
        for &(i, j) in pairs {
            if i >= ra {
                return Err(Error::AxisOutOfRange { axis: i, rank: ra });
            }
            if j >= rb {
                return Err(Error::AxisOutOfRange { axis: j, rank: rb });
            }
            if used_a[i] || used_b[j] {
                return Err(Error::InvalidArgument(format!(
                    "axis paired twice in {pairs:?}"
                )));
            }
            if self.shape()[i] != other.shape()[j] {
                return Err(Error::ShapeMismatch(format!(
                    "contracting axis {i} (extent {}) with axis {j} (extent {})",
                    self.shape()[i],
                    other.shape()[j]
                )));
            }
            used_a[i] = true;
            used_b[j] = true;
        }
        let free_a: Vec<usize> = (0..ra).filter(|&k| !used_a[k]).collect();
        let free_b: Vec<usize> = (0..rb).filter(|&k| !used_b[k]).collect();

        let mut order_a = free_a.clone();
        order_a.extend(pairs.iter().map(|p| p.0));
        let mut order_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        order_b.extend(free_b.iter().copied());

        let m: usize = free_a.iter().map(|&k| self.shape()[k]).product();
        let kdim: usize = pairs.iter().map(|p| self.shape()[p.0]).product();
        let n: usize = free_b.iter().map(|&k| other.shape()[k]).product();

        let a = self.permute(&order_a)?;
        let b = other.permute(&order_b)?;
        let data = matmul_raw(a.data(), b.data(), m, kdim, n);

        let mut extents: Vec<usize> = free_a.iter().map(|&k| self.shape()[k]).collect();
        extents.extend(free_b.iter().map(|&k| other.shape()[k]));
        DenseTensor::new(&extents, data)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul of {m}x{k} by {k2}x{n}"
            )));
        }
        DenseTensor::matrix(m, n, matmul_raw(&self.data, &other.data, m, k, n))
    }

    /// Matrix-vector product for a rank-2 tensor.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        let (m, n) = self.dims2()?;
        if x.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{m}x{n} matrix applied to length-{} vector",
                x.len()
            )));
        }
        Ok((0..m)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> Result<Self> {
        self.dims2()?;
        Ok(self.permute(&[1, 0])?.map(|x| x.conj()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|x| x * alpha)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self
            .sub(other)?
            .data
            .iter()
            .fold(0.0, |m, x| f64::max(m, x.abs())))
    }
}

impl DenseTensor<f64> {
    /// Promotes a real tensor to complex with zero imaginary parts.
    pub fn to_complex(&self) -> ComplexTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }
}

/// Row-major `m x k` times `k x n`.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Advances a row-major multi-index; wraps to all zeros after the last.
pub(crate) fn increment(idx: &mut [usize], extents: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < extents[k] {
            return;
        }
        idx[k] = 0;
    }
}
