//! Dense row-major N-dimensional arrays and the matrix kernels the layer
//! graph builds on.
//!
//! Precision is a type parameter: `Tensor<f32>` for training speed,
//! `Tensor<f64>` for gradient checks and oracle tests.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Element type for tensors: `f32` or `f64`.
///
/// The `gemm` hook routes matrix products to the tuned kernels in
/// `matrixmultiply`; everything else goes through `num_traits::Float`.
pub trait Scalar:
    Float + FromPrimitive + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Convert an `f64` constant; exact for f64, rounded for f32.
    fn from_f64c(v: f64) -> Self;

    fn to_f64c(self) -> f64;

    /// C <- alpha * A(m x k) * B(k x n) + beta * C, all row-major contiguous.
    ///
    /// # Safety
    /// Caller guarantees the three buffers hold at least m*k, k*n and m*n
    /// elements respectively and do not alias.
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        b: *const Self,
        beta: Self,
        c: *mut Self,
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64c(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64c(self) -> f64 {
        f64::from(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        b: *const Self,
        beta: Self,
        c: *mut Self,
    ) {
        matrixmultiply::sgemm(
            m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
        );
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64c(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64c(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        b: *const Self,
        beta: Self,
        c: *mut Self,
    ) {
        matrixmultiply::dgemm(
            m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
        );
    }
}

/// Dense N-dimensional array, row-major, owning its buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} elements]", self.data.len())
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and a flat row-major buffer.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("Tensor::new", format!("zero extent in {shape:?}")));
        }
        if expect != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {:?} needs {} elements, got {}", shape, expect, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let off: usize = index
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum();
        self.data[off]
    }

    /// Same buffer, new shape; element count must match.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combine; shapes must match exactly.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale_in_place(&mut self, k: T) {
        for v in &mut self.data {
            *v = *v * k;
        }
    }

    pub fn fill(&mut self, value: T) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Error if any element is NaN or infinite. `context` names the producer
    /// so divergence reports can point at a layer.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(
                    context,
                    format!("non-finite value {v} at flat index {i}"),
                ));
            }
        }
        Ok(())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("expects rank-2 operands, got {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents disagree: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                self.data.as_ptr(),
                other.data.as_ptr(),
                T::zero(),
                out.data.as_mut_ptr(),
            );
        }
        out.validate_finite("matmul")?;
        Ok(out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(Error::dim("transpose", format!("rank {} tensor", self.ndim())));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    /// Convert between precisions.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64c(v.to_f64c())).collect(),
        }
    }
}

/// Reference matrix product: naive triple loop. Oracle for `matmul`; kept in
/// the library so gradcheck and the test suites share one definition.
pub fn matmul_naive<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim(
            "matmul_naive",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + a.data()[i * k + p] * b.data()[p * n + j];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(&[2, 2], vec![1.0_f64, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::new(&[1, 2], vec![1.0_f64, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data()[0], 11.0);
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "error should carry both shapes: {msg}");
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        // random 5x7 by 7x3, |delta| <= 1e-12 in double
        let mut state = 0x9E3779B97F4A7C15_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a = Tensor::from_fn(&[5, 7], |_| next());
        let b = Tensor::from_fn(&[7, 3], |_| next());
        let fast = a.matmul(&b).unwrap();
        let slow = matmul_naive(&a, &b).unwrap();
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Tensor::new(&[2, 3], vec![1.0_f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = a.transposed().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.at(&[2, 1]), 6.0);
        assert_eq!(t.transposed().unwrap(), a);
    }

    #[test]
    fn validate_finite_reports_index() {
        let mut a = Tensor::<f64>::zeros(&[4]);
        a.data_mut()[2] = f64::NAN;
        let err = a.validate_finite("layer conv1").unwrap_err();
        assert!(err.to_string().contains("conv1"));
        assert!(err.to_string().contains("index 2"));
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    }
}
