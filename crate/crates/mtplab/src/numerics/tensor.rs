//! Dense row-major tensor with copy-on-write storage.
//!
//! `Arc` storage keeps graph construction cheap (nodes clone tensors freely);
//! the optimizer uses [`Tensor::make_mut`] to update parameters in place when
//! it holds the only reference.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from raw row-major data. The element count must match
    /// the shape product (empty shape = scalar, product 1).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![T::zero(); numel]) }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; numel]) }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: Arc::new(vec![value]) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single element of a rank-0 (or one-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Shape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Mutable view of the storage, cloning it first if shared.
    pub fn make_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// Errors if any element is NaN or infinite; `op` names the producer.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// True when both tensors have identical shape and bit-identical
    /// elements. Stricter than `==` on floats; used by determinism tests.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Sum of squared elements in index order, accumulated in `f64`.
    pub fn sq_norm_f64(&self) -> f64 {
        self.data.iter().map(|v| { let x = v.as_f64(); x * x }).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let r = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn scalar_has_empty_shape_and_one_element() {
        let t = Tensor::scalar(4.5f64);
        assert!(t.is_scalar());
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item().unwrap(), 4.5);
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let v = t.reshape(&[3, 2]).unwrap();
        assert_eq!(v.shape(), &[3, 2]);
        assert_eq!(v.data(), t.data());
    }

    #[test]
    fn check_finite_flags_nan() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(t.check_finite("test").is_err());
        let ok = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(ok.check_finite("test").is_ok());
    }

    #[test]
    fn make_mut_does_not_alias_clones() {
        let mut a = Tensor::<f32>::zeros(&[3]);
        let b = a.clone();
        a.make_mut()[0] = 7.0;
        assert_eq!(a.data()[0], 7.0);
        assert_eq!(b.data()[0], 0.0, "clone must keep its own data");
    }
}
