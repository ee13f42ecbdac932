use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{ensure, shape_err, Result};
use crate::Scalar;

/// Dense row-major array.
///
/// Every extent is positive and `data.len()` equals the product of the
/// extents. Rank 0 is not used; scalars are `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        ensure!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            shape_err!("extents must be positive, got {shape:?}")
        );
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            shape_err!("shape {shape:?} needs {numel} values, got {}", data.len())
        );
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive, got {shape:?}"
        );
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut crate::Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::from_f64(rng.random_range(lo..hi));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Extents of an NCHW tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err!("expected an N×C×H×W tensor, got {:?}", self.shape)),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == self.numel(),
            shape_err!("cannot reshape {:?} into {shape:?}", self.shape)
        );
        Self::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Largest absolute difference to `other`; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-pixel argmax over the channel axis of an N×C×H×W tensor.
    pub fn argmax_channels(&self) -> Result<Vec<u8>> {
        let (n, c, h, w) = self.dims4()?;
        ensure!(c <= 256, shape_err!("argmax labels are 8-bit, got {c} channels"));
        let hw = h * w;
        let mut out = vec![0u8; n * hw];
        for b in 0..n {
            for p in 0..hw {
                let mut best = 0;
                let mut best_v = self.data[b * c * hw + p];
                for k in 1..c {
                    let v = self.data[(b * c + k) * hw + p];
                    if v > best_v {
                        best = k;
                        best_v = v;
                    }
                }
                out[b * hw + p] = best as u8;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn reshape_round_trip() {
        let mut rng = crate::rng_from_seed(3);
        let t = Tensor::<f32>::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let r = t.reshape(&[6, 4]).unwrap().reshape(&[2, 3, 4]).unwrap();
        assert_eq!(t, r);
        assert!(t.reshape(&[5, 5]).is_err());
    }

    #[test]
    fn argmax_picks_first_maximum() {
        let t = Tensor::<f32>::from_vec(&[1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(t.argmax_channels().unwrap(), vec![0, 1]);
    }
}
