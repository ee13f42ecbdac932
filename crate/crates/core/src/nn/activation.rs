use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Branch, Op};
use crate::{Scalar, Tape, Var};

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

fn pinned_clamp<T: Scalar>(x: &crate::Tensor<T>, b: Branch, hi: T) -> crate::Tensor<T> {
    let Branch::Mask(mask) = b else { panic!("pinned tape expected a clamp mask") };
    assert_eq!(mask.len(), x.numel(), "pinned clamp mask has the wrong size");
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask) {
        if m & 1 == 0 {
            *v = T::ZERO;
        } else if m & 2 == 0 {
            *v = hi;
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let value = match self.next_pinned() {
            Some(b) => pinned_clamp(self.value(x), b, T::ZERO),
            None => self.value(x).map(|v| v.max(T::ZERO)),
        };
        self.push(value, Op::Relu(x))
    }

    /// `min(max(x, 0), 6)`
    pub fn relu6(&mut self, x: Var) -> Var {
        let six = T::from_f64(6.0);
        let value = match self.next_pinned() {
            Some(b) => pinned_clamp(self.value(x), b, six),
            None => self.value(x).map(|v| v.max(T::ZERO).min(six)),
        };
        self.push(value, Op::Relu6(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    /// Softmax over the channel axis of an N×C×H×W tensor, per pixel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let value = softmax_channels(self.value(x))?;
        Ok(self.push(value, Op::Softmax(x)))
    }
}

/// Max-subtracted channel softmax of a plain tensor.
pub fn softmax_channels<T: Scalar>(x: &crate::Tensor<T>) -> Result<crate::Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = crate::Tensor::zeros(x.shape());
    let mut exps = Vec::with_capacity(c);
    for b in 0..n {
        for p in 0..hw {
            let idx = |k: usize| (b * c + k) * hw + p;
            let m = (0..c).map(|k| x.data()[idx(k)]).fold(x.data()[idx(0)], T::max);
            exps.clear();
            exps.extend((0..c).map(|k| (x.data()[idx(k)] - m).exp()));
            let z: T = exps.iter().copied().sum();
            for (k, &e) in exps.iter().enumerate() {
                out.data_mut()[idx(k)] = e / z;
            }
        }
    }
    Ok(out)
}
