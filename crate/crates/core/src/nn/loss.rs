use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Error, Result};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

pub(crate) struct CeNode<T: Scalar> {
    pub logits: Var,
    /// `w[y_p] / Σ w[y]` per pixel, zero where ignored.
    coeff: Vec<T>,
    probs: Vec<T>,
    labels: Vec<u8>,
}

impl<T: Scalar> CeNode<T> {
    pub(crate) fn backward(&self, shape: &[usize], g: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let g0 = g.data()[0];
        let mut d = Tensor::zeros(shape);
        for b in 0..n {
            for p in 0..hw {
                let coeff = self.coeff[b * hw + p];
                if coeff == T::ZERO {
                    continue;
                }
                let y = self.labels[b * hw + p] as usize;
                for k in 0..c {
                    let i = (b * c + k) * hw + p;
                    let target = if k == y { T::ONE } else { T::ZERO };
                    d.data_mut()[i] = g0 * coeff * (self.probs[i] - target);
                }
            }
        }
        Ok(d)
    }
}

/// Class-weighted pixel cross-entropy.
///
/// `Σ_p w[y_p]·(−log softmax(logits_p)[y_p]) / Σ_p w[y_p]` over pixels whose
/// label is not `ignore_label`. With no counted pixel the loss is 0.
pub fn weighted_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[u8],
    weights: &[T],
    ignore_label: u8,
) -> Result<Var> {
    let lv = tape.value(logits);
    let (n, c, h, w) = lv.dims4()?;
    let hw = h * w;
    ensure!(
        labels.len() == n * hw,
        shape_err!("{} labels for logits {:?}", labels.len(), lv.shape())
    );
    ensure!(
        weights.len() == c,
        shape_err!("{} class weights for {c} classes", weights.len())
    );
    let probs = crate::nn::activation::softmax_channels(lv)?;
    let mut coeff = vec![T::ZERO; n * hw];
    let mut total_w = T::ZERO;
    let mut loss = T::ZERO;
    for b in 0..n {
        for p in 0..hw {
            let y = labels[b * hw + p];
            if y == ignore_label {
                continue;
            }
            ensure!(
                (y as usize) < c,
                Error::Data(format!("label {y} at pixel {p} of image {b} is not below {c} classes"))
            );
            let y = y as usize;
            let idx = |k: usize| (b * c + k) * hw + p;
            let m = (0..c).map(|k| lv.data()[idx(k)]).fold(lv.data()[idx(0)], T::max);
            let lse = m + (0..c).map(|k| (lv.data()[idx(k)] - m).exp()).sum::<T>().ln();
            let wy = weights[y];
            loss += wy * (lse - lv.data()[idx(y)]);
            total_w += wy;
            coeff[b * hw + p] = wy;
        }
    }
    if total_w > T::ZERO {
        loss /= total_w;
        for v in &mut coeff {
            *v /= total_w;
        }
    }
    let node = CeNode { logits, coeff, probs: probs.into_data(), labels: labels.to_vec() };
    Ok(tape.push(Tensor::scalar(loss), Op::CrossEntropy(node)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_two_class_case() {
        // pixel 0: logits (1, 2), label 0; pixel 1: logits (0.5, −0.5), label 1
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 0.5, 2.0, -0.5]).unwrap());
        let loss = weighted_cross_entropy(&mut t, x, &[0, 1], &[1.0, 1.0], 255).unwrap();
        let l0 = -(1.0f64.exp() / (1.0f64.exp() + 2.0f64.exp())).ln();
        let l1 = -((-0.5f64).exp() / (0.5f64.exp() + (-0.5f64).exp())).ln();
        assert!((t.value(loss).data()[0] - (l0 + l1) / 2.0).abs() < 1e-6);

        // weighted: w = (2, 1)
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 0.5, 2.0, -0.5]).unwrap());
        let loss = weighted_cross_entropy(&mut t, x, &[0, 1], &[2.0, 1.0], 255).unwrap();
        assert!((t.value(loss).data()[0] - (2.0 * l0 + l1) / 3.0).abs() < 1e-6);
    }

    #[test]
    fn unit_weights_reduce_to_plain_cross_entropy() {
        let mut rng = crate::rng_from_seed(4);
        let logits = Tensor::<f64>::uniform(&[2, 3, 2, 2], -2.0, 2.0, &mut rng);
        let labels = [0u8, 1, 2, 1, 2, 2, 0, 1];
        let mut t = Tape::new();
        let x = t.constant(logits.clone());
        let loss = weighted_cross_entropy(&mut t, x, &labels, &[1.0; 3], 255).unwrap();
        let mut want = 0.0;
        for b in 0..2 {
            for p in 0..4 {
                let z: f64 = (0..3).map(|k| logits.data()[(b * 3 + k) * 4 + p].exp()).sum();
                let y = labels[b * 4 + p] as usize;
                want -= (logits.data()[(b * 3 + y) * 4 + p].exp() / z).ln();
            }
        }
        assert!((t.value(loss).data()[0] - want / 8.0).abs() < 1e-12);
    }

    #[test]
    fn all_ignored_gives_zero_loss_and_gradient() {
        let mut t = Tape::<f32>::new();
        let x = t.param(Tensor::ones(&[1, 3, 2, 2]));
        let loss = weighted_cross_entropy(&mut t, x, &[255; 4], &[1.0; 3], 255).unwrap();
        assert_eq!(t.value(loss).data()[0], 0.0);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &Tensor::zeros(&[1, 3, 2, 2]));
    }

    #[test]
    fn out_of_range_label_is_a_data_error() {
        let mut t = Tape::<f32>::new();
        let x = t.param(Tensor::ones(&[1, 3, 1, 2]));
        let err = weighted_cross_entropy(&mut t, x, &[0, 3], &[1.0; 3], 255).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn scaling_all_weights_leaves_gradients_unchanged() {
        let mut rng = crate::rng_from_seed(9);
        let logits = Tensor::<f64>::uniform(&[1, 3, 3, 3], -2.0, 2.0, &mut rng);
        let labels = [0u8, 1, 2, 255, 1, 0, 2, 2, 1];
        let grad = |w: &[f64]| {
            let mut t = Tape::new();
            let x = t.param(logits.clone());
            let l = weighted_cross_entropy(&mut t, x, &labels, w, 255).unwrap();
            t.backward(l).unwrap();
            t.grad(x).unwrap().clone()
        };
        let base = grad(&[0.5, 2.0, 1.5]);
        let scaled = grad(&[0.5 * 7.0, 2.0 * 7.0, 1.5 * 7.0]);
        assert!(base.max_abs_diff(&scaled) < 1e-12);
    }
}
