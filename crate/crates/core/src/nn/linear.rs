use alloc::vec;

use crate::error::{ensure, shape_err, Result};
use crate::kernels;
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Affine map `x·W + b` of an N×C input with `W: C×C'`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        ensure!(
            xs.len() == 2 && ws.len() == 2 && xs[1] == ws[0],
            shape_err!("fully connected: input {xs:?} does not fit weights {ws:?}")
        );
        let (n, cin, cout) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            ensure!(
                self.shape(b) == [cout],
                shape_err!("fully connected bias {:?}, expected [{cout}]", self.shape(b))
            );
        }
        let mut y = vec![T::ZERO; n * cout];
        if let Some(b) = b {
            for row in y.chunks_mut(cout) {
                row.copy_from_slice(self.value(b).data());
            }
        }
        kernels::gemm_nn(n, cout, cin, self.value(x).data(), self.value(w).data(), &mut y);
        let value = Tensor::from_vec(&[n, cout], y)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut rng = crate::rng_from_seed(1);
        let x = Tensor::<f32>::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 5] = 1.0;
        }
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x.clone()), t.constant(eye));
        let b = t.constant(Tensor::zeros(&[4]));
        let y = t.fully_connected(xv, wv, Some(b)).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full(&[2, 3], 7.0));
        let w = t.constant(Tensor::zeros(&[3, 2]));
        let b = t.constant(Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap());
        let y = t.fully_connected(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn equals_matmul_plus_bias() {
        let mut rng = crate::rng_from_seed(2);
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng));
        let w = t.constant(Tensor::uniform(&[5, 2], -1.0, 1.0, &mut rng));
        let b = t.constant(Tensor::uniform(&[1, 2], -1.0, 1.0, &mut rng));
        let b1 = t.reshape(b, &[2]).unwrap();
        let y = t.fully_connected(x, w, Some(b1)).unwrap();
        let m = t.matmul(x, w).unwrap();
        let want = t.add(m, b).unwrap();
        assert!(t.value(y).max_abs_diff(t.value(want)) < 1e-6);
        let bad = t.constant(Tensor::zeros(&[4, 2]));
        assert!(t.fully_connected(x, bad, None).is_err());
    }
}
