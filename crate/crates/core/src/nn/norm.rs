use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{ensure, shape_err, Error, Result};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-normalization layer.
///
/// Statistics start absent; evaluating in [`Mode::Eval`] before any have been
/// accumulated or provided is a contract error.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T: Scalar = f32> {
    pub running_mean: Option<Vec<T>>,
    pub running_var: Option<Vec<T>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new() -> Self {
        Self { running_mean: None, running_var: None, momentum: DEFAULT_MOMENTUM, eps: DEFAULT_EPS }
    }

    /// Mean 0 and variance 1 for every channel.
    pub fn identity(channels: usize) -> Self {
        Self {
            running_mean: Some(vec![T::ZERO; channels]),
            running_var: Some(vec![T::ONE; channels]),
            ..Self::new()
        }
    }

    /// Folds batch statistics in with `r ← (1 − m)·r + m·batch`.
    ///
    /// `var` is the unbiased batch variance. Absent statistics start from the
    /// identity before the first fold.
    pub fn update(&mut self, mean: &[T], var: &[T]) {
        let m = T::from_f64(self.momentum);
        let keep = T::ONE - m;
        let rm = self.running_mean.get_or_insert_with(|| vec![T::ZERO; mean.len()]);
        for (r, &b) in rm.iter_mut().zip(mean) {
            *r = keep * *r + m * b;
        }
        let rv = self.running_var.get_or_insert_with(|| vec![T::ONE; var.len()]);
        for (r, &b) in rv.iter_mut().zip(var) {
            *r = (keep * *r + m * b).max(T::ZERO);
        }
    }
}

impl<T: Scalar> Default for BatchNormState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-channel statistics of one train-mode batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T: Scalar> {
    pub mean: Vec<T>,
    /// Unbiased (n − 1) variance; equals the biased one when `n = 1`.
    pub var: Vec<T>,
}

pub(crate) struct BnNode<T: Scalar> {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    mean: Vec<T>,
    invstd: Vec<T>,
    train: bool,
}

impl<T: Scalar> BnNode<T> {
    pub(crate) fn backward(
        &self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        g: &Tensor<T>,
        need: &dyn Fn(Var) -> bool,
        out: &mut Vec<(Var, Tensor<T>)>,
    ) -> Result<()> {
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let count = T::from_usize(n * hw);
        let mut dgamma = vec![T::ZERO; c];
        let mut dbeta = vec![T::ZERO; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for p in base..base + hw {
                    let xhat = (x.data()[p] - self.mean[ch]) * self.invstd[ch];
                    dbeta[ch] += g.data()[p];
                    dgamma[ch] += g.data()[p] * xhat;
                }
            }
        }
        if need(self.x) {
            let mut dx = Tensor::zeros(x.shape());
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let scale = gamma.data()[ch] * self.invstd[ch];
                    for p in base..base + hw {
                        dx.data_mut()[p] = if self.train {
                            let xhat = (x.data()[p] - self.mean[ch]) * self.invstd[ch];
                            scale * (g.data()[p] - (dbeta[ch] + xhat * dgamma[ch]) / count)
                        } else {
                            scale * g.data()[p]
                        };
                    }
                }
            }
            out.push((self.x, dx));
        }
        if need(self.gamma) {
            out.push((self.gamma, Tensor::from_vec(&[c], dgamma)?));
        }
        if need(self.beta) {
            out.push((self.beta, Tensor::from_vec(&[c], dbeta)?));
        }
        Ok(())
    }
}

impl<T: Scalar> Tape<T> {
    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let (_, c, _, _) = self.value(x).dims4()?;
        ensure!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            shape_err!(
                "batch norm over {c} channels got gamma {:?} and beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )
        );
        Ok(c)
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: Vec<T>, invstd: Vec<T>, train: bool) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = Tensor::zeros(xv.shape());
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let (s, m, sh) = (gv[ch] * invstd[ch], mean[ch], bv[ch]);
                for p in base..base + hw {
                    y.data_mut()[p] = (xv.data()[p] - m) * s + sh;
                }
            }
        }
        let node = BnNode { x, gamma, beta, mean, invstd, train };
        Ok(self.push(y, Op::BatchNorm(node)))
    }

    /// Normalizes each channel by its statistics over (N, H, W), then scales
    /// by `gamma` and shifts by `beta`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let c = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x);
        let (n, _, h, w) = xv.dims4()?;
        let hw = h * w;
        let count = n * hw;
        let mut mean = vec![T::ZERO; c];
        let mut var = vec![T::ZERO; c];
        // statistics accumulate in f64 so a constant channel has exactly zero variance
        for ch in 0..c {
            let mut s = 0.0f64;
            for b in 0..n {
                s += xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|v| v.to_f64()).sum::<f64>();
            }
            let m = s / count as f64;
            let mut ss = 0.0f64;
            for b in 0..n {
                for &v in &xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    let d = v.to_f64() - m;
                    ss += d * d;
                }
            }
            mean[ch] = T::from_f64(m);
            var[ch] = T::from_f64(ss / count as f64);
        }
        let eps_t = T::from_f64(eps);
        let invstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
        let unbiased = if count > 1 {
            let f = T::from_usize(count) / T::from_usize(count - 1);
            var.iter().map(|&v| v * f).collect()
        } else {
            var
        };
        let y = self.bn_apply(x, gamma, beta, mean.clone(), invstd, true)?;
        Ok((y, BatchStats { mean, var: unbiased }))
    }

    /// Per-channel affine map with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        let c = self.check_bn(x, gamma, beta)?;
        ensure!(
            mean.len() == c && var.len() == c,
            shape_err!("running statistics have {}/{} channels, input has {c}", mean.len(), var.len())
        );
        let eps_t = T::from_f64(eps);
        let invstd = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean.to_vec(), invstd, false)
    }
}

/// Batch normalization with running-statistics bookkeeping.
///
/// Train mode normalizes by batch statistics and folds them into `state`;
/// eval mode uses `state`'s running statistics and fails if there are none.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Var> {
    match mode {
        Mode::Train => {
            let (y, stats) = tape.batch_norm_train(x, gamma, beta, state.eps)?;
            state.update(&stats.mean, &stats.var);
            Ok(y)
        }
        Mode::Eval => {
            let (Some(mean), Some(var)) = (&state.running_mean, &state.running_var) else {
                return Err(Error::Contract(format!(
                    "batch norm evaluated before running statistics were accumulated"
                )));
            };
            tape.batch_norm_eval(x, gamma, beta, mean, var, state.eps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_moments(t: &Tensor<f32>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4().unwrap();
        let hw = h * w;
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| t.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|&v| v as f64))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = crate::rng_from_seed(1);
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::uniform(&[3, 4, 5, 5], -2.0, 5.0, &mut rng));
        let g = t.constant(Tensor::ones(&[4]));
        let b = t.constant(Tensor::zeros(&[4]));
        let mut state = BatchNormState::new();
        let y = batch_norm(&mut t, x, g, b, &mut state, Mode::Train).unwrap();
        for ch in 0..4 {
            let (m, v) = channel_moments(t.value(y), ch);
            assert!(m.abs() < 1e-4 && (v - 1.0).abs() < 1e-4, "channel {ch}: mean {m} var {v}");
        }
        assert!(state.running_var.unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full(&[2, 1, 3, 3], 4.2));
        let g = t.constant(Tensor::ones(&[1]));
        let b = t.constant(Tensor::full(&[1], 0.3));
        let mut state = BatchNormState::new();
        let y = batch_norm(&mut t, x, g, b, &mut state, Mode::Train).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn eval_without_statistics_is_a_contract_error() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::ones(&[1, 2, 2, 2]));
        let g = t.constant(Tensor::ones(&[2]));
        let b = t.constant(Tensor::zeros(&[2]));
        let mut state = BatchNormState::new();
        assert!(matches!(batch_norm(&mut t, x, g, b, &mut state, Mode::Eval), Err(Error::Contract(_))));
        let mut provided = BatchNormState::identity(2);
        assert!(batch_norm(&mut t, x, g, b, &mut provided, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_mode_is_a_per_channel_affine_map() {
        let mut rng = crate::rng_from_seed(2);
        let state = BatchNormState {
            running_mean: Some(vec![0.5f32, -1.0, 2.0]),
            running_var: Some(vec![0.25, 4.0, 1.5]),
            ..BatchNormState::new()
        };
        let xa = Tensor::<f32>::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let xb = Tensor::<f32>::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let gamma = Tensor::<f32>::uniform(&[3], 0.5, 1.5, &mut rng);
        let beta = Tensor::<f32>::uniform(&[3], -0.5, 0.5, &mut rng);
        let run = |x: &Tensor<f32>| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let y = batch_norm(&mut t, xv, g, b, &mut state.clone(), Mode::Eval).unwrap();
            t.value(y).clone()
        };
        // f(a) + f(b) − f(0) = f(a + b) for an affine f
        let sum_in = Tensor::from_vec(
            xa.shape(),
            xa.data().iter().zip(xb.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let (fa, fb, f0, fab) = (run(&xa), run(&xb), run(&Tensor::zeros(xa.shape())), run(&sum_in));
        for i in 0..fa.numel() {
            let lhs = fa.data()[i] + fb.data()[i] - f0.data()[i];
            assert!((lhs - fab.data()[i]).abs() < 1e-5);
        }
        // no batch coupling: a single image evaluates the same alone
        let single = Tensor::from_vec(&[1, 3, 4, 4], xa.data()[..48].to_vec()).unwrap();
        assert_eq!(run(&single).data(), &fa.data()[..48]);
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut s = BatchNormState::<f64>::new();
        s.update(&[1.0], &[3.0]);
        assert_eq!(s.running_mean.as_deref(), Some(&[0.1][..]));
        assert!((s.running_var.as_ref().unwrap()[0] - 1.2).abs() < 1e-15);
    }
}
