use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Error, Result};
use crate::{ParamStore, Scalar, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `p ← p − lr·wd·p` before the moment update, instead of adding
    /// `wd·p` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, decoupled: true }
    }
}

/// First/second moment buffers keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self { step: 0, moments: BTreeMap::new() }
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One Adam update with bias correction over every named gradient.
///
/// All gradients are checked before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let Some(p) = params.get(name) else {
            return Err(Error::Contract(format!("gradient for unknown parameter `{name}`")));
        };
        ensure!(
            p.shape() == g.shape(),
            shape_err!("gradient of `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape())
        );
        if let Some((i, v)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient {} in `{name}` at element {i}", v.to_f64())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step_size = T::from_f64(lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / libm::sqrt(bc2));
    let eps = T::from_f64(cfg.eps);
    let decay = T::from_f64(lr * cfg.weight_decay);
    let wd = T::from_f64(cfg.weight_decay);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let n = p.numel();
        let (m, v) = state.moments.entry(name.to_string()).or_insert_with(|| (vec![T::ZERO; n], vec![T::ZERO; n]));
        for i in 0..n {
            let mut gi = g.data()[i];
            let pi = &mut p.data_mut()[i];
            if cfg.decoupled {
                *pi -= decay * *pi;
            } else {
                gi += wd * *pi;
            }
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            *pi -= step_size * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    fn store(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", ParamKind::Learnable, Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(0.5);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0));
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut p, &grads, &mut AdamState::new(), 1e-4, &cfg).unwrap();
        let moved = p.get("w").unwrap().data()[0] - 0.5;
        assert!((moved + 1e-4 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = store(0.25);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut st = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut p, &grads, &mut st, 1e-2, &cfg).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data()[0], 0.25);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = store(1.0);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(f64::NAN));
        let err = adam_step(&mut p, &grads, &mut AdamState::new(), 1e-3, &AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains("`w`")));
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn decoupled_and_coupled_decay_differ() {
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        let mut a = store(2.0);
        adam_step(&mut a, &grads, &mut AdamState::new(), 0.1, &AdamConfig { weight_decay: 0.5, ..AdamConfig::default() }).unwrap();
        // decay only: 2 − 0.1·0.5·2
        assert!((a.get("w").unwrap().data()[0] - 1.9).abs() < 1e-12);
        let mut b = store(2.0);
        let coupled = AdamConfig { weight_decay: 0.5, decoupled: false, ..AdamConfig::default() };
        adam_step(&mut b, &grads, &mut AdamState::new(), 0.1, &coupled).unwrap();
        // coupled: the decay term becomes a unit Adam step
        assert!((b.get("w").unwrap().data()[0] - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-9);
    }
}
