//! Training: poly learning-rate schedule, Adam, augmentation, class
//! weighting, a synthetic shapes dataset and the epoch loop.

mod adam;
mod augment;
mod synthetic;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use augment::{augment, augment_raw, hflip, resize_bilinear, resize_nearest, AugmentConfig, Normalization};
pub use synthetic::{class_histogram, make_synthetic_dataset, SyntheticSample};

use crate::error::{ensure, Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{canet_forward, Canet};
use crate::nn::norm::DEFAULT_MOMENTUM;
use crate::nn::{weighted_cross_entropy, Mode};
use crate::params::Graph;
use crate::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum ClassWeights {
    /// `1 / ln(1.02 + freq_c)` from training-set label frequencies.
    Auto,
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub max_epoch: usize,
    pub poly_power: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub scale_range: (f64, f64),
    pub flip: bool,
    /// Training crop `(h, w)`.
    pub crop: (usize, usize),
    pub ignore_label: u8,
    pub class_weights: ClassWeights,
    pub bn_momentum: f64,
    /// Seeds shuffling and augmentation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_lr: 1e-4,
            max_epoch: 100,
            poly_power: 0.9,
            batch_size: 4,
            adam: AdamConfig::default(),
            scale_range: (0.5, 2.0),
            flip: true,
            crop: (512, 512),
            ignore_label: 255,
            class_weights: ClassWeights::Auto,
            bn_momentum: DEFAULT_MOMENTUM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.init_lr > 0.0 && self.init_lr.is_finite()) {
            return bad(format!("init_lr must be positive, got {}", self.init_lr));
        }
        if !(self.poly_power > 0.0) {
            return bad(format!("poly_power must be positive, got {}", self.poly_power));
        }
        if self.max_epoch == 0 || self.batch_size == 0 {
            return bad("max_epoch and batch_size must be positive".into());
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("scale_range must satisfy 0 < min ≤ max, got ({lo}, {hi})"));
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return bad("crop extents must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum));
        }
        if let ClassWeights::Explicit(w) = &self.class_weights {
            if w.len() != num_classes {
                return bad(format!("{} class weights given for {num_classes} classes", w.len()));
            }
            if let Some(v) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return bad(format!("class weights must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig { flip: self.flip, scale_range: self.scale_range, crop: self.crop, ignore_label: self.ignore_label }
    }
}

/// `init_lr · (1 − epoch/max_epoch)^power`.
pub fn poly_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    ensure!(
        epoch <= cfg.max_epoch,
        Error::Contract(format!("epoch {epoch} is past max_epoch {}", cfg.max_epoch))
    );
    let m = cfg.max_epoch as f64;
    let rem = m - epoch as f64;
    let frac = rem / m;
    if frac == 0.0 {
        return Ok(0.0);
    }
    // pow amplifies the rounding of the quotient; fold its exact residual
    // back in to first order so every epoch lands within an ulp.
    let resid = libm::fma(-frac, m, rem) / m;
    let p = cfg.poly_power;
    Ok(cfg.init_lr * (libm::pow(frac, p) * (1.0 + p * resid / frac)))
}

/// `w_c = 1 / ln(1.02 + freq_c)` with frequencies over non-ignored pixels.
pub fn auto_class_weights(labels: &[&[u8]], num_classes: usize, ignore_label: u8) -> Vec<f64> {
    let mut counts = alloc::vec![0u64; num_classes];
    for l in labels {
        for &v in l.iter() {
            if v != ignore_label && (v as usize) < num_classes {
                counts[v as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum::<u64>().max(1);
    counts.iter().map(|&c| 1.0 / libm::log(1.02 + c as f64 / total as f64)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss.
    pub loss: f64,
    pub val_miou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub class_weights: Vec<f64>,
    pub normalization: Normalization,
    /// Loss of the very first batch, before any update.
    pub first_batch_loss: f64,
}

impl TrainReport {
    pub fn final_val_miou(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.val_miou)
    }

    /// Moving average of the epoch losses over `window` epochs.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let l: Vec<f64> = self.epochs.iter().map(|e| e.loss).collect();
        if window == 0 || l.len() < window {
            return Vec::new();
        }
        l.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    }
}

/// Stacks normalized 3×H×W images into an N×3×H×W batch.
pub fn stack(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let s = first.shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for i in images {
        ensure!(i.shape() == s.as_slice(), crate::error::shape_err!("batch mixes shapes {:?} and {:?}", s, i.shape()));
        data.extend_from_slice(i.data());
    }
    let mut shape = alloc::vec![images.len()];
    shape.extend_from_slice(&s);
    Tensor::from_vec(&shape, data)
}

/// Eval-mode mean IoU over normalized samples.
pub fn evaluate(model: &Canet<f32>, samples: &[SyntheticSample], norm: &Normalization, ignore_label: u8, batch: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config.num_classes, ignore_label);
    for chunk in samples.chunks(batch.max(1)) {
        let imgs: Vec<_> = chunk.iter().map(|s| norm.apply(&s.image)).collect();
        let pred = model.predict(&stack(&imgs)?)?;
        let gt: Vec<u8> = chunk.iter().flat_map(|s| s.label.iter().copied()).collect();
        cm.accumulate(&pred, &gt)?;
    }
    Ok(cm)
}

/// Runs the full schedule. `on_epoch` sees each record and the model after
/// that epoch; returning an error stops training.
pub fn train_loop(
    model: &mut Canet<f32>,
    train: &[SyntheticSample],
    val: &[SyntheticSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Canet<f32>) -> Result<()>,
) -> Result<TrainReport> {
    let c = model.config.num_classes;
    cfg.validate(c)?;
    ensure!(!train.is_empty(), Error::Data("training set is empty".into()));
    let normalization = Normalization::fit(train.iter().map(|s| &s.image));
    let class_weights = match &cfg.class_weights {
        ClassWeights::Auto => {
            let labels: Vec<&[u8]> = train.iter().map(|s| s.label.as_slice()).collect();
            auto_class_weights(&labels, c, cfg.ignore_label)
        }
        ClassWeights::Uniform => alloc::vec![1.0; c],
        ClassWeights::Explicit(w) => w.clone(),
    };
    let weights_f32: Vec<f32> = class_weights.iter().map(|&w| w as f32).collect();
    let aug = cfg.augment_config();
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport { epochs: Vec::new(), class_weights, normalization, first_batch_loss: f64::NAN };

    for epoch in 0..cfg.max_epoch {
        let lr = poly_lr(epoch, cfg)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut imgs = Vec::with_capacity(idx.len());
            let mut labels = Vec::new();
            for &i in idx {
                let (img, lab) = augment(&train[i].image, &train[i].label, &aug, &normalization, &mut rng)?;
                imgs.push(img);
                labels.extend_from_slice(&lab);
            }
            let batch = stack(&imgs)?;
            let mut tape = Tape::new();
            let x = tape.constant(batch);
            let mut g = Graph::new(&mut tape, &model.params, Mode::Train).trainable(true);
            let logits = canet_forward(&mut g, &model.config, x)?.logits;
            let stats = g.take_stats();
            let bound = g.bound().clone();
            let loss = weighted_cross_entropy(&mut tape, logits, &labels, &weights_f32, cfg.ignore_label)?;
            let lv = tape.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Training(format!("non-finite loss {lv} at epoch {epoch}, step {step}")));
            }
            if epoch == 0 && step == 0 {
                report.first_batch_loss = lv;
            }
            tape.backward(loss)?;
            let mut grads = BTreeMap::new();
            for (name, v) in bound {
                if let Some(gr) = tape.grad(v) {
                    grads.insert(name, gr.clone());
                }
            }
            adam_step(&mut model.params, &grads, &mut adam, lr, &cfg.adam)
                .map_err(|e| match e {
                    Error::Training(m) => Error::Training(format!("{m} (epoch {epoch}, step {step})")),
                    other => other,
                })?;
            model.params.apply_bn_stats(&stats, cfg.bn_momentum)?;
            loss_sum += lv;
            batches += 1;
        }
        let val_miou = if val.is_empty() {
            f64::NAN
        } else {
            evaluate(model, val, &report.normalization, cfg.ignore_label, cfg.batch_size)?.miou()?
        };
        let rec = EpochRecord { epoch, lr, loss: loss_sum / batches as f64, val_miou };
        on_epoch(&rec, model)?;
        report.epochs.push(rec);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        let cfg = TrainConfig { max_epoch: 10, ..TrainConfig::default() };
        assert_eq!(poly_lr(0, &cfg).unwrap(), 1e-4);
        assert_eq!(poly_lr(10, &cfg).unwrap(), 0.0);
        assert!((poly_lr(5, &cfg).unwrap() - 5.3589e-5).abs() < 1e-9);
        assert!(matches!(poly_lr(11, &cfg), Err(Error::Contract(_))));
        let lrs: Vec<f64> = (0..=10).map(|e| poly_lr(e, &cfg).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn auto_weights_favour_rare_classes() {
        let labels: [&[u8]; 2] = [&[0, 0, 0, 1], &[0, 0, 255, 2]];
        let w = auto_class_weights(&labels, 3, 255);
        assert!((w[0] - 1.0 / libm::log(1.02 + 5.0 / 7.0)).abs() < 1e-12);
        assert!(w[1] > w[0] && (w[1] - w[2]).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate(3).is_ok());
        cfg.class_weights = ClassWeights::Explicit(alloc::vec![1.0, 2.0]);
        assert!(cfg.validate(3).is_err());
        cfg.class_weights = ClassWeights::Explicit(alloc::vec![1.0, 0.0, 1.0]);
        assert!(cfg.validate(3).is_err());
        cfg = TrainConfig { scale_range: (2.0, 0.5), ..TrainConfig::default() };
        assert!(cfg.validate(3).is_err());
    }
}
