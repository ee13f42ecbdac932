//! Confusion-matrix segmentation metrics: per-class IoU, mean IoU and
//! global pixel accuracy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Error, Result};

/// How classes that never occur (zero IoU denominator) enter the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AbsentClass {
    #[default]
    Exclude,
    CountAsZero,
}

/// `counts[g][p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_label: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, ignore_label: u8) -> Self {
        assert!(num_classes >= 1, "a confusion matrix needs at least one class");
        Self { num_classes, ignore_label, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_label(&self) -> u8 {
        self.ignore_label
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    /// Row-major `C×C` counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one label map pair. Nothing is counted if any value is invalid.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        ensure!(
            pred.len() == gt.len(),
            shape_err!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())
        );
        let c = self.num_classes;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == self.ignore_label {
                continue;
            }
            ensure!((p as usize) < c, Error::Data(format!("prediction {p} at pixel {i} is not below {c} classes")));
            ensure!((g as usize) < c, Error::Data(format!("ground truth {g} at pixel {i} is not below {c} classes")));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g != self.ignore_label {
                self.counts[g as usize * c + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum; both matrices must share class count and ignore label.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        ensure!(
            self.num_classes == other.num_classes && self.ignore_label == other.ignore_label,
            Error::Contract(format!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.num_classes, self.num_classes
            ))
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, c)).sum::<u64>() - self.get(c, c)
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(c, p)).sum::<u64>() - self.get(c, c)
    }

    fn ensure_nonempty(&self) -> Result<()> {
        ensure!(self.total() > 0, Error::Contract("metrics requested from an empty confusion matrix".into()));
        Ok(())
    }

    /// `TP/(TP+FP+FN)` per class; `None` where the denominator is zero.
    pub fn iou(&self) -> Result<Vec<Option<f64>>> {
        self.ensure_nonempty()?;
        Ok((0..self.num_classes)
            .map(|c| {
                let tp = self.true_positives(c);
                let den = tp + self.false_positives(c) + self.false_negatives(c);
                (den > 0).then(|| tp as f64 / den as f64)
            })
            .collect())
    }

    pub fn miou(&self) -> Result<f64> {
        self.miou_with(AbsentClass::Exclude)
    }

    pub fn miou_with(&self, absent: AbsentClass) -> Result<f64> {
        let ious = self.iou()?;
        let vals: Vec<f64> = match absent {
            AbsentClass::Exclude => ious.iter().flatten().copied().collect(),
            AbsentClass::CountAsZero => ious.iter().map(|v| v.unwrap_or(0.0)).collect(),
        };
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Correct pixels over counted pixels.
    pub fn global_accuracy(&self) -> Result<f64> {
        self.ensure_nonempty()?;
        let trace: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / self.total() as f64)
    }
}
