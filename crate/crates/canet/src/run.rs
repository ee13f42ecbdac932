//! train-synth, infer and eval as library calls.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use canet_core::metrics::ConfusionMatrix;
use canet_core::model::Canet;
use canet_core::train::{make_synthetic_dataset, stack, train_loop, EpochRecord, Normalization, SyntheticSample, TrainReport};
use canet_core::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, FormatError, Result};
use crate::formats;

pub struct SynthRun {
    /// The effective configuration, normalization included.
    pub config: RunConfig,
    pub report: TrainReport,
    pub model: Canet<f32>,
    pub val: Vec<SyntheticSample>,
}

/// Builds the synthetic dataset and trains on it.
///
/// `on_epoch` runs after each epoch; its error aborts the run.
pub fn train_synth(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochRecord, &Canet<f32>) -> Result<()>) -> Result<SynthRun> {
    cfg.validate()?;
    let mcfg = cfg.canet_config()?;
    let tcfg = cfg.train_config()?;
    let d = &cfg.data;
    let mut data = make_synthetic_dataset(mcfg.num_classes, d.train_samples + d.val_samples, mcfg.input_size, d.seed)?;
    let val = data.split_off(d.train_samples);
    let mut model = Canet::new(mcfg, d.model_seed)?;
    let mut failure = None;
    let result = train_loop(&mut model, &data, &val, &tcfg, &mut |rec, m| {
        on_epoch(rec, m).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            canet_core::Error::Training(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let report = result?;
    let mut config = cfg.clone();
    config.set_normalization(&report.normalization);
    Ok(SynthRun { config, report, model, val })
}

pub fn report_text(report: &TrainReport) -> String {
    let mut s = String::new();
    for e in &report.epochs {
        writeln!(s, "epoch={} lr={} loss={} val_miou={}", e.epoch, e.lr, e.loss, e.val_miou).unwrap();
    }
    s
}

pub fn summary_text(report: &TrainReport) -> String {
    let smoothed = report.smoothed_loss(5);
    let weights: Vec<String> = report.class_weights.iter().map(|w| w.to_string()).collect();
    let mut s = String::new();
    writeln!(s, "epochs={}", report.epochs.len()).unwrap();
    writeln!(s, "first_batch_loss={}", report.first_batch_loss).unwrap();
    writeln!(s, "final_loss={}", report.epochs.last().map_or(f64::NAN, |e| e.loss)).unwrap();
    writeln!(s, "final_val_miou={}", report.final_val_miou()).unwrap();
    writeln!(s, "smoothed_loss_decreasing={}", smoothed.windows(2).all(|w| w[1] < w[0])).unwrap();
    writeln!(s, "class_weights={}", weights.join(",")).unwrap();
    s
}

/// Reads `key=value` from a summary or report line set.
pub fn summary_value(text: &str, key: &str) -> Option<String> {
    text.lines().rev().find_map(|l| l.strip_prefix(key)?.strip_prefix('=').map(str::to_string))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:03}.canw"))
}

/// Writes report, summary, weights, config and the validation set.
pub fn write_run(out: &Path, run: &SynthRun) -> Result<()> {
    let (images, labels) = (out.join("val").join("images"), out.join("val").join("labels"));
    mkdir(&images)?;
    mkdir(&labels)?;
    formats::write(&out.join("report.txt"), report_text(&run.report).as_bytes())?;
    formats::write(&out.join("summary.txt"), summary_text(&run.report).as_bytes())?;
    formats::write(&out.join("weights.canw"), &formats::encode_canw(&run.model.params))?;
    formats::write(&out.join("config.toml"), run.config.to_toml().as_bytes())?;
    let (h, w) = run.model.config.input_size;
    for (i, s) in run.val.iter().enumerate() {
        formats::write(&images.join(format!("{i:04}.ctnsr")), &formats::encode_ctnsr(&s.image))?;
        formats::write(&labels.join(format!("{i:04}.pgm")), &formats::encode_pgm(h, w, &s.label))?;
    }
    Ok(())
}

/// A trained model and its normalization from `config.toml` + weights.
pub fn load_model(config: &Path, weights: &Path) -> Result<(Canet<f32>, Normalization)> {
    let cfg = RunConfig::load(config)?;
    let mcfg = cfg.canet_config()?;
    let norm = cfg
        .normalization()
        .ok_or_else(|| Error::Config(format!("{}: no [normalization] section", config.display())))?;
    let params = formats::read_with(weights, |b| formats::load_weights(&mcfg, b))?;
    if !params.has_running_stats() {
        return Err(Error::format(weights, FormatError("batch-norm running statistics are missing".into())));
    }
    Ok((Canet { config: mcfg, params }, norm))
}

/// Eval-mode logits `1×C×H×W` and argmax labels of one raw image.
pub fn infer_image(model: &Canet<f32>, norm: &Normalization, image: &Tensor<f32>) -> Result<(Tensor<f32>, Vec<u8>)> {
    let logits = model.logits(&stack(&[norm.apply(image)])?)?;
    let labels = logits.argmax_channels()?;
    Ok((logits, labels))
}

/// Sorted files of one extension in a directory.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Confusion matrix of same-named PGM label maps in two directories.
///
/// Without `classes`, the class count is one past the largest label seen.
pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path, classes: Option<usize>, ignore: u8) -> Result<ConfusionMatrix> {
    let gts = list_files(gt_dir, "pgm")?;
    if gts.is_empty() {
        return Err(Error::Config(format!("{}: no .pgm label maps", gt_dir.display())));
    }
    let mut pairs = Vec::with_capacity(gts.len());
    for g in &gts {
        let p = pred_dir.join(g.file_name().unwrap());
        let (gh, gw, gl) = formats::read_with(g, formats::decode_pgm)?;
        let (ph, pw, pl) = formats::read_with(&p, formats::decode_pgm)?;
        if (gh, gw) != (ph, pw) {
            let msg = format!("prediction is {pw}x{ph}, ground truth {}: {gw}x{gh}", g.display());
            return Err(Error::format(&p, FormatError(msg)));
        }
        pairs.push((p, pl, gl));
    }
    let c = classes.unwrap_or_else(|| {
        let top = pairs.iter().flat_map(|(_, p, g)| p.iter().chain(g)).filter(|&&v| v != ignore).max().copied();
        (top.map_or(0, |v| v as usize) + 1).max(2)
    });
    let mut cm = ConfusionMatrix::new(c, ignore);
    for (p, pl, gl) in &pairs {
        cm.accumulate(pl, gl).map_err(|e| Error::format(p, FormatError(e.to_string())))?;
    }
    Ok(cm)
}

pub fn metrics_table(cm: &ConfusionMatrix) -> Result<String> {
    let mut s = String::new();
    for (k, iou) in cm.iou()?.iter().enumerate() {
        match iou {
            Some(v) => writeln!(s, "class {k} iou {v:.6}").unwrap(),
            None => writeln!(s, "class {k} iou absent").unwrap(),
        }
    }
    writeln!(s, "pixels {}", cm.total()).unwrap();
    writeln!(s, "accuracy {}", cm.global_accuracy()?).unwrap();
    writeln!(s, "miou {}", cm.miou()?).unwrap();
    Ok(s)
}
