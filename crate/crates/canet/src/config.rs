//! TOML run configuration.
//!
//! ```toml
//! [model]
//! backbone = "mobilenet_v2"      # tiny | mobilenet_v2 | resnet18
//! num_classes = 19
//! input_size = "1024x512"        # width x height
//! fusion_channels = 256
//! deconv_channels = 256
//! variant = "spatial_then_channel"
//!
//! [train]
//! init_lr = 1e-4
//! max_epoch = 100
//! poly_power = 0.9
//! batch_size = 4
//! weight_decay = 1e-4
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! adam_eps = 1e-8
//! decoupled_weight_decay = true
//! scale_range = [0.5, 2.0]
//! flip = true
//! crop = "512x512"
//! ignore_label = 255
//! class_weights = "auto"         # auto | uniform | [w0, w1, ...]
//! bn_momentum = 0.1
//! seed = 0
//! checkpoint_every = 0           # 0 writes only the final weights
//!
//! [data]                         # synthetic task
//! train_samples = 512
//! val_samples = 32
//! seed = 5
//! model_seed = 1
//!
//! [normalization]                # written by train-synth
//! mean = [0.5, 0.5, 0.5]
//! std = [0.2, 0.2, 0.2]
//! ```
//!
//! Every key is optional. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use canet_core::fca::FcaVariant;
use canet_core::model::CanetConfig;
use canet_core::train::{AdamConfig, ClassWeights, Normalization, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `WxH` extent; stored as `(h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Size {
    pub h: usize,
    pub w: usize,
}

impl Size {
    pub fn hw(self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&v| v > 0);
        match s.split_once(['x', 'X']) {
            Some((w, h)) => match (parse(w), parse(h)) {
                (Some(w), Some(h)) => Ok(Size { h, w }),
                _ => Err(format!("bad size `{s}`, expected WIDTHxHEIGHT")),
            },
            None => Err(format!("bad size `{s}`, expected WIDTHxHEIGHT")),
        }
    }
}

impl TryFrom<String> for Size {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Size> for String {
    fn from(s: Size) -> String {
        s.to_string()
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.w, self.h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: String,
    pub num_classes: usize,
    pub input_size: Size,
    pub fusion_channels: usize,
    pub deconv_channels: usize,
    pub variant: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone: "mobilenet_v2".into(),
            num_classes: 19,
            input_size: Size { h: 512, w: 1024 },
            fusion_channels: 256,
            deconv_channels: 256,
            variant: FcaVariant::SpatialThenChannel.name().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub init_lr: f64,
    pub max_epoch: usize,
    pub poly_power: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub decoupled_weight_decay: bool,
    pub scale_range: [f64; 2],
    pub flip: bool,
    pub crop: Size,
    pub ignore_label: u8,
    pub class_weights: WeightsSpec,
    pub bn_momentum: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            init_lr: t.init_lr,
            max_epoch: t.max_epoch,
            poly_power: t.poly_power,
            batch_size: t.batch_size,
            weight_decay: t.adam.weight_decay,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            decoupled_weight_decay: t.adam.decoupled,
            scale_range: [t.scale_range.0, t.scale_range.1],
            flip: t.flip,
            crop: Size { h: t.crop.0, w: t.crop.1 },
            ignore_label: t.ignore_label,
            class_weights: WeightsSpec::Named("auto".into()),
            bn_momentum: t.bn_momentum,
            seed: t.seed,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_samples: usize,
    pub val_samples: usize,
    pub seed: u64,
    pub model_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { train_samples: 512, val_samples: 32, seed: 5, model_seed: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSection {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormSection>,
}

impl RunConfig {
    /// Desk-scale synthetic task: tiny backbone, 3 classes, 32×32, 30 epochs.
    pub fn synthetic() -> Self {
        Self {
            model: ModelSection {
                backbone: "tiny".into(),
                num_classes: 3,
                input_size: Size { h: 32, w: 32 },
                fusion_channels: 64,
                deconv_channels: 64,
                ..ModelSection::default()
            },
            train: TrainSection {
                init_lr: 2e-3,
                max_epoch: 30,
                scale_range: [0.75, 4.0 / 3.0],
                crop: Size { h: 32, w: 32 },
                class_weights: WeightsSpec::Named("uniform".into()),
                seed: 3,
                ..TrainSection::default()
            },
            data: DataSection::default(),
            normalization: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn canet_config(&self) -> Result<CanetConfig> {
        let m = &self.model;
        let mut cfg = CanetConfig::new(&m.backbone, m.num_classes, m.input_size.hw())?;
        cfg.fca.fusion_channels = m.fusion_channels;
        cfg.fca.variant = FcaVariant::parse(&m.variant)?;
        cfg.deconv_channels = m.deconv_channels;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let class_weights = match &t.class_weights {
            WeightsSpec::Named(s) if s == "auto" => ClassWeights::Auto,
            WeightsSpec::Named(s) if s == "uniform" => ClassWeights::Uniform,
            WeightsSpec::Named(s) => return Err(Error::Config(format!("class_weights must be auto, uniform or a list, got `{s}`"))),
            WeightsSpec::Explicit(w) => ClassWeights::Explicit(w.clone()),
        };
        let cfg = TrainConfig {
            init_lr: t.init_lr,
            max_epoch: t.max_epoch,
            poly_power: t.poly_power,
            batch_size: t.batch_size,
            adam: AdamConfig {
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                eps: t.adam_eps,
                weight_decay: t.weight_decay,
                decoupled: t.decoupled_weight_decay,
            },
            scale_range: (t.scale_range[0], t.scale_range[1]),
            flip: t.flip,
            crop: t.crop.hw(),
            ignore_label: t.ignore_label,
            class_weights,
            bn_momentum: t.bn_momentum,
            seed: t.seed,
        };
        cfg.validate(self.model.num_classes)?;
        Ok(cfg)
    }

    /// Both model and training sections, checked before any heavy work.
    pub fn validate(&self) -> Result<()> {
        self.canet_config()?;
        self.train_config()?;
        if self.data.train_samples == 0 {
            return Err(Error::Config("data.train_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization.map(|n| Normalization { mean: n.mean, std: n.std })
    }

    pub fn set_normalization(&mut self, n: &Normalization) {
        self.normalization = Some(NormSection { mean: n.mean, std: n.std });
    }
}
