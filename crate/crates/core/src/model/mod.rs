//! Network assembly: the shallow spatial branch, the backbone-driven
//! context branch with its two deconvolutions, the fusion module and the
//! pixel classifier.

mod backbone;

use alloc::format;
use alloc::vec::Vec;

pub use backbone::{build_backbone, BackboneSpec, LayerSpec, StageSpec, BACKBONES};

use crate::error::{ensure, shape_err, Error, Result};
use crate::fca::{self, FcaConfig, FcaTrace};
use crate::nn::{Activation, Conv2dSpec, Mode};
use crate::params::{Graph, ParamStore};
use crate::{Scalar, Tape, Tensor, Var};

/// Width of each spatial-branch layer.
pub const SPATIAL_WIDTHS: [usize; 3] = [64, 128, 256];
/// Channels leaving the spatial branch.
pub const SPATIAL_CHANNELS: usize = 256;
/// Resolution ratio between logits before upsampling and the input.
pub const OUTPUT_STRIDE: usize = 8;

/// The three stride-2 spatial-branch layers, named `spatial.layer{1,2,3}`.
pub fn spatial_layers() -> [LayerSpec; 3] {
    [
        LayerSpec::conv_bn(3, 64, 3, 2, Activation::Relu),
        LayerSpec::DepthwiseSeparable { cin: 64, cout: 128, kernel: 3, stride: 2, act: Activation::Relu },
        LayerSpec::DepthwiseSeparable { cin: 128, cout: 256, kernel: 3, stride: 2, act: Activation::Relu },
    ]
}

pub fn spatial_prefix(i: usize) -> alloc::string::String {
    format!("spatial.layer{}", i + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanetConfig {
    pub backbone: BackboneSpec,
    pub fca: FcaConfig,
    pub num_classes: usize,
    pub deconv_channels: usize,
    pub input_size: (usize, usize),
}

impl CanetConfig {
    /// Defaults: full fusion module, 256-wide fusion and deconvolutions.
    pub fn new(backbone: &str, num_classes: usize, input_size: (usize, usize)) -> Result<Self> {
        let cfg = Self {
            backbone: build_backbone(backbone)?,
            fca: FcaConfig::default(),
            num_classes,
            deconv_channels: 256,
            input_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        ensure!(self.num_classes >= 2, Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        ensure!(self.num_classes <= 255, Error::Config(format!("num_classes must fit 8-bit labels below 255, got {}", self.num_classes)));
        ensure!(self.deconv_channels > 0, Error::Config("deconv_channels must be positive".into()));
        ensure!(self.fca.fusion_channels > 0, Error::Config("fusion_channels must be positive".into()));
        self.backbone.stage_at(16)?;
        self.backbone.stage_at(32)?;
        let (h, w) = self.input_size;
        ensure!(
            h > 0 && w > 0 && h % 32 == 0 && w % 32 == 0,
            Error::Config(format!("input size {h}x{w}: both extents must be divisible by 32"))
        );
        Ok(())
    }

    /// `(stride-16 channels, stride-32 channels)` of the backbone.
    pub fn context_taps(&self) -> Result<(usize, usize)> {
        let b = &self.backbone;
        Ok((b.stages[b.stage_at(16)?].out_channels, b.stages[b.stage_at(32)?].out_channels))
    }

    /// First deconvolution: stride-32 features to stride 16.
    pub fn deconv1_spec(&self) -> Result<Conv2dSpec> {
        let (_, c32) = self.context_taps()?;
        Ok(Conv2dSpec::new(c32, self.deconv_channels, 2).stride(2).padding(0))
    }

    /// Second deconvolution: concatenated stride-16 features to stride 8.
    pub fn deconv2_spec(&self) -> Result<Conv2dSpec> {
        let (c16, _) = self.context_taps()?;
        Ok(Conv2dSpec::new(self.deconv_channels + c16, self.deconv_channels, 2).stride(2).padding(0))
    }

    pub fn classifier_spec(&self) -> Conv2dSpec {
        let cin = self.fca.out_channels(SPATIAL_CHANNELS, self.deconv_channels);
        Conv2dSpec::new(cin, self.num_classes, 1).bias(true)
    }

    /// Freshly initialized parameters (no running statistics).
    pub fn init_params<T: Scalar>(&self, rng: &mut crate::Rng) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut p = ParamStore::new();
        for (i, l) in spatial_layers().iter().enumerate() {
            l.register(&mut p, &spatial_prefix(i), rng)?;
        }
        self.backbone.register(&mut p, rng)?;
        p.insert_conv("context.deconv1", &self.deconv1_spec()?, true, rng)?;
        p.insert_bn("context.deconv1_bn", self.deconv_channels)?;
        p.insert_conv("context.deconv2", &self.deconv2_spec()?, true, rng)?;
        p.insert_bn("context.deconv2_bn", self.deconv_channels)?;
        fca::register(&mut p, "fca", &self.fca, SPATIAL_CHANNELS, self.deconv_channels, rng)?;
        p.insert_conv("classifier", &self.classifier_spec(), false, rng)?;
        Ok(p)
    }
}

fn check_image<T: Scalar>(g: &Graph<T>, image: Var, by: usize) -> Result<(usize, usize)> {
    let s = g.tape.shape(image);
    ensure!(
        s.len() == 4 && s[1] == 3,
        shape_err!("expected an N×3×H×W image batch, got {s:?}")
    );
    backbone::check_divisible(s[2], s[3], by)?;
    Ok((s[2], s[3]))
}

/// N×3×H×W → N×256×H/8×W/8.
pub fn spatial_branch_forward<T: Scalar>(g: &mut Graph<T>, image: Var) -> Result<Var> {
    check_image(g, image, 8)?;
    let mut x = image;
    for (i, l) in spatial_layers().iter().enumerate() {
        x = l.forward(g, &spatial_prefix(i), x)?;
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct ContextTrace {
    pub stages: Vec<Var>,
    /// Stride-16 after the first deconvolution.
    pub up16: Var,
    /// Stride-8 output.
    pub out: Var,
}

/// Backbone, then `deconv1(s32) ‖ s16 → deconv2`, each deconv with BN and ReLU.
pub fn context_branch_forward<T: Scalar>(g: &mut Graph<T>, cfg: &CanetConfig, image: Var) -> Result<ContextTrace> {
    check_image(g, image, 32)?;
    let stages = cfg.backbone.forward(g, image)?;
    let s16 = stages[cfg.backbone.stage_at(16)?];
    let s32 = stages[cfg.backbone.stage_at(32)?];
    let u = g.conv_transpose("context.deconv1", s32, &cfg.deconv1_spec()?)?;
    let u = g.bn("context.deconv1_bn", u)?;
    let up16 = g.tape.relu(u);
    let cat = g.tape.concat_channels(&[up16, s16])?;
    let u = g.conv_transpose("context.deconv2", cat, &cfg.deconv2_spec()?)?;
    let u = g.bn("context.deconv2_bn", u)?;
    let out = g.tape.relu(u);
    Ok(ContextTrace { stages, up16, out })
}

#[derive(Clone, Debug)]
pub struct CanetTrace {
    pub spatial: Var,
    pub context: ContextTrace,
    pub fca: FcaTrace,
    /// Classifier output at stride 8.
    pub coarse: Var,
    /// N×classes×H×W raw logits.
    pub logits: Var,
}

pub fn canet_forward<T: Scalar>(g: &mut Graph<T>, cfg: &CanetConfig, image: Var) -> Result<CanetTrace> {
    let spatial = spatial_branch_forward(g, image)?;
    let context = context_branch_forward(g, cfg, image)?;
    let fca = fca::fca_forward(g, "fca", &cfg.fca, spatial, context.out)?;
    let coarse = g.conv("classifier", fca.out, &cfg.classifier_spec())?;
    let logits = g.tape.bilinear_upsample(coarse, OUTPUT_STRIDE)?;
    Ok(CanetTrace { spatial, context, fca, coarse, logits })
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Canet<T: Scalar = f32> {
    pub config: CanetConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Canet<T> {
    pub fn new(config: CanetConfig, seed: u64) -> Result<Self> {
        let params = config.init_params(&mut crate::rng_from_seed(seed))?;
        Ok(Self { config, params })
    }

    /// Eval-mode logits for an N×3×H×W batch.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let mut g = Graph::new(&mut tape, &self.params, Mode::Eval);
        let logits = canet_forward(&mut g, &self.config, x)?.logits;
        Ok(tape.value(logits).clone())
    }

    /// Per-pixel argmax labels, N·H·W values.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<u8>> {
        self.logits(images)?.argmax_channels()
    }
}
