use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Error, Result};
use crate::nn::{Activation, Conv2dSpec};
use crate::params::{Graph, ParamStore};
use crate::{Scalar, Var};

/// One executable, countable layer.
///
/// Conv layers carry no bias; each is followed by its own batch norm.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// `conv → bn → act`, parameters `<p>.conv`, `<p>.bn`.
    ConvBn { conv: Conv2dSpec, act: Activation },
    /// Depthwise `k×k` then pointwise `1×1`, each with BN and `act`:
    /// `<p>.dw`, `<p>.dw_bn`, `<p>.pw`, `<p>.pw_bn`.
    DepthwiseSeparable { cin: usize, cout: usize, kernel: usize, stride: usize, act: Activation },
    /// Inverted residual bottleneck with ReLU6: optional `<p>.expand`,
    /// then `<p>.dw`, then linear `<p>.project`, identity shortcut when
    /// the stride is 1 and widths agree.
    InvertedResidual { cin: usize, cout: usize, stride: usize, expand: usize },
    /// Two 3×3 convs with a shortcut (`<p>.conv1`, `<p>.conv2`, optional
    /// `<p>.down` projection).
    BasicBlock { cin: usize, cout: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize, padding: usize },
}

impl LayerSpec {
    pub fn conv_bn(cin: usize, cout: usize, kernel: usize, stride: usize, act: Activation) -> Self {
        LayerSpec::ConvBn { conv: Conv2dSpec::new(cin, cout, kernel).stride(stride), act }
    }

    pub fn in_channels(&self, cin_if_pool: usize) -> usize {
        match *self {
            LayerSpec::ConvBn { conv, .. } => conv.in_channels,
            LayerSpec::DepthwiseSeparable { cin, .. }
            | LayerSpec::InvertedResidual { cin, .. }
            | LayerSpec::BasicBlock { cin, .. } => cin,
            LayerSpec::MaxPool { .. } => cin_if_pool,
        }
    }

    pub fn out_channels(&self, cin: usize) -> usize {
        match *self {
            LayerSpec::ConvBn { conv, .. } => conv.out_channels,
            LayerSpec::DepthwiseSeparable { cout, .. }
            | LayerSpec::InvertedResidual { cout, .. }
            | LayerSpec::BasicBlock { cout, .. } => cout,
            LayerSpec::MaxPool { .. } => cin,
        }
    }

    pub fn stride(&self) -> usize {
        match *self {
            LayerSpec::ConvBn { conv, .. } => conv.stride.0,
            LayerSpec::DepthwiseSeparable { stride, .. }
            | LayerSpec::InvertedResidual { stride, .. }
            | LayerSpec::BasicBlock { stride, .. }
            | LayerSpec::MaxPool { stride, .. } => stride,
        }
    }

    /// The depthwise and pointwise convs of a separable layer.
    pub fn separable_parts(cin: usize, cout: usize, kernel: usize, stride: usize) -> (Conv2dSpec, Conv2dSpec) {
        (Conv2dSpec::depthwise(cin, kernel).stride(stride), Conv2dSpec::new(cin, cout, 1))
    }

    /// `(expand, dw, project)` convs of an inverted residual.
    pub fn inverted_parts(cin: usize, cout: usize, stride: usize, expand: usize) -> (Option<Conv2dSpec>, Conv2dSpec, Conv2dSpec) {
        let hidden = cin * expand;
        let e = (expand != 1).then(|| Conv2dSpec::new(cin, hidden, 1));
        (e, Conv2dSpec::depthwise(hidden, 3).stride(stride), Conv2dSpec::new(hidden, cout, 1))
    }

    /// `(conv1, conv2, downsample)` of a basic block.
    pub fn basic_parts(cin: usize, cout: usize, stride: usize) -> (Conv2dSpec, Conv2dSpec, Option<Conv2dSpec>) {
        let down = (stride != 1 || cin != cout).then(|| Conv2dSpec::new(cin, cout, 1).stride(stride));
        (Conv2dSpec::new(cin, cout, 3).stride(stride), Conv2dSpec::new(cout, cout, 3), down)
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, p: &str, rng: &mut crate::Rng) -> Result<()> {
        let mut conv = |store: &mut ParamStore<T>, name: &str, bn: &str, spec: &Conv2dSpec| -> Result<()> {
            store.insert_conv(&format!("{p}.{name}"), spec, false, rng)?;
            store.insert_bn(&format!("{p}.{bn}"), spec.out_channels)
        };
        match *self {
            LayerSpec::ConvBn { conv: spec, .. } => conv(store, "conv", "bn", &spec),
            LayerSpec::DepthwiseSeparable { cin, cout, kernel, stride, .. } => {
                let (dw, pw) = Self::separable_parts(cin, cout, kernel, stride);
                conv(store, "dw", "dw_bn", &dw)?;
                conv(store, "pw", "pw_bn", &pw)
            }
            LayerSpec::InvertedResidual { cin, cout, stride, expand } => {
                let (e, dw, pr) = Self::inverted_parts(cin, cout, stride, expand);
                if let Some(e) = e {
                    conv(store, "expand", "expand_bn", &e)?;
                }
                conv(store, "dw", "dw_bn", &dw)?;
                conv(store, "project", "project_bn", &pr)
            }
            LayerSpec::BasicBlock { cin, cout, stride } => {
                let (c1, c2, down) = Self::basic_parts(cin, cout, stride);
                conv(store, "conv1", "bn1", &c1)?;
                conv(store, "conv2", "bn2", &c2)?;
                if let Some(d) = down {
                    conv(store, "down", "down_bn", &d)?;
                }
                Ok(())
            }
            LayerSpec::MaxPool { .. } => Ok(()),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &str, x: Var) -> Result<Var> {
        let n = |s: &str| format!("{p}.{s}");
        match *self {
            LayerSpec::ConvBn { conv, act } => g.conv_bn_act(&n("conv"), &n("bn"), x, &conv, act),
            LayerSpec::DepthwiseSeparable { cin, cout, kernel, stride, act } => {
                let (dw, pw) = Self::separable_parts(cin, cout, kernel, stride);
                let y = g.conv_bn_act(&n("dw"), &n("dw_bn"), x, &dw, act)?;
                g.conv_bn_act(&n("pw"), &n("pw_bn"), y, &pw, act)
            }
            LayerSpec::InvertedResidual { cin, cout, stride, expand } => {
                let (e, dw, pr) = Self::inverted_parts(cin, cout, stride, expand);
                let mut y = x;
                if let Some(e) = e {
                    y = g.conv_bn_act(&n("expand"), &n("expand_bn"), y, &e, Activation::Relu6)?;
                }
                y = g.conv_bn_act(&n("dw"), &n("dw_bn"), y, &dw, Activation::Relu6)?;
                y = g.conv_bn_act(&n("project"), &n("project_bn"), y, &pr, Activation::None)?;
                if stride == 1 && cin == cout {
                    y = g.tape.add(y, x)?;
                }
                Ok(y)
            }
            LayerSpec::BasicBlock { cin, cout, stride } => {
                let (c1, c2, down) = Self::basic_parts(cin, cout, stride);
                let y = g.conv_bn_act(&n("conv1"), &n("bn1"), x, &c1, Activation::Relu)?;
                let y = g.conv_bn_act(&n("conv2"), &n("bn2"), y, &c2, Activation::None)?;
                let short = match down {
                    Some(d) => g.conv_bn_act(&n("down"), &n("down_bn"), x, &d, Activation::None)?,
                    None => x,
                };
                let s = g.tape.add(y, short)?;
                Ok(g.tape.relu(s))
            }
            LayerSpec::MaxPool { kernel, stride, padding } => g.tape.max_pool2d(x, kernel, stride, padding),
        }
    }
}

/// A group of layers whose output sits at one stride.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub layers: Vec<LayerSpec>,
    /// Output stride relative to the input image.
    pub stride: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
    /// Always false; no pretrained weights are shipped.
    pub pretrained: bool,
}

pub const BACKBONES: [&str; 3] = ["tiny", "mobilenet_v2", "resnet18"];

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(format!("backbone `{}`: {m}", self.name));
        ensure!(!self.stages.is_empty(), cfg("no stages".into()));
        let mut prev = 1;
        let mut channels = 3;
        for (i, s) in self.stages.iter().enumerate() {
            ensure!(s.stride.is_power_of_two() && s.stride >= prev, cfg(format!("stage {i} stride {} after {prev}", s.stride)));
            let mut stride = prev;
            for l in &s.layers {
                ensure!(
                    l.in_channels(channels) == channels,
                    cfg(format!("stage {i}: layer expects {} channels, receives {channels}", l.in_channels(channels)))
                );
                channels = l.out_channels(channels);
                stride *= l.stride();
            }
            ensure!(stride == s.stride, cfg(format!("stage {i} layers reach stride {stride}, declared {}", s.stride)));
            ensure!(channels == s.out_channels, cfg(format!("stage {i} ends at {channels} channels, declared {}", s.out_channels)));
            prev = s.stride;
        }
        ensure!(prev == 32, cfg(format!("deepest stride is {prev}, must be 32")));
        Ok(())
    }

    /// Index of the last stage at the given stride.
    pub fn stage_at(&self, stride: usize) -> Result<usize> {
        self.stages
            .iter()
            .rposition(|s| s.stride == stride)
            .ok_or_else(|| Error::Config(format!("backbone `{}` has no stride-{stride} stage", self.name)))
    }

    pub fn stage_prefix(i: usize) -> String {
        format!("context.backbone.stage{i}")
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut crate::Rng) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            for (j, l) in s.layers.iter().enumerate() {
                l.register(store, &format!("{}.{j}", Self::stage_prefix(i)), rng)?;
            }
        }
        Ok(())
    }

    /// Output of every stage, in order.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        let mut x = image;
        let mut outs = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            for (j, l) in s.layers.iter().enumerate() {
                x = l.forward(g, &format!("{}.{j}", Self::stage_prefix(i)), x)?;
            }
            outs.push(x);
        }
        Ok(outs)
    }
}

fn stage(layers: Vec<LayerSpec>, stride: usize) -> StageSpec {
    let mut c = 0;
    for l in &layers {
        c = l.out_channels(c);
    }
    StageSpec { layers, stride, out_channels: c }
}

fn tiny() -> Vec<StageSpec> {
    let widths = [8, 16, 24, 32, 48];
    let mut cin = 3;
    let mut out = Vec::new();
    for (i, &c) in widths.iter().enumerate() {
        out.push(stage(vec![LayerSpec::conv_bn(cin, c, 3, 2, Activation::Relu)], 2 << i));
        cin = c;
    }
    out
}

fn mobilenet_v2() -> Vec<StageSpec> {
    // (expansion, width, repeats, first stride)
    const TABLE: [(usize, usize, usize, usize); 7] =
        [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    let mut layers = vec![LayerSpec::conv_bn(3, 32, 3, 2, Activation::Relu6)];
    let mut cin = 32;
    for (t, c, reps, s) in TABLE {
        for r in 0..reps {
            layers.push(LayerSpec::InvertedResidual { cin, cout: c, stride: if r == 0 { s } else { 1 }, expand: t });
            cin = c;
        }
    }
    group_by_stride(layers)
}

fn resnet18() -> Vec<StageSpec> {
    let mut layers = vec![
        LayerSpec::ConvBn { conv: Conv2dSpec::new(3, 64, 7).stride(2).padding(3), act: Activation::Relu },
        LayerSpec::MaxPool { kernel: 3, stride: 2, padding: 1 },
    ];
    let mut cin = 64;
    for (i, c) in [64, 128, 256, 512].into_iter().enumerate() {
        layers.push(LayerSpec::BasicBlock { cin, cout: c, stride: if i == 0 { 1 } else { 2 } });
        layers.push(LayerSpec::BasicBlock { cin: c, cout: c, stride: 1 });
        cin = c;
    }
    group_by_stride(layers)
}

/// Splits a flat layer list into stages, one per distinct output stride.
fn group_by_stride(layers: Vec<LayerSpec>) -> Vec<StageSpec> {
    let mut stages: Vec<(Vec<LayerSpec>, usize)> = Vec::new();
    let mut stride = 1;
    for l in layers {
        stride *= l.stride();
        match stages.last_mut() {
            Some((ls, s)) if *s == stride => ls.push(l),
            _ => stages.push((vec![l], stride)),
        }
    }
    stages.into_iter().map(|(ls, s)| stage(ls, s)).collect()
}

pub fn build_backbone(name: &str) -> Result<BackboneSpec> {
    let stages = match name {
        "tiny" => tiny(),
        "mobilenet_v2" => mobilenet_v2(),
        "resnet18" => resnet18(),
        _ => {
            return Err(Error::Config(format!(
                "unknown backbone `{name}` (expected one of {})",
                BACKBONES.join(", ")
            )))
        }
    };
    let spec = BackboneSpec { name: name.to_string(), stages, pretrained: false };
    spec.validate()?;
    Ok(spec)
}

pub(crate) fn check_divisible(h: usize, w: usize, by: usize) -> Result<()> {
    ensure!(
        h % by == 0 && w % by == 0 && h > 0 && w > 0,
        shape_err!("input {h}x{w} must have both extents divisible by {by}")
    );
    Ok(())
}
