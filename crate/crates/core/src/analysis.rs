//! Analytic parameter and FLOP accounting over the network description,
//! plus latency statistics for inference benchmarks.
//!
//! Counting walks the layer descriptions directly; nothing is instantiated
//! or executed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{ensure, Error, Result};
use crate::fca::{FcaConfig, FcaVariant};
use crate::model::{self, CanetConfig, LayerSpec};
use crate::nn::{Activation, Conv2dSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlopConvention {
    /// One multiply-accumulate counts as one FLOP.
    #[default]
    Mac,
    /// One multiply-accumulate counts as two FLOPs.
    MulAdd2x,
}

impl FlopConvention {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mac" => Ok(Self::Mac),
            "mul_add_2x" | "2x" => Ok(Self::MulAdd2x),
            _ => Err(Error::Config(format!("unknown FLOP convention `{s}` (expected mac or mul_add_2x)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mac => "mac",
            Self::MulAdd2x => "mul_add_2x",
        }
    }

    fn factor(self) -> u64 {
        match self {
            Self::Mac => 1,
            Self::MulAdd2x => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Conv,
    Deconv,
    Linear,
    BatchNorm,
    /// Activations, pooling, attention products, residual adds, upsampling.
    Elementwise,
}

impl RowKind {
    pub fn name(self) -> &'static str {
        match self {
            RowKind::Conv => "conv",
            RowKind::Deconv => "deconv",
            RowKind::Linear => "fc",
            RowKind::BatchNorm => "bn",
            RowKind::Elementwise => "elementwise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub kind: RowKind,
    /// Learnable scalars.
    pub params: u64,
    /// Multiply-accumulates (conv, deconv, fc).
    pub macs: u64,
    /// Single operations (one per element for BN, activations, pooling).
    pub ops: u64,
    /// `(C, H, W)` produced by the row for one image.
    pub output: (usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub convention: FlopConvention,
    pub input: (usize, usize),
}

impl CostReport {
    pub fn row_flops(&self, r: &CostRow) -> u64 {
        r.macs * self.convention.factor() + r.ops
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| self.row_flops(r)).sum()
    }

    /// FLOPs of conv and deconv rows only.
    pub fn conv_flops(&self) -> u64 {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Conv | RowKind::Deconv))
            .map(|r| self.row_flops(r))
            .sum()
    }

    /// `(params, flops)` summed per top-level name component.
    pub fn module_totals(&self) -> BTreeMap<String, (u64, u64)> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            let m = r.name.split('.').next().unwrap_or("").to_string();
            let e = out.entry(m).or_insert((0, 0));
            e.0 += r.params;
            e.1 += self.row_flops(r);
        }
        out
    }

    /// One `key=value` line per row, then a totals line (input as WxH).
    pub fn machine_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s += &format!(
                "row name={} kind={} params={} macs={} ops={} flops={} out={}x{}x{}\n",
                r.name,
                r.kind.name(),
                r.params,
                r.macs,
                r.ops,
                self.row_flops(r),
                r.output.0,
                r.output.1,
                r.output.2
            );
        }
        s += &format!(
            "total params={} flops={} convention={} input={}x{}\n",
            self.total_params(),
            self.total_flops(),
            self.convention.name(),
            self.input.1,
            self.input.0
        );
        s
    }
}

fn human(v: u64) -> String {
    let f = v as f64;
    if f >= 1e9 {
        format!("{:.2}G", f / 1e9)
    } else if f >= 1e6 {
        format!("{:.2}M", f / 1e6)
    } else if f >= 1e3 {
        format!("{:.1}K", f / 1e3)
    } else {
        format!("{v}")
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(6);
        writeln!(f, "{:<width$}  {:<11}  {:>12}  {:>16}  {:>14}", "layer", "kind", "params", "flops", "output")?;
        for r in &self.rows {
            let out = format!("{}x{}x{}", r.output.0, r.output.1, r.output.2);
            writeln!(f, "{:<width$}  {:<11}  {:>12}  {:>16}  {:>14}", r.name, r.kind.name(), r.params, self.row_flops(r), out)?;
        }
        for (m, (p, fl)) in self.module_totals() {
            writeln!(f, "module {m:<12} params {:>10}  flops {:>10}", human(p), human(fl))?;
        }
        write!(
            f,
            "total params {} ({})  flops {} ({}, {} convention) at {}x{}",
            self.total_params(),
            human(self.total_params()),
            self.total_flops(),
            human(self.total_flops()),
            self.convention.name(),
            self.input.1,
            self.input.0
        )
    }
}

struct Counter {
    rows: Vec<CostRow>,
}

type Shape = (usize, usize, usize);

impl Counter {
    fn push(&mut self, name: String, kind: RowKind, params: u64, macs: u64, ops: u64, output: Shape) {
        self.rows.push(CostRow { name, kind, params, macs, ops, output });
    }

    fn conv(&mut self, name: &str, spec: &Conv2dSpec, x: Shape) -> Result<Shape> {
        let (oh, ow) = spec.output_extent(x.1, x.2)?;
        let w = (spec.kernel.0 * spec.kernel.1 * spec.in_channels * spec.out_channels / spec.groups) as u64;
        let b = if spec.has_bias { spec.out_channels as u64 } else { 0 };
        let out = (spec.out_channels, oh, ow);
        self.push(name.to_string(), RowKind::Conv, w + b, w * (oh * ow) as u64, 0, out);
        Ok(out)
    }

    /// Counted as the adjoint convolution, which maps the deconv output back
    /// to its input.
    fn deconv(&mut self, name: &str, spec: &Conv2dSpec, x: Shape) -> Result<Shape> {
        let (oh, ow) = spec.transposed_output_extent(x.1, x.2)?;
        let w = (spec.kernel.0 * spec.kernel.1 * spec.in_channels * spec.out_channels / spec.groups) as u64;
        let out = (spec.out_channels, oh, ow);
        self.push(name.to_string(), RowKind::Deconv, w, w * (x.1 * x.2) as u64, 0, out);
        Ok(out)
    }

    fn bn(&mut self, name: &str, x: Shape) -> Shape {
        self.push(name.to_string(), RowKind::BatchNorm, 2 * x.0 as u64, 0, elems(x), x);
        x
    }

    fn elementwise(&mut self, name: &str, x: Shape) -> Shape {
        self.push(name.to_string(), RowKind::Elementwise, 0, 0, elems(x), x);
        x
    }

    fn act(&mut self, name: &str, act: Activation, x: Shape) -> Shape {
        if act != Activation::None {
            self.elementwise(name, x);
        }
        x
    }

    fn conv_bn_act(&mut self, p: &str, conv: &str, bn: &str, spec: &Conv2dSpec, act: Activation, x: Shape) -> Result<Shape> {
        let y = self.conv(&format!("{p}.{conv}"), spec, x)?;
        self.bn(&format!("{p}.{bn}"), y);
        Ok(self.act(&format!("{p}.{conv}_act"), act, y))
    }

    fn layer(&mut self, p: &str, l: &LayerSpec, x: Shape) -> Result<Shape> {
        match *l {
            LayerSpec::ConvBn { conv, act } => self.conv_bn_act(p, "conv", "bn", &conv, act, x),
            LayerSpec::DepthwiseSeparable { cin, cout, kernel, stride, act } => {
                let dw = Conv2dSpec::depthwise(cin, kernel).stride(stride);
                let y = self.conv_bn_act(p, "dw", "dw_bn", &dw, act, x)?;
                self.conv_bn_act(p, "pw", "pw_bn", &Conv2dSpec::new(cin, cout, 1), act, y)
            }
            LayerSpec::InvertedResidual { cin, cout, stride, expand } => {
                let hidden = cin * expand;
                let mut y = x;
                if expand != 1 {
                    y = self.conv_bn_act(p, "expand", "expand_bn", &Conv2dSpec::new(cin, hidden, 1), Activation::Relu6, y)?;
                }
                let dw = Conv2dSpec::depthwise(hidden, 3).stride(stride);
                y = self.conv_bn_act(p, "dw", "dw_bn", &dw, Activation::Relu6, y)?;
                y = self.conv_bn_act(p, "project", "project_bn", &Conv2dSpec::new(hidden, cout, 1), Activation::None, y)?;
                if stride == 1 && cin == cout {
                    self.elementwise(&format!("{p}.residual"), y);
                }
                Ok(y)
            }
            LayerSpec::BasicBlock { cin, cout, stride } => {
                let c1 = Conv2dSpec::new(cin, cout, 3).stride(stride);
                let y = self.conv_bn_act(p, "conv1", "bn1", &c1, Activation::Relu, x)?;
                let y = self.conv_bn_act(p, "conv2", "bn2", &Conv2dSpec::new(cout, cout, 3), Activation::None, y)?;
                if stride != 1 || cin != cout {
                    let d = Conv2dSpec::new(cin, cout, 1).stride(stride);
                    self.conv_bn_act(p, "down", "down_bn", &d, Activation::None, x)?;
                }
                self.elementwise(&format!("{p}.residual"), y);
                Ok(self.elementwise(&format!("{p}.out_act"), y))
            }
            LayerSpec::MaxPool { kernel, stride, padding } => {
                let spec = Conv2dSpec::new(x.0, x.0, kernel).stride(stride).padding(padding);
                let (oh, ow) = spec.output_extent(x.1, x.2)?;
                Ok(self.elementwise(&format!("{p}.maxpool"), (x.0, oh, ow)))
            }
        }
    }

    fn fca(&mut self, cfg: &FcaConfig, spatial: Shape, context: Shape) -> Result<Shape> {
        let v = cfg.variant;
        let cat = (spatial.0 + context.0, spatial.1, spatial.2);
        if v == FcaVariant::None {
            return Ok(cat);
        }
        let f = cfg.fusion_channels;
        let fused = self.conv_bn_act("fca", "fuse.conv", "fuse.bn", &cfg.fuse_spec(spatial.0, context.0), Activation::Relu, cat)?;
        if v.uses_spatial() {
            let m = self.conv("fca.sa.conv", &cfg.sa_spec(spatial.0), spatial)?;
            self.bn("fca.sa.bn", m);
            self.elementwise("fca.sa.sigmoid", m);
        }
        if v.uses_channel() {
            let pooled = (context.0, 1, 1);
            self.push("fca.ca.avg_pool".into(), RowKind::Elementwise, 0, 0, elems(context), pooled);
            self.push("fca.ca.max_pool".into(), RowKind::Elementwise, 0, 0, elems(context), pooled);
            // one shared layer applied to both pooled vectors
            let (cin, cout) = (context.0 as u64, f as u64);
            self.push("fca.ca.fc".into(), RowKind::Linear, cin * cout + cout, 2 * cin * cout, 2 * cout, (f, 1, 1));
            self.elementwise("fca.ca.sum", (f, 1, 1));
            self.elementwise("fca.ca.sigmoid", (f, 1, 1));
        }
        match v {
            FcaVariant::ConvOnly => {}
            FcaVariant::SpatialOnly => {
                self.elementwise("fca.sa.mul", fused);
            }
            FcaVariant::SpatialThenChannel | FcaVariant::ChannelThenSpatial => {
                self.elementwise("fca.sa.mul", fused);
                self.elementwise("fca.ca.mul", fused);
                self.elementwise("fca.residual", fused);
            }
            FcaVariant::Parallel => {
                self.elementwise("fca.sa.mul", fused);
                self.elementwise("fca.ca.mul", fused);
                self.elementwise("fca.branch_sum", fused);
                self.elementwise("fca.residual", fused);
            }
            FcaVariant::None => unreachable!(),
        }
        self.conv_bn_act("fca", "final.conv", "final.bn", &cfg.final_spec(), Activation::Relu, fused)
    }
}

fn elems(x: Shape) -> u64 {
    (x.0 * x.1 * x.2) as u64
}

/// Per-layer parameters and FLOPs for one image of extent `input`.
pub fn count_flops(cfg: &CanetConfig, input: (usize, usize), convention: FlopConvention) -> Result<CostReport> {
    cfg.validate()?;
    let (h, w) = input;
    ensure!(
        h > 0 && w > 0 && h % 32 == 0 && w % 32 == 0,
        Error::Config(format!("input size {h}x{w}: both extents must be divisible by 32"))
    );
    let mut c = Counter { rows: Vec::new() };
    let image = (3, h, w);
    let mut x = image;
    for (i, l) in model::spatial_layers().iter().enumerate() {
        x = c.layer(&model::spatial_prefix(i), l, x)?;
    }
    let spatial = x;
    let mut x = image;
    let mut taps = BTreeMap::new();
    for (i, s) in cfg.backbone.stages.iter().enumerate() {
        for (j, l) in s.layers.iter().enumerate() {
            x = c.layer(&format!("{}.{j}", model::BackboneSpec::stage_prefix(i)), l, x)?;
        }
        taps.insert(s.stride, x);
    }
    let (s16, s32) = (taps[&16], taps[&32]);
    let u = c.deconv("context.deconv1", &cfg.deconv1_spec()?, s32)?;
    c.bn("context.deconv1_bn", u);
    c.elementwise("context.deconv1_act", u);
    let cat = (u.0 + s16.0, u.1, u.2);
    let context = c.deconv("context.deconv2", &cfg.deconv2_spec()?, cat)?;
    c.bn("context.deconv2_bn", context);
    c.elementwise("context.deconv2_act", context);
    let fused = c.fca(&cfg.fca, spatial, context)?;
    let logits = c.conv("classifier", &cfg.classifier_spec(), fused)?;
    c.elementwise("upsample", (logits.0, h, w));
    Ok(CostReport { rows: c.rows, convention, input })
}

/// Same rows as [`count_flops`] at the configured input size.
pub fn count_params(cfg: &CanetConfig) -> Result<CostReport> {
    count_flops(cfg, cfg.input_size, FlopConvention::Mac)
}

/// Latency statistics over timed iterations (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub iterations: usize,
    pub warmup: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation; 0 for a single iteration.
    pub stddev: f64,
    pub fps: f64,
}

impl TimingReport {
    pub fn from_samples(samples: &[f64], warmup: usize) -> Result<Self> {
        ensure!(!samples.is_empty(), Error::Contract("timing needs at least one iteration".into()));
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(0.0, f64::max);
        let stddev = if samples.len() < 2 {
            0.0
        } else {
            libm::sqrt(samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0))
        };
        Ok(Self { iterations: samples.len(), warmup, mean, min, max, stddev, fps: 1.0 / mean })
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "iterations {} (warmup {} excluded)", self.iterations, self.warmup)?;
        writeln!(f, "mean_ms {:.6}", self.mean * 1e3)?;
        writeln!(f, "min_ms {:.6}", self.min * 1e3)?;
        writeln!(f, "max_ms {:.6}", self.max * 1e3)?;
        writeln!(f, "stddev_ms {:.6}", self.stddev * 1e3)?;
        write!(f, "fps {:.6}", self.fps)
    }
}
