//! Feature cross attention: fuses the spatial and context branch features
//! with a spatial attention map, a channel attention gate and a residual
//! add, plus the ablation variants used to compare fusion designs.

use alloc::format;

use crate::error::{ensure, shape_err, Error, Result};
use crate::nn::{Activation, Conv2dSpec};
use crate::params::{Graph, ParamStore};
use crate::{Scalar, Var};

/// Which attention blocks run, and in what order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FcaVariant {
    /// Concatenation only; the classifier sees both branches directly.
    None,
    /// Two consecutive 3×3 conv blocks.
    ConvOnly,
    SpatialOnly,
    /// `fused⊙sa + fused⊙ca + fused`
    Parallel,
    /// `(fused⊙ca + fused)⊙sa`
    ChannelThenSpatial,
    /// `(fused⊙sa)⊙ca + fused`, the full module.
    SpatialThenChannel,
}

impl FcaVariant {
    pub const ALL: [FcaVariant; 6] = [
        FcaVariant::None,
        FcaVariant::ConvOnly,
        FcaVariant::SpatialOnly,
        FcaVariant::Parallel,
        FcaVariant::ChannelThenSpatial,
        FcaVariant::SpatialThenChannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FcaVariant::None => "none",
            FcaVariant::ConvOnly => "conv_only",
            FcaVariant::SpatialOnly => "spatial_only",
            FcaVariant::Parallel => "parallel",
            FcaVariant::ChannelThenSpatial => "channel_then_spatial",
            FcaVariant::SpatialThenChannel => "spatial_then_channel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion variant `{s}`")))
    }

    pub fn uses_fusion_conv(self) -> bool {
        self != FcaVariant::None
    }

    pub fn uses_spatial(self) -> bool {
        !matches!(self, FcaVariant::None | FcaVariant::ConvOnly)
    }

    pub fn uses_channel(self) -> bool {
        matches!(
            self,
            FcaVariant::Parallel | FcaVariant::ChannelThenSpatial | FcaVariant::SpatialThenChannel
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FcaConfig {
    pub fusion_channels: usize,
    pub variant: FcaVariant,
}

impl Default for FcaConfig {
    fn default() -> Self {
        Self { fusion_channels: 256, variant: FcaVariant::SpatialThenChannel }
    }
}

impl FcaConfig {
    /// Channels handed to the classifier.
    pub fn out_channels(&self, spatial_channels: usize, context_channels: usize) -> usize {
        if self.variant.uses_fusion_conv() {
            self.fusion_channels
        } else {
            spatial_channels + context_channels
        }
    }

    pub fn fuse_spec(&self, spatial_channels: usize, context_channels: usize) -> Conv2dSpec {
        Conv2dSpec::new(spatial_channels + context_channels, self.fusion_channels, 3)
    }

    pub fn sa_spec(&self, spatial_channels: usize) -> Conv2dSpec {
        Conv2dSpec::new(spatial_channels, 1, 3)
    }

    pub fn final_spec(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.fusion_channels, self.fusion_channels, 3)
    }
}

/// Intermediate values of one module evaluation.
#[derive(Clone, Copy, Debug)]
pub struct FcaTrace {
    /// Output of the first fusion conv block (the concatenation for `None`).
    pub fused: Var,
    /// N×1×H×W spatial map.
    pub sa_map: Option<Var>,
    /// N×F×1×1 channel gate.
    pub ca_map: Option<Var>,
    /// Value entering the final conv block.
    pub pre_final: Var,
    pub out: Var,
}

/// Registers the module's parameters under `prefix`.
pub fn register<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &FcaConfig,
    spatial_channels: usize,
    context_channels: usize,
    rng: &mut crate::Rng,
) -> Result<()> {
    ensure!(cfg.fusion_channels > 0, Error::Config("fusion_channels must be positive".into()));
    let v = cfg.variant;
    if !v.uses_fusion_conv() {
        return Ok(());
    }
    store.insert_conv(&format!("{prefix}.fuse.conv"), &cfg.fuse_spec(spatial_channels, context_channels), false, rng)?;
    store.insert_bn(&format!("{prefix}.fuse.bn"), cfg.fusion_channels)?;
    if v.uses_spatial() {
        store.insert_conv(&format!("{prefix}.sa.conv"), &cfg.sa_spec(spatial_channels), false, rng)?;
        store.insert_bn(&format!("{prefix}.sa.bn"), 1)?;
    }
    if v.uses_channel() {
        store.insert_linear(&format!("{prefix}.ca.fc"), context_channels, cfg.fusion_channels, true, rng)?;
    }
    store.insert_conv(&format!("{prefix}.final.conv"), &cfg.final_spec(), false, rng)?;
    store.insert_bn(&format!("{prefix}.final.bn"), cfg.fusion_channels)?;
    Ok(())
}

/// Concatenation followed by 3×3 conv, BN and ReLU.
pub fn fuse_concat<T: Scalar>(g: &mut Graph<T>, prefix: &str, cfg: &FcaConfig, spatial: Var, context: Var) -> Result<Var> {
    let cat = concat_checked(g, spatial, context)?;
    let (cs, cc) = (g.tape.shape(spatial)[1], g.tape.shape(context)[1]);
    g.conv_bn_act(&format!("{prefix}.fuse.conv"), &format!("{prefix}.fuse.bn"), cat, &cfg.fuse_spec(cs, cc), Activation::Relu)
}

fn concat_checked<T: Scalar>(g: &mut Graph<T>, spatial: Var, context: Var) -> Result<Var> {
    let (s, c) = (g.tape.shape(spatial), g.tape.shape(context));
    ensure!(
        s.len() == 4 && c.len() == 4 && s[0] == c[0] && s[2..] == c[2..],
        shape_err!("fusion inputs disagree: spatial {s:?}, context {c:?}")
    );
    g.tape.concat_channels(&[spatial, context])
}

/// `sigmoid(BN(conv3×3(spatial)))`, one channel.
pub fn spatial_map<T: Scalar>(g: &mut Graph<T>, prefix: &str, cfg: &FcaConfig, spatial: Var) -> Result<Var> {
    let cs = g.tape.shape(spatial)[1];
    let y = g.conv_bn_act(&format!("{prefix}.sa.conv"), &format!("{prefix}.sa.bn"), spatial, &cfg.sa_spec(cs), Activation::None)?;
    Ok(g.tape.sigmoid(y))
}

/// `x ⊙ map`, the map broadcast over channels.
pub fn spatial_attention<T: Scalar>(g: &mut Graph<T>, prefix: &str, cfg: &FcaConfig, x: Var, spatial: Var) -> Result<(Var, Var)> {
    let (xs, ss) = (g.tape.shape(x), g.tape.shape(spatial));
    ensure!(
        xs.len() == 4 && ss.len() == 4 && xs[0] == ss[0] && xs[2..] == ss[2..],
        shape_err!("spatial attention: features {xs:?} and spatial input {ss:?} disagree")
    );
    let map = spatial_map(g, prefix, cfg, spatial)?;
    Ok((g.tape.mul(x, map)?, map))
}

/// `sigmoid(FC(avg(context)) + FC(max(context)))` as N×F×1×1.
pub fn channel_map<T: Scalar>(g: &mut Graph<T>, prefix: &str, context: Var) -> Result<Var> {
    let n = g.tape.shape(context)[0];
    let c = g.tape.shape(context)[1];
    let avg = g.tape.global_avg_pool(context)?;
    let avg = g.tape.reshape(avg, &[n, c])?;
    let max = g.tape.global_max_pool(context)?;
    let max = g.tape.reshape(max, &[n, c])?;
    let fc = format!("{prefix}.ca.fc");
    let a = g.linear(&fc, avg, true)?;
    let m = g.linear(&fc, max, true)?;
    let s = g.tape.add(a, m)?;
    let f = g.tape.shape(s)[1];
    let s = g.tape.reshape(s, &[n, f, 1, 1])?;
    Ok(g.tape.sigmoid(s))
}

/// `x ⊙ map + residual`.
pub fn channel_attention<T: Scalar>(g: &mut Graph<T>, prefix: &str, x: Var, context: Var, residual: Var) -> Result<(Var, Var)> {
    let map = channel_map(g, prefix, context)?;
    let (ms, xs) = (g.tape.shape(map), g.tape.shape(x));
    ensure!(
        ms[..2] == xs[..2],
        shape_err!("channel gate {ms:?} does not match features {xs:?}")
    );
    let gated = g.tape.mul(x, map)?;
    Ok((g.tape.add(gated, residual)?, map))
}

pub fn fca_forward<T: Scalar>(g: &mut Graph<T>, prefix: &str, cfg: &FcaConfig, spatial: Var, context: Var) -> Result<FcaTrace> {
    let v = cfg.variant;
    if !v.uses_fusion_conv() {
        let cat = concat_checked(g, spatial, context)?;
        return Ok(FcaTrace { fused: cat, sa_map: None, ca_map: None, pre_final: cat, out: cat });
    }
    let fused = fuse_concat(g, prefix, cfg, spatial, context)?;
    let (pre_final, sa_map, ca_map) = match v {
        FcaVariant::ConvOnly => (fused, None, None),
        FcaVariant::SpatialOnly => {
            let (sa, m) = spatial_attention(g, prefix, cfg, fused, spatial)?;
            (sa, Some(m), None)
        }
        FcaVariant::SpatialThenChannel => {
            let (sa, sm) = spatial_attention(g, prefix, cfg, fused, spatial)?;
            let (ca, cm) = channel_attention(g, prefix, sa, context, fused)?;
            (ca, Some(sm), Some(cm))
        }
        FcaVariant::ChannelThenSpatial => {
            let (ca, cm) = channel_attention(g, prefix, fused, context, fused)?;
            let (sa, sm) = spatial_attention(g, prefix, cfg, ca, spatial)?;
            (sa, Some(sm), Some(cm))
        }
        FcaVariant::Parallel => {
            let (sa, sm) = spatial_attention(g, prefix, cfg, fused, spatial)?;
            let cm = channel_map(g, prefix, context)?;
            let ca = g.tape.mul(fused, cm)?;
            let both = g.tape.add(sa, ca)?;
            (g.tape.add(both, fused)?, Some(sm), Some(cm))
        }
        FcaVariant::None => unreachable!(),
    };
    let out = g.conv_bn_act(
        &format!("{prefix}.final.conv"),
        &format!("{prefix}.final.bn"),
        pre_final,
        &cfg.final_spec(),
        Activation::Relu,
    )?;
    Ok(FcaTrace { fused, sa_map, ca_map, pre_final, out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::{Tape, Tensor};

    fn setup(variant: FcaVariant, seed: u64) -> (ParamStore<f32>, FcaConfig) {
        let cfg = FcaConfig { fusion_channels: 6, variant };
        let mut p = ParamStore::new();
        register(&mut p, "fca", &cfg, 4, 3, &mut crate::rng_from_seed(seed)).unwrap();
        (p, cfg)
    }

    fn zero(p: &mut ParamStore<f32>, name: &str) {
        if let Some(t) = p.get_mut(name) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_attention_weights_give_one_and_a_quarter_fused() {
        let (mut p, cfg) = setup(FcaVariant::SpatialThenChannel, 1);
        for n in ["fca.sa.conv.weight", "fca.ca.fc.weight", "fca.ca.fc.bias"] {
            zero(&mut p, n);
        }
        let mut rng = crate::rng_from_seed(2);
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut rng));
        let c = tape.constant(Tensor::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng));
        let mut g = Graph::new(&mut tape, &p, Mode::Train);
        let tr = fca_forward(&mut g, "fca", &cfg, s, c).unwrap();
        let fused = tape.value(tr.fused).map(|v| 1.25 * v);
        assert!(tape.value(tr.pre_final).max_abs_diff(&fused) < 1e-5);
    }

    #[test]
    fn every_variant_preserves_spatial_extent() {
        for v in FcaVariant::ALL {
            let (p, cfg) = setup(v, 3);
            let mut rng = crate::rng_from_seed(4);
            let mut tape = Tape::new();
            let s = tape.constant(Tensor::uniform(&[1, 4, 5, 3], -1.0, 1.0, &mut rng));
            let c = tape.constant(Tensor::uniform(&[1, 3, 5, 3], -1.0, 1.0, &mut rng));
            let mut g = Graph::new(&mut tape, &p, Mode::Train);
            let tr = fca_forward(&mut g, "fca", &cfg, s, c).unwrap();
            assert_eq!(tape.shape(tr.out), &[1, cfg.out_channels(4, 3), 5, 3], "{}", v.name());
        }
    }

    #[test]
    fn mismatched_resolution_is_rejected() {
        let (p, cfg) = setup(FcaVariant::SpatialThenChannel, 5);
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[1, 4, 4, 4]));
        let c = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let mut g = Graph::new(&mut tape, &p, Mode::Train);
        assert!(matches!(fca_forward(&mut g, "fca", &cfg, s, c), Err(Error::Shape(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in FcaVariant::ALL {
            assert_eq!(FcaVariant::parse(v.name()).unwrap(), v);
        }
        assert!(FcaVariant::parse("cbam").is_err());
    }
}
