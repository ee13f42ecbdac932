use crate::error::{ensure, shape_err, Result};
use crate::kernels::{self, ConvGeom};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

/// Hyper-parameters of a 2-D convolution (or of a transposed one).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub has_bias: bool,
}

impl Conv2dSpec {
    /// Square kernel, stride 1, shape-preserving padding `(k - 1) / 2`, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: ((kernel - 1) / 2, (kernel - 1) / 2),
            groups: 1,
            has_bias: false,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// Depthwise 3×3-style stage: one filter per input channel.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self::new(channels, channels, kernel).groups(channels)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.in_channels > 0 && self.out_channels > 0 && self.groups > 0,
            shape_err!("conv channel counts and groups must be positive: {self:?}")
        );
        ensure!(
            self.in_channels % self.groups == 0 && self.out_channels % self.groups == 0,
            shape_err!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels,
                self.out_channels,
                self.groups
            )
        );
        ensure!(
            self.kernel.0 > 0 && self.kernel.1 > 0 && self.stride.0 > 0 && self.stride.1 > 0,
            shape_err!("kernel and stride must be positive: {self:?}")
        );
        Ok(())
    }

    /// `floor((H + 2p − k) / s) + 1` along both axes.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding.0, w + 2 * self.padding.1);
        ensure!(
            ph >= self.kernel.0 && pw >= self.kernel.1,
            shape_err!(
                "kernel {:?} larger than padded input {ph}×{pw}",
                self.kernel
            )
        );
        Ok(((ph - self.kernel.0) / self.stride.0 + 1, (pw - self.kernel.1) / self.stride.1 + 1))
    }

    /// `(H − 1)·s − 2p + k` along both axes.
    pub fn transposed_output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = ((h - 1) * self.stride.0 + self.kernel.0) as isize - 2 * self.padding.0 as isize;
        let ow = ((w - 1) * self.stride.1 + self.kernel.1) as isize - 2 * self.padding.1 as isize;
        ensure!(
            oh > 0 && ow > 0,
            shape_err!("transposed conv {self:?} on {h}×{w} gives non-positive extent {oh}×{ow}")
        );
        Ok((oh as usize, ow as usize))
    }

    /// `[out, in / groups, kh, kw]`
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel.0, self.kernel.1]
    }

    /// `[in, out / groups, kh, kw]`, the layout of a transposed convolution.
    pub fn transposed_weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels / self.groups, self.kernel.0, self.kernel.1]
    }

    pub fn params(&self) -> usize {
        let w = self.kernel.0 * self.kernel.1 * self.in_channels * self.out_channels / self.groups;
        w + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulates for one image at output extent `oh × ow`.
    pub fn macs(&self, oh: usize, ow: usize) -> u64 {
        (self.kernel.0 * self.kernel.1 * self.in_channels * self.out_channels / self.groups) as u64
            * (oh * ow) as u64
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    ensure!(
        c == channels,
        shape_err!("{what}: input has {c} channels, spec expects {channels} (input {:?})", x.shape())
    );
    Ok((n, h, w))
}

fn check_bias<T: Scalar>(tape: &Tape<T>, b: Option<Var>, spec: &Conv2dSpec, channels: usize) -> Result<()> {
    ensure!(
        b.is_some() == spec.has_bias,
        shape_err!("bias presence does not match spec (has_bias = {})", spec.has_bias)
    );
    if let Some(b) = b {
        ensure!(
            tape.shape(b) == [channels],
            shape_err!("bias shape {:?}, expected [{channels}]", tape.shape(b))
        );
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of an N×C×H×W input (no kernel flip).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &Conv2dSpec) -> Result<Var> {
        spec.validate()?;
        let (n, h, wd) = check_input(self.value(x), spec.in_channels, "conv2d")?;
        ensure!(
            self.shape(w) == spec.weight_shape(),
            shape_err!("conv2d weight {:?}, spec expects {:?}", self.shape(w), spec.weight_shape())
        );
        check_bias(self, b, spec, spec.out_channels)?;
        let (oh, ow) = spec.output_extent(h, wd)?;
        let geom = ConvGeom {
            n,
            cin: spec.in_channels,
            h,
            w: wd,
            cout: spec.out_channels,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
            groups: spec.groups,
            oh,
            ow,
        };
        let y = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(&[n, spec.out_channels, oh, ow], y)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Transposed convolution; weights are `[in, out / groups, kh, kw]`.
    ///
    /// Forward equals the input-gradient operator of the matching [`Tape::conv2d`].
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, spec: &Conv2dSpec) -> Result<Var> {
        spec.validate()?;
        let (n, h, wd) = check_input(self.value(x), spec.in_channels, "conv_transpose2d")?;
        ensure!(
            self.shape(w) == spec.transposed_weight_shape(),
            shape_err!(
                "conv_transpose2d weight {:?}, spec expects {:?}",
                self.shape(w),
                spec.transposed_weight_shape()
            )
        );
        ensure!(!spec.has_bias, shape_err!("transposed convolution takes no bias"));
        let (oh, ow) = spec.transposed_output_extent(h, wd)?;
        // adjoint conv maps the (oh, ow) output back onto the (h, wd) input
        let geom = ConvGeom {
            n,
            cin: spec.out_channels,
            h: oh,
            w: ow,
            cout: spec.in_channels,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
            groups: spec.groups,
            oh: h,
            ow: wd,
        };
        let y = kernels::conv_backward_input(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::from_vec(&[n, spec.out_channels, oh, ow], y)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, geom }))
    }
}

/// Depthwise `k×k` convolution (one filter per channel) followed by a 1×1
/// pointwise convolution.
pub fn depthwise_separable_conv<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    dw_weight: Var,
    pw_weight: Var,
    kernel: usize,
    stride: usize,
) -> Result<Var> {
    let cin = tape.shape(x).get(1).copied().unwrap_or(0);
    let cout = tape.shape(pw_weight)[0];
    let dw = Conv2dSpec::depthwise(cin, kernel).stride(stride);
    let pw = Conv2dSpec::new(cin, cout, 1);
    let mid = tape.conv2d(x, dw_weight, None, &dw)?;
    tape.conv2d(mid, pw_weight, None, &pw)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Six nested loops, no lowering.
    fn reference_conv(x: &Tensor<f64>, w: &Tensor<f64>, spec: &Conv2dSpec) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (oh, ow) = spec.output_extent(h, wd).unwrap();
        let cout = spec.out_channels;
        let (cig, cog) = (cin / spec.groups, cout / spec.groups);
        let (kh, kw) = spec.kernel;
        let mut y = Tensor::zeros(&[n, cout, oh, ow]);
        for b in 0..n {
            for co in 0..cout {
                let g = co / cog;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..cig {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * spec.stride.0 + i) as isize - spec.padding.0 as isize;
                                    let ix = (ox * spec.stride.1 + j) as isize - spec.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xc = g * cig + ci;
                                    s += x.data()[((b * cin + xc) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cig + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        y.data_mut()[((b * cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = crate::rng_from_seed(1);
        let x = Tensor::<f32>::uniform(&[1, 3, 5, 5], -1.0, 1.0, &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x.clone()), t.constant(w));
        let y = t.conv2d(xv, wv, None, &Conv2dSpec::new(3, 3, 1)).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn output_extent_formula() {
        let spec = Conv2dSpec::new(3, 8, 3).stride(2).padding(1);
        assert_eq!(spec.output_extent(16, 16).unwrap(), (8, 8));
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[1, 3, 16, 16]));
        let w = t.constant(Tensor::zeros(&spec.weight_shape()));
        let y = t.conv2d(x, w, None, &spec).unwrap();
        assert_eq!(t.shape(y), &[1, 8, 8, 8]);
    }

    #[test]
    fn shape_errors() {
        let spec = Conv2dSpec::new(4, 8, 3);
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = t.constant(Tensor::zeros(&spec.weight_shape()));
        assert!(t.conv2d(x, w, None, &spec).is_err());
        let big = Conv2dSpec::new(3, 2, 7).padding(0);
        let x2 = t.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w2 = t.constant(Tensor::zeros(&big.weight_shape()));
        assert!(t.conv2d(x2, w2, None, &big).is_err());
        assert!(Conv2dSpec::new(6, 4, 3).groups(4).validate().is_err());
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = crate::rng_from_seed(2);
        for spec in [
            Conv2dSpec::new(2, 3, 3),
            Conv2dSpec::new(4, 6, 3).stride(2).groups(2),
            Conv2dSpec::new(4, 4, 3).groups(4).padding(0),
        ] {
            let x = Tensor::<f64>::uniform(&[2, spec.in_channels, 5, 5], -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng);
            let mut t = Tape::new();
            let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.conv2d(xv, wv, None, &spec).unwrap();
            assert!(t.value(y).max_abs_diff(&reference_conv(&x, &w, &spec)) < 1e-12);
        }
        // f32 path on the 1×2×5×5 case
        let spec = Conv2dSpec::new(2, 3, 3);
        let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng);
        let mut t = Tape::<f32>::new();
        let (xv, wv) = (t.constant(x.cast()), t.constant(w.cast()));
        let y = t.conv2d(xv, wv, None, &spec).unwrap();
        let want = reference_conv(&x, &w, &spec);
        assert!(t.value(y).cast::<f64>().max_abs_diff(&want) < 1e-5);
    }

    #[test]
    fn depthwise_separable_parameter_count() {
        let dw = Conv2dSpec::depthwise(64, 3);
        let pw = Conv2dSpec::new(64, 128, 1);
        let (dws, pws) = (dw.weight_shape(), pw.weight_shape());
        let enumerated: usize = dws.iter().product::<usize>() + pws.iter().product::<usize>();
        assert_eq!(enumerated, 8768);
        assert_eq!(dw.params() + pw.params(), 8768);
        assert_eq!(Conv2dSpec::new(64, 128, 3).params(), 73728);
    }

    #[test]
    fn depthwise_separable_equals_composition() {
        let mut rng = crate::rng_from_seed(3);
        let x = Tensor::<f32>::uniform(&[1, 4, 6, 6], -1.0, 1.0, &mut rng);
        let dw = Tensor::<f32>::uniform(&[4, 1, 3, 3], -1.0, 1.0, &mut rng);
        let pw = Tensor::<f32>::uniform(&[5, 4, 1, 1], -1.0, 1.0, &mut rng);
        let mut t = Tape::new();
        let (xv, dv, pv) = (t.constant(x), t.constant(dw), t.constant(pw));
        let y = depthwise_separable_conv(&mut t, xv, dv, pv, 3, 2).unwrap();
        let mid = t.conv2d(xv, dv, None, &Conv2dSpec::depthwise(4, 3).stride(2)).unwrap();
        let want = t.conv2d(mid, pv, None, &Conv2dSpec::new(4, 5, 1)).unwrap();
        assert_eq!(t.value(y), t.value(want));
        assert_eq!(t.shape(y), &[1, 5, 3, 3]);
    }

    #[test]
    fn depthwise_unit_kernel_is_passthrough() {
        let mut rng = crate::rng_from_seed(4);
        let x = Tensor::<f32>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let w = t.constant(Tensor::ones(&[3, 1, 1, 1]));
        let y = t.conv2d(xv, w, None, &Conv2dSpec::depthwise(3, 1)).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn transposed_extent_and_zero_weights() {
        let spec = Conv2dSpec::new(3, 2, 2).stride(2).padding(0);
        assert_eq!(spec.transposed_output_extent(8, 8).unwrap(), (16, 16));
        let mut rng = crate::rng_from_seed(5);
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng));
        let w = t.constant(Tensor::zeros(&spec.transposed_weight_shape()));
        let y = t.conv_transpose2d(x, w, &spec).unwrap();
        assert_eq!(t.value(y), &Tensor::zeros(&[1, 2, 16, 16]));
        let bad = Conv2dSpec::new(3, 2, 1).stride(1).padding(2);
        assert!(bad.transposed_output_extent(2, 2).is_err());
    }

    #[test]
    fn transposed_forward_is_conv_input_gradient() {
        let mut rng = crate::rng_from_seed(6);
        // conv 2→3 channels, k3 s2 p1 on 7×7 gives 4×4
        let conv = Conv2dSpec::new(2, 3, 3).stride(2).padding(1);
        let w = Tensor::<f32>::uniform(&conv.weight_shape(), -1.0, 1.0, &mut rng);
        let x = Tensor::<f32>::uniform(&[1, 2, 7, 7], -1.0, 1.0, &mut rng);
        let u = Tensor::<f32>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);

        let mut t = Tape::new();
        let xv = t.param(x);
        let wv = t.constant(w.clone());
        let y = t.conv2d(xv, wv, None, &conv).unwrap();
        let uv = t.constant(u.clone());
        let p = t.mul(y, uv).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        let grad_x = t.grad(xv).unwrap().clone();

        // same weights read as [in=3, out=2, k, k]
        let tr = Conv2dSpec::new(3, 2, 3).stride(2).padding(1);
        let mut t2 = Tape::new();
        let uv = t2.constant(u);
        let wv = t2.constant(w);
        // (4−1)·2 − 2 + 3 = 7
        let z = t2.conv_transpose2d(uv, wv, &tr).unwrap();
        assert_eq!(t2.shape(z), &[1, 2, 7, 7]);
        assert!(t2.value(z).max_abs_diff(&grad_x) < 1e-5);
    }
}
