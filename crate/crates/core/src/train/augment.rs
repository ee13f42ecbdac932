use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{ensure, shape_err, Result};
use crate::Tensor;

/// Per-channel `(x − mean)/std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.0; 3], std: [1.0; 3] }
    }
}

impl Normalization {
    /// Channel statistics over a set of 3×H×W images.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let mut s = [0.0f64; 3];
        let mut ss = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            let hw = img.numel() / 3;
            for c in 0..3 {
                for &v in &img.data()[c * hw..(c + 1) * hw] {
                    s[c] += v as f64;
                    ss[c] += (v as f64) * (v as f64);
                }
            }
            n += hw;
        }
        if n == 0 {
            return Self::default();
        }
        let mut out = Self::default();
        for c in 0..3 {
            let m = s[c] / n as f64;
            out.mean[c] = m;
            out.std[c] = libm::sqrt((ss[c] / n as f64 - m * m).max(0.0)).max(1e-6);
        }
        out
    }

    pub fn apply(&self, image: &Tensor<f32>) -> Tensor<f32> {
        let hw = image.numel() / 3;
        let mut out = image.clone();
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in &mut out.data_mut()[c * hw..(c + 1) * hw] {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        out
    }
}

/// Random flip, scale, crop/pad and normalization settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip: bool,
    pub scale_range: (f64, f64),
    /// Output extent `(h, w)`.
    pub crop: (usize, usize),
    pub ignore_label: u8,
}

fn hw_of(image: &Tensor<f32>) -> Result<(usize, usize)> {
    match image.shape() {
        [3, h, w] => Ok((*h, *w)),
        s => Err(shape_err!("expected a 3×H×W image, got {s:?}")),
    }
}

/// Mirrors a 3×H×W image and its H×W label map left to right.
pub fn hflip(image: &Tensor<f32>, label: &[u8]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let (h, w) = hw_of(image)?;
    ensure!(label.len() == h * w, shape_err!("label has {} pixels, image {h}x{w}", label.len()));
    let mut img = image.clone();
    let mut lab = label.to_vec();
    for y in 0..h {
        lab[y * w..(y + 1) * w].reverse();
        for c in 0..3 {
            img.data_mut()[(c * h + y) * w..(c * h + y + 1) * w].reverse();
        }
    }
    Ok((img, lab))
}

/// Half-pixel bilinear resize of a 3×H×W image.
pub fn resize_bilinear(image: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    let (h, w) = hw_of(image)?;
    let tap = |o: usize, out: usize, inp: usize| {
        let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (src as usize).min(inp - 1);
        (i0, (i0 + 1).min(inp - 1), (src - i0 as f64).min(1.0))
    };
    let ty: Vec<_> = (0..oh).map(|o| tap(o, oh, h)).collect();
    let tx: Vec<_> = (0..ow).map(|o| tap(o, ow, w)).collect();
    let mut out = Tensor::zeros(&[3, oh, ow]);
    for c in 0..3 {
        let src = &image.data()[c * h * w..(c + 1) * h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = (1.0 - fx) * src[y0 * w + x0] as f64 + fx * src[y0 * w + x1] as f64;
                let bot = (1.0 - fx) * src[y1 * w + x0] as f64 + fx * src[y1 * w + x1] as f64;
                out.data_mut()[(c * oh + y) * ow + x] = ((1.0 - fy) * top + fy * bot) as f32;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour resize of an H×W label map; never invents values.
pub fn resize_nearest(label: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    let mut out = vec![0u8; oh * ow];
    for y in 0..oh {
        let sy = src(y, oh, h);
        for x in 0..ow {
            out[y * ow + x] = label[sy * w + src(x, ow, w)];
        }
    }
    out
}

/// Flip, rescale, crop or pad, then normalize one raw sample.
///
/// Padding fills the raw image with 0 and the label with the ignore label.
pub fn augment(
    image: &Tensor<f32>,
    label: &[u8],
    cfg: &AugmentConfig,
    norm: &Normalization,
    rng: &mut crate::Rng,
) -> Result<(Tensor<f32>, Vec<u8>)> {
    let (img, lab) = augment_raw(image, label, cfg, rng)?;
    Ok((norm.apply(&img), lab))
}

/// [`augment`] without the final normalization.
pub fn augment_raw(image: &Tensor<f32>, label: &[u8], cfg: &AugmentConfig, rng: &mut crate::Rng) -> Result<(Tensor<f32>, Vec<u8>)> {
    let (h, w) = hw_of(image)?;
    ensure!(label.len() == h * w, shape_err!("label has {} pixels, image {h}x{w}", label.len()));
    let (mut img, mut lab) = if cfg.flip && rng.random_bool(0.5) {
        hflip(image, label)?
    } else {
        (image.clone(), label.to_vec())
    };
    let (lo, hi) = cfg.scale_range;
    let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let (sh, sw) = (
        libm::round(h as f64 * s).max(1.0) as usize,
        libm::round(w as f64 * s).max(1.0) as usize,
    );
    if (sh, sw) != (h, w) {
        img = resize_bilinear(&img, sh, sw)?;
        lab = resize_nearest(&lab, h, w, sh, sw);
    }
    let (ch, cw) = cfg.crop;
    let oy = if sh > ch { rng.random_range(0..=sh - ch) } else { 0 };
    let ox = if sw > cw { rng.random_range(0..=sw - cw) } else { 0 };
    let mut out = Tensor::zeros(&[3, ch, cw]);
    let mut out_lab = vec![cfg.ignore_label; ch * cw];
    for y in 0..ch.min(sh) {
        for x in 0..cw.min(sw) {
            let (syy, sxx) = (y + oy, x + ox);
            out_lab[y * cw + x] = lab[syy * sw + sxx];
            for c in 0..3 {
                out.data_mut()[(c * ch + y) * cw + x] = img.data()[(c * sh + syy) * sw + sxx];
            }
        }
    }
    Ok((out, out_lab))
}
