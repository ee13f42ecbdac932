use alloc::vec::Vec;

use crate::error::{ensure, Error, Result};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

/// Source taps `(i0, i1, weight of i1)` for each output coordinate under
/// half-pixel (align-corners = false) mapping.
fn taps(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn bilinear_backward<T: Scalar>(in_shape: &[usize], factor: usize, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = Tensor::zeros(in_shape);
    for nc in 0..in_shape[0] * in_shape[1] {
        let src = &g.data()[nc * oh * ow..(nc + 1) * oh * ow];
        let dst = &mut dx.data_mut()[nc * h * w..(nc + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, hy) = (T::from_f64(ly), T::from_f64(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, hx) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                let gv = src[oy * ow + ox];
                dst[y0 * w + x0] += hy * hx * gv;
                dst[y0 * w + x1] += hy * lx * gv;
                dst[y1 * w + x0] += ly * hx * gv;
                dst[y1 * w + x1] += ly * lx * gv;
            }
        }
    }
    Ok(dx)
}

impl<T: Scalar> Tape<T> {
    /// Bilinear upsampling by an integer factor (align-corners = false).
    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        ensure!(factor >= 1, Error::Contract("upsample factor must be ≥ 1".into()));
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        if factor == 1 {
            let value = xv.clone();
            return Ok(self.push(value, Op::Upsample { x, factor }));
        }
        let (ty, tx) = (taps(h, factor), taps(w, factor));
        let (oh, ow) = (h * factor, w * factor);
        let mut y = Tensor::zeros(&[n, c, oh, ow]);
        for nc in 0..n * c {
            let src = &xv.data()[nc * h * w..(nc + 1) * h * w];
            let dst = &mut y.data_mut()[nc * oh * ow..(nc + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (ly, hy) = (T::from_f64(ly), T::from_f64(1.0 - ly));
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let (lx, hx) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                    let top = hx * src[y0 * w + x0] + lx * src[y0 * w + x1];
                    let bottom = hx * src[y1 * w + x0] + lx * src[y1 * w + x1];
                    dst[oy * ow + ox] = hy * top + ly * bottom;
                }
            }
        }
        Ok(self.push(y, Op::Upsample { x, factor }))
    }
}
