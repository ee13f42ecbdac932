use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Result};
use crate::tape::{Branch, Op};
use crate::{Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Spatial mean per channel: N×C×H×W → N×C×1×1.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        let inv = T::ONE / T::from_usize(hw);
        let data = xv.data().chunks(hw).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::from_vec(&[n, c, 1, 1], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// Spatial max per channel. The gradient goes to the first maximum in
    /// row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        if let Some(b) = self.next_pinned() {
            let xv = self.value(x);
            let argmax = pinned_argmax(b, n * c);
            let data = argmax.iter().map(|&a| xv.data()[a]).collect();
            let value = Tensor::from_vec(&[n, c, 1, 1], data)?;
            return Ok(self.push(value, Op::GlobalMaxPool { x, argmax }));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for (nc, ch) in xv.data().chunks(hw).enumerate() {
            let mut best = 0;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            data.push(ch[best]);
            argmax.push(nc * hw + best);
        }
        let value = Tensor::from_vec(&[n, c, 1, 1], data)?;
        Ok(self.push(value, Op::GlobalMaxPool { x, argmax }))
    }

    /// Sliding-window max with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        ensure!(
            kernel > 0 && stride > 0 && padding < kernel && h + 2 * padding >= kernel && w + 2 * padding >= kernel,
            shape_err!("max pool k={kernel} s={stride} p={padding} does not fit {:?}", xv.shape())
        );
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        if let Some(b) = self.next_pinned() {
            let xv = self.value(x);
            let argmax = pinned_argmax(b, n * c * oh * ow);
            let data = argmax.iter().map(|&a| xv.data()[a]).collect();
            let value = Tensor::from_vec(&[n, c, oh, ow], data)?;
            return Ok(self.push(value, Op::MaxPool2d { x, argmax }));
        }
        let xv = self.value(x);
        let mut data = vec![T::ZERO; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<usize> = None;
                    for i in 0..kernel {
                        let iy = (oy * stride + i) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..kernel {
                            let ix = (ox * stride + j) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best.map_or(true, |b| xv.data()[idx] > xv.data()[b]) {
                                best = Some(idx);
                            }
                        }
                    }
                    let best = best.expect("padding < kernel keeps one tap inside");
                    let o = (nc * oh + oy) * ow + ox;
                    data[o] = xv.data()[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, oh, ow], data)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }))
    }
}

fn pinned_argmax(b: Branch, len: usize) -> Vec<usize> {
    let Branch::Argmax(a) = b else { panic!("pinned tape expected a max-pool argmax") };
    assert_eq!(a.len(), len, "pinned argmax has the wrong size");
    a
}
