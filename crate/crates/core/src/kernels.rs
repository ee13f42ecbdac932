//! Dense loops behind the tape primitives: matrix products and the
//! im2col/col2im convolution lowering.

use alloc::vec;
use alloc::vec::Vec;

use crate::Scalar;

const K_BLOCK: usize = 256;

#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 16;

fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += ac[l] * bc[l];
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn for_each_row<T: Scalar>(
    c: &mut [T],
    n: usize,
    work: usize,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    #[cfg(feature = "parallel")]
    if work >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        use rayon::prelude::*;
        c.par_chunks_mut(n).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = work;
    for (i, row) in c.chunks_mut(n).enumerate() {
        f(i, row);
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for_each_row(&mut c[..m * n], n, m * n * k, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        let mut p0 = 0;
        while p0 < k {
            let pend = (p0 + K_BLOCK).min(k);
            for p in p0..pend {
                let av = arow[p];
                if av != T::ZERO {
                    axpy(row, av, &b[p * n..(p + 1) * n]);
                }
            }
            p0 = pend;
        }
    });
}

/// `c[m×n] += aᵀ · b` with `a` stored as `k×m`.
pub fn gemm_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for_each_row(&mut c[..m * n], n, m * n * k, |i, row| {
        for p in 0..k {
            let av = a[p * m + i];
            if av != T::ZERO {
                axpy(row, av, &b[p * n..(p + 1) * n]);
            }
        }
    });
}

/// `c[m×n] += a · bᵀ` with `b` stored as `n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for_each_row(&mut c[..m * n], n, m * n * k, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in row.iter_mut().enumerate() {
            *cv += dot(arow, &b[j * k..(j + 1) * k]);
        }
    });
}

/// Geometry of a (possibly grouped) 2-D cross-correlation.
///
/// Weights are `cout × cin/groups × kh × kw`. For a transposed convolution
/// this describes the adjoint forward convolution: `cin`/`h`/`w` are the
/// transposed op's output and `cout`/`oh`/`ow` its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn im2col<T: Scalar>(&self, x: &[T], g: usize, col: &mut [T]) {
        let (ohw, hw) = (self.oh * self.ow, self.h * self.w);
        let cols = self.col_cols();
        for c in 0..self.cin_g() {
            let ch = g * self.cin_g() + c;
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (c * self.kh + i) * self.kw + j;
                    let dst = &mut col[r * cols..(r + 1) * cols];
                    for b in 0..self.n {
                        let src = &x[(b * self.cin + ch) * hw..(b * self.cin + ch + 1) * hw];
                        for oy in 0..self.oh {
                            let out = &mut dst[b * ohw + oy * self.ow..b * ohw + (oy + 1) * self.ow];
                            let iy = (oy * self.sh + i) as isize - self.ph as isize;
                            if iy < 0 || iy >= self.h as isize {
                                out.fill(T::ZERO);
                                continue;
                            }
                            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
                            for (ox, o) in out.iter_mut().enumerate() {
                                let ix = (ox * self.sw + j) as isize - self.pw as isize;
                                *o = if ix >= 0 && ix < self.w as isize {
                                    srow[ix as usize]
                                } else {
                                    T::ZERO
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], g: usize, x: &mut [T]) {
        let (ohw, hw) = (self.oh * self.ow, self.h * self.w);
        let cols = self.col_cols();
        for c in 0..self.cin_g() {
            let ch = g * self.cin_g() + c;
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (c * self.kh + i) * self.kw + j;
                    let src = &col[r * cols..(r + 1) * cols];
                    for b in 0..self.n {
                        let dst = &mut x[(b * self.cin + ch) * hw..(b * self.cin + ch + 1) * hw];
                        for oy in 0..self.oh {
                            let iy = (oy * self.sh + i) as isize - self.ph as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let drow = &mut dst[iy as usize * self.w..(iy as usize + 1) * self.w];
                            let srow = &src[b * ohw + oy * self.ow..b * ohw + (oy + 1) * self.ow];
                            for (ox, &v) in srow.iter().enumerate() {
                                let ix = (ox * self.sw + j) as isize - self.pw as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    drow[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// `[n][cout][ohw]` → `[cout][n·ohw]`
    fn to_channel_major<T: Scalar>(&self, y: &[T]) -> Vec<T> {
        let ohw = self.oh * self.ow;
        let mut out = vec![T::ZERO; y.len()];
        for b in 0..self.n {
            for c in 0..self.cout {
                out[c * self.n * ohw + b * ohw..c * self.n * ohw + (b + 1) * ohw]
                    .copy_from_slice(&y[(b * self.cout + c) * ohw..(b * self.cout + c + 1) * ohw]);
            }
        }
        out
    }

    fn from_channel_major<T: Scalar>(&self, ycm: &[T]) -> Vec<T> {
        let ohw = self.oh * self.ow;
        let mut out = vec![T::ZERO; ycm.len()];
        for b in 0..self.n {
            for c in 0..self.cout {
                out[(b * self.cout + c) * ohw..(b * self.cout + c + 1) * ohw]
                    .copy_from_slice(&ycm[c * self.n * ohw + b * ohw..c * self.n * ohw + (b + 1) * ohw]);
            }
        }
        out
    }
}

/// Forward cross-correlation; returns `n × cout × oh × ow`.
pub fn conv_forward<T: Scalar>(geo: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (rows, cols) = (geo.col_rows(), geo.col_cols());
    let mut col = vec![T::ZERO; rows * cols];
    let mut ycm = vec![T::ZERO; geo.cout * cols];
    let cog = geo.cout_g();
    for g in 0..geo.groups {
        geo.im2col(x, g, &mut col);
        gemm_nn(
            cog,
            cols,
            rows,
            &w[g * cog * rows..(g + 1) * cog * rows],
            &col,
            &mut ycm[g * cog * cols..(g + 1) * cog * cols],
        );
    }
    if let Some(bias) = bias {
        for (c, &bv) in bias.iter().enumerate() {
            for v in &mut ycm[c * cols..(c + 1) * cols] {
                *v += bv;
            }
        }
    }
    geo.from_channel_major(&ycm)
}

/// Gradient of the convolution with respect to its input (col2im of `Wᵀ·dY`).
pub fn conv_backward_input<T: Scalar>(geo: &ConvGeom, dy: &[T], w: &[T]) -> Vec<T> {
    let (rows, cols) = (geo.col_rows(), geo.col_cols());
    let dycm = geo.to_channel_major(dy);
    let mut dcol = vec![T::ZERO; rows * cols];
    let mut dx = vec![T::ZERO; geo.n * geo.cin * geo.h * geo.w];
    let cog = geo.cout_g();
    for g in 0..geo.groups {
        dcol.fill(T::ZERO);
        gemm_tn(
            rows,
            cols,
            cog,
            &w[g * cog * rows..(g + 1) * cog * rows],
            &dycm[g * cog * cols..(g + 1) * cog * cols],
            &mut dcol,
        );
        geo.col2im(&dcol, g, &mut dx);
    }
    dx
}

/// Gradient of the convolution with respect to its weights.
pub fn conv_backward_weight<T: Scalar>(geo: &ConvGeom, x: &[T], dy: &[T]) -> Vec<T> {
    let (rows, cols) = (geo.col_rows(), geo.col_cols());
    let dycm = geo.to_channel_major(dy);
    let mut col = vec![T::ZERO; rows * cols];
    let cog = geo.cout_g();
    let mut dw = vec![T::ZERO; geo.cout * rows];
    for g in 0..geo.groups {
        geo.im2col(x, g, &mut col);
        gemm_nt(
            cog,
            rows,
            cols,
            &dycm[g * cog * cols..(g + 1) * cog * cols],
            &col,
            &mut dw[g * cog * rows..(g + 1) * cog * rows],
        );
    }
    dw
}

/// Per-channel sum of an `n × c × hw` buffer.
pub fn channel_sums<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
    }
    out
}
