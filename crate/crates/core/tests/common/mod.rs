//! Loop-level reference implementations used as oracles.
#![allow(dead_code)]

pub struct Nchw {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Nchw {
    pub fn from_tensor(t: &canet_core::Tensor<f64>) -> Self {
        let (n, c, h, w) = t.dims4().unwrap();
        Self { n, c, h, w, data: t.data().to_vec() }
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }
}

/// Direct convolution, square kernel, symmetric padding.
pub fn conv(x: &Nchw, w: &[f64], cout: usize, k: usize, stride: usize, pad: usize, groups: usize, bias: Option<&[f64]>) -> Nchw {
    let cin_g = x.c / groups;
    let cout_g = cout / groups;
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; x.n * cout * oh * ow];
    for n in 0..x.n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin_g {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let wv = w[((co * cin_g + ci) * k + i) * k + j];
                                s += wv * x.at(n, g * cin_g + ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[((n * cout + co) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    Nchw { n: x.n, c: cout, h: oh, w: ow, data: out }
}

/// Transposed convolution, weight laid out `cin × cout × k × k`.
pub fn conv_transpose(x: &Nchw, w: &[f64], cout: usize, k: usize, stride: usize) -> Nchw {
    let oh = (x.h - 1) * stride + k;
    let ow = (x.w - 1) * stride + k;
    let mut out = vec![0.0; x.n * cout * oh * ow];
    for n in 0..x.n {
        for ci in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let v = x.at(n, ci, y, xx);
                    for co in 0..cout {
                        for i in 0..k {
                            for j in 0..k {
                                let o = ((n * cout + co) * oh + y * stride + i) * ow + xx * stride + j;
                                out[o] += v * w[((ci * cout + co) * k + i) * k + j];
                            }
                        }
                    }
                }
            }
        }
    }
    Nchw { n: x.n, c: cout, h: oh, w: ow, data: out }
}

/// Train-mode batch norm with biased batch variance.
pub fn bn_train(x: &Nchw, gamma: &[f64], beta: &[f64], eps: f64) -> Nchw {
    let hw = x.h * x.w;
    let m = (x.n * hw) as f64;
    let mut out = x.data.clone();
    for c in 0..x.c {
        let vals: Vec<f64> = (0..x.n).flat_map(|n| (0..hw).map(move |p| (n, p))).map(|(n, p)| x.data[(n * x.c + c) * hw + p]).collect();
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        for n in 0..x.n {
            for p in 0..hw {
                let i = (n * x.c + c) * hw + p;
                out[i] = gamma[c] * (x.data[i] - mean) / (var + eps).sqrt() + beta[c];
            }
        }
    }
    Nchw { data: out, ..*x }
}

pub fn bn_eval(x: &Nchw, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Nchw {
    let hw = x.h * x.w;
    let mut out = x.data.clone();
    for (i, v) in out.iter_mut().enumerate() {
        let c = (i / hw) % x.c;
        *v = gamma[c] * (*v - mean[c]) / (var[c] + eps).sqrt() + beta[c];
    }
    Nchw { data: out, ..*x }
}

pub fn relu(x: Nchw) -> Nchw {
    Nchw { data: x.data.iter().map(|v| v.max(0.0)).collect(), ..x }
}

pub fn relu6(x: Nchw) -> Nchw {
    Nchw { data: x.data.iter().map(|v| v.clamp(0.0, 6.0)).collect(), ..x }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn concat(a: &Nchw, b: &Nchw) -> Nchw {
    let mut data = Vec::new();
    for n in 0..a.n {
        data.extend_from_slice(&a.data[n * a.c * a.h * a.w..(n + 1) * a.c * a.h * a.w]);
        data.extend_from_slice(&b.data[n * b.c * b.h * b.w..(n + 1) * b.c * b.h * b.w]);
    }
    Nchw { n: a.n, c: a.c + b.c, h: a.h, w: a.w, data }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
