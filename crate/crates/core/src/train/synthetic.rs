use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::Tensor;

/// One raw synthetic image (3×H×W, roughly in [0, 1]) and its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Tensor<f32>,
    pub label: Vec<u8>,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.15, 0.1],
    [0.1, 0.25, 0.9],
    [0.15, 0.85, 0.2],
    [0.95, 0.85, 0.1],
    [0.8, 0.2, 0.85],
    [0.1, 0.85, 0.9],
];

fn class_color(class: usize) -> [f64; 3] {
    if class <= PALETTE.len() {
        return PALETTE[class - 1];
    }
    // hue wheel beyond the fixed palette
    let h = (class as f64 * 0.618_033_988_75) % 1.0 * 6.0;
    let x = 1.0 - libm::fabs(h % 2.0 - 1.0);
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.1 + 0.8 * r, 0.1 + 0.8 * g, 0.1 + 0.8 * b]
}

/// Colored rectangles and circles on a striped gray background.
///
/// Background is class 0; each shape's class fixes its color, and
/// Gaussian noise of σ = 0.1 is added to every channel. Image `i` always
/// contains class `1 + i mod (C − 1)`, so `n ≥ C − 1` covers every class.
pub fn make_synthetic_dataset(num_classes: usize, n: usize, size: (usize, usize), seed: u64) -> Result<Vec<SyntheticSample>> {
    ensure!(num_classes >= 2, Error::Config(format!("synthetic data needs at least 2 classes, got {num_classes}")));
    ensure!(num_classes < 255, Error::Config("class ids must stay below the ignore label".into()));
    let (h, w) = size;
    ensure!(h >= 4 && w >= 4, Error::Config(format!("synthetic images must be at least 4x4, got {h}x{w}")));
    let mut rng = crate::rng_from_seed(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let side = h.min(w) as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut label = vec![0u8; h * w];
        let shapes = rng.random_range(1..=2usize);
        for s in 0..shapes {
            let class = if s == 0 { 1 + i % (num_classes - 1) } else { rng.random_range(1..num_classes) };
            let cy = rng.random_range(0.2..0.8) * h as f64;
            let cx = rng.random_range(0.2..0.8) * w as f64;
            if rng.random_bool(0.5) {
                let hh = rng.random_range(0.15..0.3) * side;
                let hw = rng.random_range(0.15..0.3) * side;
                for y in 0..h {
                    for x in 0..w {
                        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                        if libm::fabs(py - cy) <= hh && libm::fabs(px - cx) <= hw {
                            label[y * w + x] = class as u8;
                        }
                    }
                }
            } else {
                let r = rng.random_range(0.15..0.3) * side;
                for y in 0..h {
                    for x in 0..w {
                        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                        if dy * dy + dx * dx <= r * r {
                            label[y * w + x] = class as u8;
                        }
                    }
                }
            }
        }
        let (fy, fx) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
        #[allow(clippy::approx_constant)] // pinned: changing it changes the dataset
        let phase = rng.random_range(0.0..6.283);
        let mut image = Tensor::zeros(&[3, h, w]);
        for y in 0..h {
            for x in 0..w {
                let k = label[y * w + x] as usize;
                let base = if k == 0 {
                    let t = 0.5 + 0.1 * libm::sin(fy * y as f64 + fx * x as f64 + phase);
                    [t, t, t]
                } else {
                    class_color(k)
                };
                for c in 0..3 {
                    image.data_mut()[(c * h + y) * w + x] = (base[c] + noise.sample(&mut rng)) as f32;
                }
            }
        }
        out.push(SyntheticSample { image, label });
    }
    Ok(out)
}

/// Pixel count of each class over a dataset, ignore label excluded.
pub fn class_histogram(samples: &[SyntheticSample], num_classes: usize) -> Vec<u64> {
    let mut hist = vec![0u64; num_classes];
    for s in samples {
        for &l in &s.label {
            if (l as usize) < num_classes {
                hist[l as usize] += 1;
            }
        }
    }
    hist
}
