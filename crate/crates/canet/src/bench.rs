use std::time::Instant;

use canet_core::analysis::TimingReport;
use canet_core::model::Canet;
use canet_core::{rng_from_seed, Tensor};

use crate::error::Result;

/// Iterations timed by default, after [`DEFAULT_WARMUP`] untimed ones.
pub const DEFAULT_ITERS: usize = 100;
pub const DEFAULT_WARMUP: usize = 3;

/// Times eval-mode forward passes of one random `batch×3×h×w` input.
///
/// A model without running statistics gets identity ones (mean 0, var 1).
pub fn bench_inference(model: &Canet<f32>, input: (usize, usize), batch: usize, iters: usize, warmup: usize, seed: u64) -> Result<TimingReport> {
    let mut model = model.clone();
    if !model.params.has_running_stats() {
        model.params.init_identity_stats();
    }
    let x = Tensor::uniform(&[batch, 3, input.0, input.1], -1.0, 1.0, &mut rng_from_seed(seed));
    for _ in 0..warmup {
        std::hint::black_box(model.logits(&x)?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        std::hint::black_box(model.logits(&x)?);
        samples.push(t0.elapsed().as_secs_f64());
    }
    Ok(TimingReport::from_samples(&samples, warmup)?)
}
