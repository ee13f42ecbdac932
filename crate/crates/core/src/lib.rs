//! Cross-attention two-branch semantic segmentation, from the tensor up.
//!
//! The crate is `no_std` (it needs `alloc`). It contains a dense tensor with
//! a dynamic reverse-mode tape, the layer primitives, the feature cross
//! attention fusion block, the full network, training machinery, metrics,
//! an analytic parameter/FLOP counter and a finite-difference gradient
//! checker. File formats, timing and the command line live in the `canet`
//! crate.
//!
//! Layout convention is row-major NCHW everywhere.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod fca;
pub mod gradcheck;
mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{Branches, Tape, Var};
pub use tensor::Tensor;

/// Seeded generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
