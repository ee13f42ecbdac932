//! Layer primitives recorded on a [`Tape`](crate::Tape): convolutions,
//! batch normalization, activations, pooling, fully connected, bilinear
//! upsampling and the weighted cross-entropy loss.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod upsample;

pub use conv::{depthwise_separable_conv, Conv2dSpec};
pub use loss::weighted_cross_entropy;
pub use norm::{batch_norm, BatchNormState};

/// Whether batch normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Pointwise non-linearity applied after a conv/BN pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Relu6,
}

impl Activation {
    pub fn apply<T: crate::Scalar>(self, tape: &mut crate::Tape<T>, x: crate::Var) -> crate::Var {
        match self {
            Activation::None => x,
            Activation::Relu => tape.relu(x),
            Activation::Relu6 => tape.relu6(x),
        }
    }
}
