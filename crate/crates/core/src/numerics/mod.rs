//! Dense f32 tensors and the handful of differentiable layers the encoder and
//! decoder are built from.
//!
//! Every forward op has a paired backward op that returns exact gradients;
//! [`gradcheck`] compares them against central finite differences.

mod adam;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod params;
mod relu;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use conv::{conv2d, conv2d_backward, conv_output_extent, ConvGrads, ConvSpec};
pub use linear::{fully_connected, fully_connected_backward, LinearGrads};
pub use loss::mse_loss;
pub use params::{Param, ParamSet};
pub use relu::{relu, relu_backward};
pub use tensor::Tensor;
