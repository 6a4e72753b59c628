//! Flow-stack encoder, kinematics decoder and checkpoints.
//!
//! The encoder is four 3x3 stride-2 convolutions with ReLU, a global average
//! pool and a linear projection to the representation. The decoder is one
//! hidden fully connected layer with ReLU and a linear output that reshapes to
//! `[25, 76]` normalized kinematics rows. Parameters live in [`ParamSet`]s
//! whose names are listed by [`EncoderParams::layer_names`] and
//! [`DecoderParams::layer_names`].

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::{
    composite_grad_check, decode, decode_backward, decode_traced, encode, encode_backward,
    encode_traced, init_params, init_params_with, loss_and_grads, Architecture, DecoderParams,
    DecoderTrace, EncoderParams, EncoderTrace, Gradients,
};

pub const EMBED_DIM: usize = 128;
pub const FLOW_CHANNELS: usize = 50;
pub const INPUT_EXTENT: usize = 64;
pub const DECODER_HIDDEN: usize = 512;
pub const SAMPLES_PER_WINDOW: usize = 25;
