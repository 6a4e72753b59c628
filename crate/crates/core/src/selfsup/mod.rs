//! Self-supervised training of the encoder/decoder pair on (flow stack,
//! kinematics) windows, and embedding of windows with a frozen encoder.

mod embed;
mod train;

pub use embed::{embed_dataset, Embeddings};
pub use train::{train_encoder_decoder, train_from, LossCurve, TrainConfig, TrainOutput};
