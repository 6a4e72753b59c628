//! Dense two-frame optical flow by Farnebäck polynomial expansion.

mod farneback;
pub(crate) mod frame;
mod poly;
mod stack;

pub use farneback::{farneback_flow, FarnebackParams};
pub use frame::{FlowField, FrameGray};
pub use poly::{poly_expansion, PolyCoeffs};
pub use stack::{flow_stack, standard_pairs};
