//! Self-supervised representation learning for surgical gesture analysis.
//!
//! Optical-flow windows of surgical video are encoded by a small convolutional
//! network that is trained to decode the matching robot kinematics. The frozen
//! encoder then feeds gradient-boosted classifiers (gesture, skill, transfer)
//! and a cluster-structure analysis.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense tensors, conv / fully-connected / ReLU layers with exact
//!   backward passes, MSE loss and Adam.
//! * [`optflow`]: Farnebäck polynomial-expansion optical flow.
//! * [`dataio`]: synthetic trial generator, JIGSAWS-format ingestion, gesture
//!   windowing and kinematics normalization.
//! * [`model`]: encoder / decoder and checkpoint persistence.
//! * [`selfsup`]: the flow-to-kinematics training loop and dataset embedding.
//! * [`downstream`]: exact greedy gradient boosting and the split experiments.
//! * [`analysis`]: PCA projection, silhouette scoring and report emission.
//! * [`pipeline`]: config-driven, resumable stages used by the `sgem` CLI.

pub mod analysis;
pub mod archive;
pub mod dataio;
pub mod downstream;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optflow;
pub mod pipeline;
pub mod selfsup;
pub mod selftest;
pub mod util;

pub use error::{Error, Result};
pub use numerics::{ParamSet, Tensor};
