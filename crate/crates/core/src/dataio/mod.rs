//! Trials, gesture windows and kinematics normalization.
//!
//! Trials come either from the synthetic generator ([`synth`]) or from a
//! JIGSAWS-format directory ([`jigsaws`]). [`window_and_sample`] cuts every
//! gesture segment into non-overlapping 50-frame blocks, keeps every other
//! frame (25 samples, about 1.67 s at 30 Hz) and attaches the flow stack and
//! kinematics targets of the sampled frames.

pub mod frames;
pub mod jigsaws;
mod kinematics;
mod labels;
mod normalize;
pub mod synth;
mod trial;
mod window;

pub use kinematics::{KinematicsVector, Manipulator, BLOCK_DIM, KIN_DIM};
pub use labels::{Gesture, Skill, Task};
pub use normalize::{apply_normalizer, fit_normalizer, Normalizer};
pub use synth::{
    generate_synthetic_dataset, generate_synthetic_trial, DatasetManifest, TrialEntry,
};
pub use trial::{Segment, Trial};
pub use window::{window_and_sample, GestureWindow, WindowConfig, WindowReport};

/// Video and kinematics sampling rate.
pub const FRAME_RATE_HZ: f64 = 30.0;
