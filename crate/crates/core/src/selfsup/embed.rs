use rayon::prelude::*;

use crate::dataio::{Gesture, GestureWindow, Skill, Task};
use crate::error::Result;
use crate::model::{encode, EncoderParams};
use crate::numerics::Tensor;

/// Representations of a window set with row-aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    /// `[n_windows, d]`.
    pub matrix: Tensor,
    pub gestures: Vec<Gesture>,
    pub skills: Vec<Skill>,
    pub trial_ids: Vec<String>,
    pub tasks: Vec<Task>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.gestures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gestures.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.matrix.data().chunks_exact(self.dim().max(1))
    }
}

/// Encodes every window with a frozen encoder; row `i` belongs to window `i`.
pub fn embed_dataset(windows: &[GestureWindow], encoder: &EncoderParams) -> Result<Embeddings> {
    let reps = windows
        .par_iter()
        .map(|w| encode(&w.flows, encoder))
        .collect::<Result<Vec<_>>>()?;
    let d = encoder.embed_dim();
    let mut data = Vec::with_capacity(windows.len() * d);
    for r in &reps {
        data.extend_from_slice(r.data());
    }
    Ok(Embeddings {
        matrix: Tensor::from_vec(&[windows.len(), d], data)?,
        gestures: windows.iter().map(|w| w.gesture).collect(),
        skills: windows.iter().map(|w| w.skill).collect(),
        trial_ids: windows.iter().map(|w| w.trial_id.clone()).collect(),
        tasks: windows.iter().map(|w| w.task).collect(),
    })
}
