use serde::{Deserialize, Serialize};

use super::{Gesture, Skill, Task, Trial, KIN_DIM};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::optflow::{flow_stack, FarnebackParams};

/// Block length and sampling stride of the windowing protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub block_frames: usize,
    pub stride: usize,
    pub flow: FarnebackParams,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            block_frames: 50,
            stride: 2,
            flow: FarnebackParams::default(),
        }
    }
}

impl WindowConfig {
    /// Number of sampled frames per window (25 with the defaults).
    pub fn samples(&self) -> usize {
        self.block_frames / self.stride
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.stride == 0 {
            problems.push("window stride must be positive".to_string());
        } else if self.block_frames < 2 || !self.block_frames.is_multiple_of(self.stride) {
            problems.push(format!(
                "block length {} must be a multiple of stride {} and at least 2",
                self.block_frames, self.stride
            ));
        }
        if let Err(Error::Validation(p)) = self.flow.validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// One training example: flows and kinematics of 25 frames sampled from a
/// single gesture segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureWindow {
    pub trial_id: String,
    pub task: Task,
    pub skill: Skill,
    pub gesture: Gesture,
    /// Absolute frame indices into the source trial.
    pub frame_indices: Vec<usize>,
    /// `[2 * samples, H, W]`.
    pub flows: Tensor,
    /// `[samples, 76]`.
    pub kinematics: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReport {
    pub windows: usize,
    /// Segments too short for a single block.
    pub skipped_segments: usize,
    /// Frames of all segments not covered by any block.
    pub discarded_frames: usize,
}

impl WindowReport {
    pub fn merge(&mut self, other: &WindowReport) {
        self.windows += other.windows;
        self.skipped_segments += other.skipped_segments;
        self.discarded_frames += other.discarded_frames;
    }
}

/// Tiles every transcript segment into non-overlapping blocks from its start,
/// samples every `stride`-th frame of each block and pairs each sampled frame
/// `i` with `i + 1` for the flow stack.
pub fn window_and_sample(
    trial: &Trial,
    config: &WindowConfig,
) -> Result<(Vec<GestureWindow>, WindowReport)> {
    trial.validate()?;
    config.validate()?;
    let block = config.block_frames;
    let samples = config.samples();
    let relative: Vec<usize> = (0..samples).map(|k| k * config.stride).collect();
    let pairs: Vec<(usize, usize)> = relative.iter().map(|&i| (i, i + 1)).collect();

    let mut report = WindowReport::default();
    let mut windows = Vec::new();
    for seg in &trial.transcript {
        let blocks = seg.len() / block;
        report.discarded_frames += seg.len() - blocks * block;
        if blocks == 0 {
            report.skipped_segments += 1;
            continue;
        }
        for b in 0..blocks {
            let start = seg.start + b * block;
            let frames = &trial.frames[start..start + block];
            let flows = flow_stack(frames, &pairs, &config.flow)?;
            let mut kin = Vec::with_capacity(samples * KIN_DIM);
            for &i in &relative {
                kin.extend_from_slice(trial.kinematics[start + i].as_slice());
            }
            windows.push(GestureWindow {
                trial_id: trial.trial_id.clone(),
                task: trial.task,
                skill: trial.skill,
                gesture: seg.gesture,
                frame_indices: relative.iter().map(|&i| start + i).collect(),
                flows,
                kinematics: Tensor::from_vec(&[samples, KIN_DIM], kin)?,
            });
        }
    }
    report.windows = windows.len();
    Ok((windows, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{KinematicsVector, Segment, FRAME_RATE_HZ};
    use crate::optflow::FrameGray;

    fn still_trial(len: usize, segments: &[(usize, usize)]) -> Trial {
        let frame =
            FrameGray::new(16, 16, (0..256).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let kinematics = (0..len)
            .map(|t| {
                let mut k = KinematicsVector::default();
                k.block_mut(crate::dataio::Manipulator::SlaveLeft)[0] = t as f32;
                k
            })
            .collect();
        Trial {
            trial_id: "t".into(),
            task: Task::SynthA,
            skill: Skill::Expert,
            frames: vec![frame; len],
            kinematics,
            transcript: segments
                .iter()
                .map(|&(start, end)| Segment {
                    start,
                    end,
                    gesture: Gesture(3),
                })
                .collect(),
        }
    }

    #[test]
    fn segment_of_120_frames_gives_two_windows() {
        let trial = still_trial(130, &[(5, 124)]);
        let (w, report) = window_and_sample(&trial, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(report.discarded_frames, 20);
        assert_eq!(w[0].frame_indices.first(), Some(&5));
        assert_eq!(w[0].frame_indices.last(), Some(&53));
        assert_eq!(w[1].frame_indices.first(), Some(&55));
        for win in &w {
            assert_eq!(win.flows.shape(), &[50, 16, 16]);
            assert_eq!(win.kinematics.shape(), &[25, 76]);
            assert!(win.frame_indices.windows(2).all(|p| p[1] == p[0] + 2));
            // Kinematics rows come from the sampled frames.
            for (r, &i) in win.frame_indices.iter().enumerate() {
                assert_eq!(win.kinematics.data()[r * 76 + 2 * 19], i as f32);
            }
        }
    }

    #[test]
    fn short_segment_is_skipped_and_counted() {
        let trial = still_trial(100, &[(0, 48), (49, 98)]);
        let (w, report) = window_and_sample(&trial, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(report.skipped_segments, 1);
        assert_eq!(report.discarded_frames, 49);
        assert_eq!(w[0].frame_indices[0], 49);
    }

    #[test]
    fn block_spans_about_1_67_seconds() {
        let span = WindowConfig::default().block_frames as f64 / FRAME_RATE_HZ;
        assert!((span - 1.6667).abs() < 1e-3);
    }

    #[test]
    fn windows_stay_inside_their_segment() {
        let trial = still_trial(400, &[(0, 99), (100, 260), (261, 399)]);
        let (w, _) = window_and_sample(&trial, &WindowConfig::default()).unwrap();
        for win in &w {
            let inside = trial
                .transcript
                .iter()
                .any(|s| s.start <= win.frame_indices[0] && win.frame_indices[24] + 1 <= s.end);
            assert!(inside);
        }
        assert_eq!(w.len(), 2 + 3 + 2);
    }
}
