use super::{Gesture, KinematicsVector, Skill, Task};
use crate::error::{Error, Result};
use crate::optflow::FrameGray;

/// One annotated gesture: frames `start..=end` (0-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub gesture: Gesture,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A recorded (or generated) demonstration: video, kinematics and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub task: Task,
    pub skill: Skill,
    pub frames: Vec<FrameGray>,
    pub kinematics: Vec<KinematicsVector>,
    pub transcript: Vec<Segment>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.kinematics.len() {
            return Err(Error::contract(format!(
                "trial {}: {} frames but {} kinematics rows",
                self.trial_id,
                self.frames.len(),
                self.kinematics.len()
            )));
        }
        let mut last_end: Option<usize> = None;
        for s in &self.transcript {
            if s.start > s.end || s.end >= self.frames.len() {
                return Err(Error::contract(format!(
                    "trial {}: segment {}..={} outside {} frames",
                    self.trial_id,
                    s.start,
                    s.end,
                    self.frames.len()
                )));
            }
            if last_end.is_some_and(|e| s.start <= e) {
                return Err(Error::contract(format!(
                    "trial {}: segment starting at {} overlaps its predecessor",
                    self.trial_id, s.start
                )));
            }
            last_end = Some(s.end);
        }
        Ok(())
    }
}
