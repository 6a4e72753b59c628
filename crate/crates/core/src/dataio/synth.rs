//! Synthetic surgical trials.
//!
//! Each synthetic task has a vocabulary of four motion primitives (disjoint
//! across tasks). A trial is a sequence of 60-120 frame segments, each a
//! primitive executed by both tools in their own half of a 64x64 view. Tool
//! tips are rendered as Gaussian blobs on a dark background and the
//! kinematics are derived analytically from the same trajectories. Skill only
//! changes the amplitude of a smoothed tremor added to the tool positions.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Gesture, KinematicsVector, Manipulator, Segment, Skill, Task, Trial, FRAME_RATE_HZ};
use crate::error::{Error, Result};
use crate::optflow::FrameGray;
use crate::util::{derive_seed, seeded_rng};

pub const FRAME_SIZE: usize = 64;
pub const MIN_DURATION: usize = 150;
pub const MIN_SEGMENT_FRAMES: usize = 60;
pub const MAX_SEGMENT_FRAMES: usize = 120;

pub const EXPERT_TREMOR_PX: f64 = 0.2;
pub const BEGINNER_TREMOR_PX: f64 = 1.5;
/// Standard deviation (frames) of the Gaussian that smooths the tremor noise.
const TREMOR_SMOOTHING_FRAMES: f64 = 1.0;

const METERS_PER_PIXEL: f64 = 1e-3;
const TOOL_DEPTH_M: f64 = 0.05;
const MASTER_SCALE: f64 = 1.5;
const BLOB_SIGMA_PX: f64 = 2.0;
const BLOB_AMPLITUDE: f64 = 0.9;
const BACKGROUND: f64 = 0.05;
/// Below this realized speed (px/frame) the heading is held.
const HEADING_MIN_SPEED: f64 = 1.0;

/// Centers of the left and right tool work areas, in pixels (x, y).
const TOOL_CENTERS: [(f64, f64); 2] = [(18.0, 32.0), (46.0, 32.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Primitive {
    Reach,
    Orient,
    Pull,
    Transfer,
    Lift,
    Loop,
    Shake,
    Pinch,
    Zigzag,
    Spiral,
    Push,
    Sweep,
}

/// Smooth 0 -> 1 profile with zero velocity at both ends.
fn ease(s: f64) -> f64 {
    s - (2.0 * PI * s).sin() / (2.0 * PI)
}

fn triangle(phase: f64) -> f64 {
    // Starts at 0, peaks at 0.25, period 1.
    let p = phase.rem_euclid(1.0);
    if p < 0.25 {
        4.0 * p
    } else if p < 0.75 {
        2.0 - 4.0 * p
    } else {
        4.0 * p - 4.0
    }
}

impl Primitive {
    /// Planned displacement (px) from the segment start after `t` of `len`
    /// frames. `dir` holds per-axis signs pointing toward the work-area center.
    fn offset(self, t: usize, len: usize, dir: (f64, f64)) -> (f64, f64) {
        let s = t as f64 / len as f64;
        let secs = t as f64 / FRAME_RATE_HZ;
        let (sx, sy) = dir;
        let e = ease(s);
        match self {
            Primitive::Reach => (sx * 16.0 * e, 0.0),
            Primitive::Orient => {
                let r = 8.0;
                let phi0 = (-sy).atan2(0.0);
                let phi = phi0 + sx * 1.5 * PI * e;
                (r * phi.cos(), sy * r + r * phi.sin())
            }
            Primitive::Pull => (0.0, sy * 5.0 * (2.0 * PI * 1.5 * secs).sin()),
            Primitive::Transfer => {
                let d = 16.0 / 2f64.sqrt() * e;
                (sx * d, sy * d)
            }
            Primitive::Lift => (0.0, sy * 16.0 * e),
            Primitive::Loop => {
                let r = 4.0;
                let phi0 = 0f64.atan2(-sx);
                let phi = phi0 - sx * 2.0 * PI * e;
                (sx * r + r * phi.cos(), r * phi.sin())
            }
            Primitive::Shake => (sx * 2.0 * (2.0 * PI * 3.0 * secs).sin(), 0.0),
            Primitive::Pinch => (sx * 3.0 * s, -sy * 3.0 * s),
            Primitive::Zigzag => (sx * 14.0 * s, sy * 2.0 * triangle(3.0 * s)),
            Primitive::Spiral => {
                let r = 1.0 + 4.0 * s;
                let phi = sx * 3.0 * PI * s;
                (r * phi.cos() - 1.0, r * phi.sin())
            }
            Primitive::Push => (sx * 10.0 * (PI * s).sin(), 0.0),
            Primitive::Sweep => {
                let r = 12.0;
                let phi0 = (-sy).atan2(0.0);
                let phi = phi0 + sx * (PI / 3.0) * e;
                (r * phi.cos(), sy * r + r * phi.sin())
            }
        }
    }

    /// Gripper angle schedule (rad).
    fn gripper(self, t: usize, len: usize) -> f64 {
        let s = t as f64 / len as f64;
        let secs = t as f64 / FRAME_RATE_HZ;
        match self {
            Primitive::Reach => 0.8,
            Primitive::Orient => 0.3,
            Primitive::Pull => 0.1,
            Primitive::Transfer => 0.1 + 0.9 * s,
            Primitive::Lift => 0.5,
            Primitive::Loop => 0.3,
            Primitive::Shake => 0.1,
            Primitive::Pinch => 0.5 + 0.4 * (2.0 * PI * secs).sin(),
            Primitive::Zigzag => 0.6,
            Primitive::Spiral => 0.2,
            Primitive::Push => 1.0 - 0.9 * s,
            Primitive::Sweep => 0.7,
        }
    }
}

/// The four (primitive, label) pairs of a synthetic task.
fn vocabulary(task: Task) -> Result<[(Primitive, Gesture); 4]> {
    use Primitive::*;
    let (prims, first) = match task {
        Task::SynthA => ([Reach, Orient, Pull, Transfer], 1),
        Task::SynthB => ([Lift, Loop, Shake, Pinch], 5),
        Task::SynthC => ([Zigzag, Spiral, Push, Sweep], 9),
        other => {
            return Err(Error::Config(format!(
                "`{other}` is not a synthetic task (expected synthA, synthB or synthC)"
            )))
        }
    };
    Ok(std::array::from_fn(|i| {
        (prims[i], Gesture(first + i as u16))
    }))
}

/// Gesture labels a synthetic task can emit.
pub fn gesture_vocabulary(task: Task) -> Result<Vec<Gesture>> {
    Ok(vocabulary(task)?.iter().map(|&(_, g)| g).collect())
}

pub fn tremor_amplitude(skill: Skill, rng: &mut impl Rng) -> f64 {
    match skill {
        Skill::Expert => EXPERT_TREMOR_PX,
        Skill::Beginner => BEGINNER_TREMOR_PX,
        Skill::Intermediate => rng.random_range(EXPERT_TREMOR_PX..BEGINNER_TREMOR_PX),
    }
}

/// Zero-mean Gaussian-smoothed noise with RMS `amplitude`.
fn smoothed_noise(len: usize, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let smooth = TREMOR_SMOOTHING_FRAMES;
    let radius = (3.0 * smooth).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * smooth.powi(2))).exp()
        })
        .collect();
    let white: Vec<f64> = (0..len + 2 * radius)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut out: Vec<f64> = (0..len)
        .map(|i| kernel.iter().zip(&white[i..]).map(|(k, w)| k * w).sum())
        .collect();
    let mean = out.iter().sum::<f64>() / len as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= amplitude / rms);
    }
    out
}

fn central_difference(series: &[f64], i: usize) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let rate = FRAME_RATE_HZ;
    if i == 0 {
        (series[1] - series[0]) * rate
    } else if i == n - 1 {
        (series[n - 1] - series[n - 2]) * rate
    } else {
        (series[i + 1] - series[i - 1]) * 0.5 * rate
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

struct ToolTrack {
    planned_x: Vec<f64>,
    planned_y: Vec<f64>,
    gripper: Vec<f64>,
}

fn plan_segments(
    task: Task,
    duration: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Segment, Primitive)>> {
    let vocab = vocabulary(task)?;
    let mut order: Vec<usize> = Vec::new();
    let mut plan = Vec::new();
    let mut start = 0;
    while start < duration {
        if order.is_empty() {
            order = (0..vocab.len()).collect();
            order.shuffle(rng);
        }
        let (prim, gesture) = vocab[order.pop().expect("refilled above")];
        let len = rng.random_range(MIN_SEGMENT_FRAMES..=MAX_SEGMENT_FRAMES);
        let end = (start + len).min(duration) - 1;
        plan.push((
            Segment {
                start,
                end,
                gesture,
            },
            prim,
        ));
        start = end + 1;
    }
    Ok(plan)
}

fn track_tool(plan: &[(Segment, Primitive)], center: (f64, f64), duration: usize) -> ToolTrack {
    let mut track = ToolTrack {
        planned_x: Vec::with_capacity(duration),
        planned_y: Vec::with_capacity(duration),
        gripper: Vec::with_capacity(duration),
    };
    let mut pos = center;
    for &(seg, prim) in plan {
        let sign = |d: f64| if d >= 0.0 { 1.0 } else { -1.0 };
        let dir = (sign(center.0 - pos.0), sign(center.1 - pos.1));
        // Offsets are measured against the nominal length so truncated
        // segments are simply cut short.
        let nominal = seg.len().max(MIN_SEGMENT_FRAMES);
        for t in 0..seg.len() {
            let (dx, dy) = prim.offset(t, nominal, dir);
            track.planned_x.push(pos.0 + dx);
            track.planned_y.push(pos.1 + dy);
            track.gripper.push(prim.gripper(t, nominal));
        }
        let (dx, dy) = prim.offset(seg.len(), nominal, dir);
        pos = (pos.0 + dx, pos.1 + dy);
    }
    track
}

fn headings(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut current = 0.0f64;
    for i in 0..xs.len() {
        let vx = central_difference(xs, i) / FRAME_RATE_HZ;
        let vy = central_difference(ys, i) / FRAME_RATE_HZ;
        if vx.hypot(vy) > HEADING_MIN_SPEED {
            let raw = vy.atan2(vx);
            current += wrap_angle(raw - current);
        }
        out.push(current);
    }
    out
}

fn rotation_z(angle: f64) -> [f32; 9] {
    let (s, c) = angle.sin_cos();
    [
        c as f32, -s as f32, 0.0, //
        s as f32, c as f32, 0.0, //
        0.0, 0.0, 1.0,
    ]
}

fn render(tips: &[(f64, f64)]) -> FrameGray {
    let mut values = vec![BACKGROUND as f32; FRAME_SIZE * FRAME_SIZE];
    let reach = (4.0 * BLOB_SIGMA_PX).ceil() as isize;
    let denom = 2.0 * BLOB_SIGMA_PX * BLOB_SIGMA_PX;
    for &(tx, ty) in tips {
        let (cx, cy) = (tx.round() as isize, ty.round() as isize);
        for y in (cy - reach).max(0)..=(cy + reach).min(FRAME_SIZE as isize - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(FRAME_SIZE as isize - 1) {
                let d2 = (x as f64 - tx).powi(2) + (y as f64 - ty).powi(2);
                values[y as usize * FRAME_SIZE + x as usize] +=
                    (BLOB_AMPLITUDE * (-d2 / denom).exp()) as f32;
            }
        }
    }
    FrameGray::new(FRAME_SIZE, FRAME_SIZE, values).expect("fixed frame size")
}

/// Generates one synthetic trial; identical arguments give identical trials.
pub fn generate_synthetic_trial(
    task: Task,
    skill: Skill,
    duration: usize,
    seed: u64,
) -> Result<Trial> {
    if duration < MIN_DURATION {
        return Err(Error::Config(format!(
            "synthetic trials need at least {MIN_DURATION} frames, got {duration}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let amplitude = tremor_amplitude(skill, &mut rng);
    let plan = plan_segments(task, duration, &mut rng)?;

    let tracks: Vec<ToolTrack> = TOOL_CENTERS
        .iter()
        .map(|&c| track_tool(&plan, c, duration))
        .collect();
    let tremor: Vec<(Vec<f64>, Vec<f64>)> = (0..tracks.len())
        .map(|_| {
            (
                smoothed_noise(duration, amplitude, &mut rng),
                smoothed_noise(duration, amplitude, &mut rng),
            )
        })
        .collect();

    let mut kinematics = vec![KinematicsVector::default(); duration];
    let mut tips = vec![Vec::with_capacity(2); duration];
    let slaves = [Manipulator::SlaveLeft, Manipulator::SlaveRight];
    let masters = [Manipulator::MasterLeft, Manipulator::MasterRight];
    for (k, (track, (tx, ty))) in tracks.iter().zip(&tremor).enumerate() {
        let px: Vec<f64> = track.planned_x.iter().zip(tx).map(|(p, n)| p + n).collect();
        let py: Vec<f64> = track.planned_y.iter().zip(ty).map(|(p, n)| p + n).collect();
        // Work in f32-rounded meters so stored velocities are consistent with
        // stored positions.
        let to_m = |p: f64| ((p - FRAME_SIZE as f64 / 2.0) * METERS_PER_PIXEL) as f32 as f64;
        let mx: Vec<f64> = px.iter().map(|&p| to_m(p)).collect();
        let my: Vec<f64> = py.iter().map(|&p| to_m(p)).collect();
        let heading = headings(&px, &py);
        for t in 0..duration {
            let pos = [mx[t] as f32, my[t] as f32, TOOL_DEPTH_M as f32];
            let vel = [
                central_difference(&mx, t) as f32,
                central_difference(&my, t) as f32,
                0.0,
            ];
            let omega = [0.0, 0.0, central_difference(&heading, t) as f32];
            let rot = rotation_z(heading[t]);
            let grip = track.gripper[t] as f32;
            let kin = &mut kinematics[t];
            kin.set_block(slaves[k], pos, rot, vel, omega, grip);
            let scale = MASTER_SCALE as f32;
            kin.set_block(
                masters[k],
                pos.map(|v| v * scale),
                rot,
                vel.map(|v| v * scale),
                omega,
                grip,
            );
            tips[t].push((px[t], py[t]));
        }
    }
    let frames = tips.iter().map(|t| render(t)).collect();

    let trial = Trial {
        trial_id: format!("{}_{}_{seed:016x}", task.name(), skill.letter()),
        task,
        skill,
        frames,
        kinematics,
        transcript: plan.into_iter().map(|(s, _)| s).collect(),
    };
    trial.validate()?;
    Ok(trial)
}

/// Entry of the synthetic dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_id: String,
    pub seed: u64,
    pub task: Task,
    pub skill: Skill,
    pub duration: usize,
}

impl TrialEntry {
    pub fn generate(&self) -> Result<Trial> {
        generate_synthetic_trial(self.task, self.skill, self.duration, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub seed: u64,
    pub trials: Vec<TrialEntry>,
}

impl DatasetManifest {
    /// Plans `n_trials` trials with skills cycling Expert, Intermediate,
    /// Beginner and per-trial seeds derived from `seed`.
    pub fn plan(task: Task, n_trials: usize, duration: usize, seed: u64) -> Result<Self> {
        vocabulary(task)?;
        if duration < MIN_DURATION {
            return Err(Error::Config(format!(
                "synthetic trials need at least {MIN_DURATION} frames, got {duration}"
            )));
        }
        let cycle = [Skill::Expert, Skill::Intermediate, Skill::Beginner];
        let trials = (0..n_trials)
            .map(|i| {
                let trial_seed = derive_seed(seed, &format!("{}/trial/{i}", task.name()));
                let skill = cycle[i % cycle.len()];
                TrialEntry {
                    trial_id: format!("{}_{}{:03}", task.name(), skill.letter(), i + 1),
                    seed: trial_seed,
                    task,
                    skill,
                    duration,
                }
            })
            .collect();
        Ok(DatasetManifest { task, seed, trials })
    }
}

/// Plans and generates a whole synthetic dataset. Trial ids follow the
/// manifest (`<task>_<skill letter><index>`).
pub fn generate_synthetic_dataset(
    task: Task,
    n_trials: usize,
    duration: usize,
    seed: u64,
) -> Result<(Vec<Trial>, DatasetManifest)> {
    let manifest = DatasetManifest::plan(task, n_trials, duration, seed)?;
    let trials = manifest
        .trials
        .iter()
        .map(|e| {
            let mut t = e.generate()?;
            t.trial_id = e.trial_id.clone();
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trials, manifest))
}
