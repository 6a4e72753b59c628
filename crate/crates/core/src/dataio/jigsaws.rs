//! Reader and writer for the JIGSAWS directory layout.
//!
//! ```text
//! <root>/kinematics/AllGestures/<stem>.txt   76 whitespace-separated reals per row
//! <root>/transcriptions/<stem>.txt           "start end G<k>" (1-based, inclusive)
//! <root>/meta_file_<task>.txt                "<stem> <E|I|N> ..."
//! <root>/video/<stem>_capture1.<ext>         raw frame dump (see [`super::frames`])
//! ```
//!
//! The task is the part of the stem before its last underscore
//! (`Knot_Tying_B001` belongs to `Knot_Tying`).

use std::fs;
use std::path::{Path, PathBuf};

use super::frames::{read_frames_file, write_frames_file};
use super::{Gesture, KinematicsVector, Segment, Skill, Task, Trial, KIN_DIM};
use crate::error::{Error, Result};

/// Side of the square frames trials are resampled to.
pub const INGEST_EXTENT: usize = 64;
pub const FRAME_DUMP_EXT: &str = "frms";

pub fn kinematics_path(root: &Path, stem: &str) -> PathBuf {
    root.join("kinematics")
        .join("AllGestures")
        .join(format!("{stem}.txt"))
}

pub fn transcript_path(root: &Path, stem: &str) -> PathBuf {
    root.join("transcriptions").join(format!("{stem}.txt"))
}

pub fn meta_path(root: &Path, task_name: &str) -> PathBuf {
    root.join(format!("meta_file_{task_name}.txt"))
}

pub fn video_dir(root: &Path) -> PathBuf {
    root.join("video")
}

/// Task component of a trial stem.
pub fn stem_task(stem: &str) -> Result<(&str, Task)> {
    let name = stem
        .rsplit_once('_')
        .map(|(t, _)| t)
        .ok_or_else(|| Error::Config(format!("trial stem `{stem}` has no task prefix")))?;
    Ok((name, name.parse()?))
}

fn read_text(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile {
            path: path.to_path_buf(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Parses one kinematics row; `line` is 1-based and only used for errors.
pub fn parse_kinematics_row(text: &str, path: &Path, line: usize) -> Result<KinematicsVector> {
    let values = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f32>()
                .map_err(|_| parse_error(path, line, format!("`{tok}` is not a number")))
        })
        .collect::<Result<Vec<f32>>>()?;
    if values.len() != KIN_DIM {
        return Err(parse_error(
            path,
            line,
            format!("expected {KIN_DIM} columns, found {}", values.len()),
        ));
    }
    KinematicsVector::from_slice(&values)
}

pub fn parse_kinematics(text: &str, path: &Path) -> Result<Vec<KinematicsVector>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_kinematics_row(l, path, i + 1))
        .collect()
}

/// Parses a transcript line into its literal `(start, end, gesture)` triple,
/// still in the file's 1-based numbering.
pub fn parse_transcript_line(
    text: &str,
    path: &Path,
    line: usize,
) -> Result<(usize, usize, Gesture)> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() < 3 {
        return Err(parse_error(path, line, "expected `start end G<k>`"));
    }
    let frame = |tok: &str| {
        tok.parse::<usize>()
            .map_err(|_| parse_error(path, line, format!("`{tok}` is not a frame index")))
    };
    let (start, end) = (frame(toks[0])?, frame(toks[1])?);
    let gesture: Gesture = toks[2]
        .parse()
        .map_err(|_| parse_error(path, line, format!("unknown gesture token `{}`", toks[2])))?;
    if start == 0 || start > end {
        return Err(parse_error(
            path,
            line,
            format!("bad frame range {start}..{end}"),
        ));
    }
    Ok((start, end, gesture))
}

/// Parses a transcript into 0-based segments sorted by start frame.
pub fn parse_transcript(text: &str, path: &Path) -> Result<Vec<Segment>> {
    let mut segments = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_transcript_line(l, path, i + 1).map(|(s, e, gesture)| Segment {
                start: s - 1,
                end: e - 1,
                gesture,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    segments.sort_by_key(|s| s.start);
    Ok(segments)
}

/// Looks up the skill letter of `stem` in a meta file.
pub fn parse_meta_skill(text: &str, path: &Path, stem: &str) -> Result<Skill> {
    for (i, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        if toks.next() != Some(stem) {
            continue;
        }
        let letter = toks
            .next()
            .ok_or_else(|| parse_error(path, i + 1, "missing skill letter"))?;
        return Skill::from_letter(letter)
            .ok_or_else(|| parse_error(path, i + 1, format!("unknown skill letter `{letter}`")));
    }
    Err(Error::Load {
        what: path.display().to_string(),
        reason: format!("no entry for trial `{stem}`"),
    })
}

fn find_video(root: &Path, stem: &str) -> Result<PathBuf> {
    let dir = video_dir(root);
    let prefix = format!("{stem}_capture1.");
    let preferred = dir.join(format!("{prefix}{FRAME_DUMP_EXT}"));
    if preferred.is_file() {
        return Ok(preferred);
    }
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(_) => return Err(Error::MissingFile { path: preferred }),
    };
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix))
        })
        .collect();
    found.sort();
    found
        .into_iter()
        .next()
        .ok_or(Error::MissingFile { path: preferred })
}

/// Loads one trial, resampling frames to 64x64 and truncating frames and
/// kinematics to the shorter of the two. Segments are clipped to the result.
pub fn load_jigsaws_trial(root: &Path, stem: &str) -> Result<Trial> {
    let (task_name, task) = stem_task(stem)?;

    let kin_path = kinematics_path(root, stem);
    let mut kinematics = parse_kinematics(&read_text(&kin_path)?, &kin_path)?;
    let tr_path = transcript_path(root, stem);
    let transcript = parse_transcript(&read_text(&tr_path)?, &tr_path)?;
    let m_path = meta_path(root, task_name);
    let skill = parse_meta_skill(&read_text(&m_path)?, &m_path, stem)?;

    let mut frames = read_frames_file(&find_video(root, stem)?)?;
    let len = frames.len().min(kinematics.len());
    frames.truncate(len);
    kinematics.truncate(len);
    let frames = frames
        .into_iter()
        .map(|f| {
            if f.height() == INGEST_EXTENT && f.width() == INGEST_EXTENT {
                Ok(f)
            } else {
                f.resize(INGEST_EXTENT, INGEST_EXTENT)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let transcript = transcript
        .into_iter()
        .filter(|s| s.start < len)
        .map(|s| Segment {
            end: s.end.min(len - 1),
            ..s
        })
        .collect();

    let trial = Trial {
        trial_id: stem.to_string(),
        task,
        skill,
        frames,
        kinematics,
        transcript,
    };
    trial.validate()?;
    Ok(trial)
}

/// Stems of all trials with a kinematics file under `root`, sorted.
pub fn list_stems(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("kinematics").join("AllGestures");
    let entries = fs::read_dir(&dir).map_err(|_| Error::MissingFile { path: dir.clone() })?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "txt").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    stems.sort();
    Ok(stems)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes trials in the layout [`load_jigsaws_trial`] reads. One meta file is
/// written per task.
pub fn write_jigsaws_dataset(root: &Path, trials: &[Trial]) -> Result<()> {
    use std::collections::BTreeMap;
    use std::fmt::Write as _;

    let mut meta: BTreeMap<&str, String> = BTreeMap::new();
    for trial in trials {
        let stem = trial.trial_id.as_str();
        let (task_name, task) = stem_task(stem)?;
        if task != trial.task {
            return Err(Error::Config(format!(
                "trial id `{stem}` does not start with its task name `{}`",
                trial.task.name()
            )));
        }
        let mut kin = String::new();
        for k in &trial.kinematics {
            let row: Vec<String> = k.as_slice().iter().map(|v| v.to_string()).collect();
            kin.push_str(&row.join(" "));
            kin.push('\n');
        }
        write_text(&kinematics_path(root, stem), &kin)?;

        let mut tr = String::new();
        for s in &trial.transcript {
            writeln!(tr, "{} {} {}", s.start + 1, s.end + 1, s.gesture).expect("string write");
        }
        write_text(&transcript_path(root, stem), &tr)?;

        let video = video_dir(root).join(format!("{stem}_capture1.{FRAME_DUMP_EXT}"));
        write_frames_file(&video, &trial.frames)?;

        writeln!(
            meta.entry(task_name).or_default(),
            "{stem}\t{}",
            trial.skill.letter()
        )
        .expect("string write");
    }
    for (task_name, text) in meta {
        write_text(&meta_path(root, task_name), &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::generate_synthetic_trial;

    fn p() -> PathBuf {
        PathBuf::from("x.txt")
    }

    #[test]
    fn identity_rotation_row_parses() {
        let mut row = vec!["0".to_string(); KIN_DIM];
        for b in 0..4 {
            for d in [3, 7, 11] {
                row[b * 19 + d] = "1".into();
            }
        }
        let k = parse_kinematics_row(&row.join("  "), &p(), 1).unwrap();
        assert!(k.orthonormality_error() < 1e-12);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = format!("{}\n{}\n", vec!["0"; 76].join(" "), vec!["0"; 75].join(" "));
        match parse_kinematics(&text, &p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transcript_line_format() {
        assert_eq!(
            parse_transcript_line("80 200 G2", &p(), 1).unwrap(),
            (80, 200, Gesture(2))
        );
        let segs = parse_transcript("80 200 G2 \n", &p()).unwrap();
        assert_eq!(
            segs,
            vec![Segment {
                start: 79,
                end: 199,
                gesture: Gesture(2)
            }]
        );
        assert!(matches!(
            parse_transcript_line("1 20 X3", &p(), 4),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn meta_skill_letters() {
        let meta = "Suturing_B001 N 13 2 2\nSuturing_C001\tE 20\nSuturing_D001 I 17";
        assert_eq!(
            parse_meta_skill(meta, &p(), "Suturing_B001").unwrap(),
            Skill::Beginner
        );
        assert_eq!(
            parse_meta_skill(meta, &p(), "Suturing_C001").unwrap(),
            Skill::Expert
        );
        assert_eq!(
            parse_meta_skill(meta, &p(), "Suturing_D001").unwrap(),
            Skill::Intermediate
        );
        assert!(parse_meta_skill(meta, &p(), "Suturing_E001").is_err());
    }

    #[test]
    fn round_trip_through_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut trial =
            generate_synthetic_trial(Task::SynthB, Skill::Intermediate, 200, 3).unwrap();
        trial.trial_id = "synthB_I001".into();
        write_jigsaws_dataset(dir.path(), std::slice::from_ref(&trial)).unwrap();
        assert_eq!(
            list_stems(dir.path()).unwrap(),
            vec!["synthB_I001".to_string()]
        );
        let back = load_jigsaws_trial(dir.path(), "synthB_I001").unwrap();
        assert_eq!(back, trial);
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        match load_jigsaws_trial(dir.path(), "Suturing_B001") {
            Err(Error::MissingFile { path }) => assert!(path.ends_with("Suturing_B001.txt")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kinematics_longer_than_video_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let mut trial = generate_synthetic_trial(Task::SynthA, Skill::Expert, 200, 8).unwrap();
        trial.trial_id = "synthA_E001".into();
        write_jigsaws_dataset(dir.path(), std::slice::from_ref(&trial)).unwrap();
        let video = video_dir(dir.path()).join("synthA_E001_capture1.frms");
        write_frames_file(&video, &trial.frames[..150]).unwrap();
        let back = load_jigsaws_trial(dir.path(), "synthA_E001").unwrap();
        assert_eq!(back.len(), 150);
        assert!(back.transcript.iter().all(|s| s.end < 150));
    }
}
