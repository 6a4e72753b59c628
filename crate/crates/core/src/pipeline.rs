//! Config-driven, resumable experiment stages.
//!
//! Each stage reads its predecessor's artifacts under the run's output
//! directory and writes its own artifacts plus a JSON manifest recording the
//! stage's config digest, seed and the SHA-256 of every input and output
//! file. A stage whose manifest still matches is skipped unless forced.
//!
//! Config digests chain: a stage's digest covers its own settings and the
//! digests of the stages it consumes, so an upstream change invalidates
//! everything downstream. Binary artifacts carry their digest in the archive
//! header and are checked before use.
//!
//! All seeds derive from the master seed and a stage name
//! (`derive_seed(master, "<stage>/<task>")`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{emit_report, pca_project, scatter_csv, Gate, Report, SkillStructure};
use crate::archive::Archive;
use crate::dataio::jigsaws::{
    kinematics_path, list_stems, load_jigsaws_trial, meta_path, stem_task, transcript_path,
};
use crate::dataio::synth::MIN_DURATION;
use crate::dataio::{
    window_and_sample, DatasetManifest, Gesture, GestureWindow, Skill, Task, WindowConfig,
    WindowReport,
};
use crate::downstream::{
    class_ids, run_split_experiment, transfer_experiment, ExperimentConfig, GBTConfig, Metrics,
    SplitUnit,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::numerics::Tensor;
use crate::selfsup::{embed_dataset, train_encoder_decoder, Embeddings, LossCurve, TrainConfig};
use crate::util::{derive_seed, hex, sha256};

/// Minimum mean in-task gesture accuracy on synthetic data.
pub const GESTURE_ACCURACY_GATE: f64 = 0.70;
/// Expert-vs-Beginner silhouette must exceed this.
pub const SKILL_SILHOUETTE_GATE: f64 = 0.1;
/// Transfer accuracy must reach this multiple of chance.
pub const TRANSFER_CHANCE_FACTOR: f64 = 1.5;
/// Final epoch loss must fall below this fraction of the first.
pub const LOSS_RATIO_GATE: f64 = 0.2;
/// Epoch-to-epoch loss increases tolerated after the burn-in.
pub const MAX_NON_MONOTONE_STEPS: usize = 2;
pub const MONOTONE_BURN_IN_EPOCHS: usize = 5;

pub const GEN_DATA: &str = "gen-data";
pub const INGEST: &str = "ingest";
pub const TRAIN_ENCODER: &str = "train-encoder";
pub const EMBED: &str = "embed";
pub const EVAL_GESTURE: &str = "eval-gesture";
pub const EVAL_SKILL: &str = "eval-skill";
pub const TRANSFER: &str = "transfer";
pub const PROJECT: &str = "project";
pub const REPORT: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated trials: `trials` per task, `duration` frames each.
    Synthetic { trials: usize, duration: usize },
    /// A JIGSAWS-format tree with pre-decoded frame dumps.
    Jigsaws { root: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            trials: 12,
            duration: 1200,
        }
    }
}

/// Train/test protocol of the downstream experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub n_splits: usize,
    pub test_fraction: f64,
    pub split_by: SplitUnit,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        SplitSettings {
            n_splits: e.n_splits,
            test_fraction: e.test_fraction,
            split_by: e.split_by,
        }
    }
}

/// Everything that determines a run. The per-module seeds inside `train` and
/// `gbt` are ignored: every seed derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: Vec<Task>,
    pub data: DataSource,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub gbt: GBTConfig,
    pub split: SplitSettings,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tasks: vec![Task::SynthA],
            data: DataSource::default(),
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            gbt: GBTConfig::default(),
            split: SplitSettings::default(),
            output_dir: PathBuf::from("runs/default"),
            seed: 7,
        }
    }
}

fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    serde_json::to_vec(value).expect("config types serialize")
}

fn digest(label: &str, value: &impl Serialize) -> [u8; 32] {
    let mut bytes = label.as_bytes().to_vec();
    bytes.push(0);
    bytes.extend(json_bytes(value));
    sha256(&bytes)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile { path: path.into() },
            _ => Error::io(path, e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config types serialize") + "\n"
    }

    /// Checks every setting and lists all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.tasks.is_empty() {
            problems.push("at least one task is required".to_string());
        }
        let unique: BTreeSet<Task> = self.tasks.iter().copied().collect();
        if unique.len() != self.tasks.len() {
            problems.push("tasks must not repeat".to_string());
        }
        match &self.data {
            DataSource::Synthetic { trials, duration } => {
                if *trials < 2 {
                    problems.push(format!(
                        "synthetic data needs at least 2 trials per task, got {trials}"
                    ));
                }
                if *duration < MIN_DURATION {
                    problems.push(format!(
                        "synthetic trials need at least {MIN_DURATION} frames, got {duration}"
                    ));
                }
                for t in self.tasks.iter().filter(|t| !t.is_synthetic()) {
                    problems.push(format!("task {t} is not synthetic but the data source is"));
                }
            }
            DataSource::Jigsaws { root } => {
                if !root.is_dir() {
                    problems.push(format!("JIGSAWS root {} does not exist", root.display()));
                }
                for t in self.tasks.iter().filter(|t| t.is_synthetic()) {
                    problems.push(format!(
                        "task {t} is synthetic but the data source is a JIGSAWS tree"
                    ));
                }
            }
        }
        let nested = [
            self.window.validate(),
            self.train.validate(),
            self.gbt.validate(),
            self.experiment("validate", Task::SynthA).validate(),
        ];
        for r in nested {
            match r {
                Ok(()) => {}
                Err(Error::Validation(p)) => problems.extend(p),
                Err(e) => problems.push(e.to_string()),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn stage_seed(&self, stage: &str, task: Task) -> u64 {
        derive_seed(self.seed, &format!("{stage}/{task}"))
    }

    /// Digest of the whole run configuration (output location excluded).
    pub fn config_digest(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.train.loss_log = None;
        digest("run", &c)
    }

    /// Command that produces the window files for this data source.
    pub fn windows_command(&self) -> &'static str {
        match self.data {
            DataSource::Synthetic { .. } => GEN_DATA,
            DataSource::Jigsaws { .. } => INGEST,
        }
    }

    fn train_config(&self, task: Task, loss_log: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(TRAIN_ENCODER, task),
            loss_log,
            ..self.train.clone()
        }
    }

    fn experiment(&self, stage: &str, task: Task) -> ExperimentConfig {
        ExperimentConfig {
            gbt: GBTConfig {
                seed: self.stage_seed(&format!("{stage}/gbt"), task),
                ..self.gbt.clone()
            },
            n_splits: self.split.n_splits,
            test_fraction: self.split.test_fraction,
            split_by: self.split.split_by,
            seed: self.stage_seed(stage, task),
        }
    }

    pub fn data_digest(&self, task: Task) -> [u8; 32] {
        digest(
            "data",
            &(
                task,
                &self.data,
                &self.window,
                self.stage_seed(self.windows_command(), task),
            ),
        )
    }

    pub fn train_digest(&self, task: Task) -> [u8; 32] {
        digest(
            "train",
            &(hex(&self.data_digest(task)), self.train_config(task, None)),
        )
    }

    pub fn embed_digest(&self, task: Task) -> [u8; 32] {
        digest("embed", &hex(&self.train_digest(task)))
    }

    fn eval_digest(&self, stage: &str) -> [u8; 32] {
        let upstream: Vec<String> = self
            .tasks
            .iter()
            .map(|&t| hex(&self.embed_digest(t)) + &hex(&self.data_digest(t)))
            .collect();
        let cfgs: Vec<ExperimentConfig> = self
            .tasks
            .iter()
            .map(|&t| self.experiment(stage, t))
            .collect();
        digest(stage, &(upstream, cfgs))
    }
}

/// Where a run keeps its artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn windows(&self, task: Task) -> PathBuf {
        self.root.join("windows").join(format!("{task}.sgem"))
    }

    pub fn window_index(&self, task: Task) -> PathBuf {
        self.root.join("windows").join(format!("{task}.json"))
    }

    /// Synthetic dataset manifest (trial ids, seeds, skills).
    pub fn dataset_manifest(&self, task: Task) -> PathBuf {
        self.root
            .join("windows")
            .join(format!("{task}_dataset.json"))
    }

    pub fn checkpoint(&self, task: Task) -> PathBuf {
        self.root.join("model").join(format!("{task}.sgem"))
    }

    pub fn loss_curve(&self, task: Task) -> PathBuf {
        self.root.join("model").join(format!("{task}_loss.csv"))
    }

    pub fn embeddings(&self, task: Task) -> PathBuf {
        self.root.join("embed").join(format!("{task}.sgem"))
    }

    pub fn embedding_index(&self, task: Task) -> PathBuf {
        self.root.join("embed").join(format!("{task}.json"))
    }

    pub fn metrics_csv(&self, experiment: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{experiment}.csv"))
    }

    pub fn metrics_json(&self, experiment: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{experiment}.json"))
    }

    pub fn scatter(&self, task: Task) -> PathBuf {
        self.root.join("projection").join(format!("{task}.csv"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// Manifest that sits next to a stage's primary artifact.
    pub fn manifest_for(&self, artifact: &Path) -> PathBuf {
        let stem = artifact
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("stage");
        artifact.with_file_name(format!("{stem}.manifest.json"))
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

/// Provenance of one stage execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub target: String,
    pub config_digest: String,
    pub seed: u64,
    /// Path relative to the run root, mapped to the file's SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&sha256(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.into() },
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        what: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn check_digest(path: &Path, found: &[u8; 32], expected: &[u8; 32], requires: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::StaleArtifact {
            path: path.into(),
            requires: requires.into(),
            found: hex(found),
            expected: hex(expected),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowMeta {
    trial_id: String,
    skill: Skill,
    gesture: Gesture,
    frame_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowIndex {
    task: Task,
    report: WindowReport,
    windows: Vec<WindowMeta>,
}

fn stack(tensors: impl ExactSizeIterator<Item = Tensor>, item_shape: &[usize]) -> Result<Tensor> {
    let n = tensors.len();
    let mut data = Vec::with_capacity(n * item_shape.iter().product::<usize>());
    for t in tensors {
        if t.shape() != item_shape {
            return Err(Error::contract(format!(
                "cannot stack shape {:?} with {:?}",
                t.shape(),
                item_shape
            )));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![n];
    shape.extend_from_slice(item_shape);
    Tensor::from_vec(&shape, data)
}

fn unstack(t: &Tensor) -> Result<Vec<Tensor>> {
    let item: Vec<usize> = t.shape()[1..].to_vec();
    let size: usize = item.iter().product();
    t.data()
        .chunks_exact(size.max(1))
        .map(|c| Tensor::from_vec(&item, c.to_vec()))
        .collect()
}

/// Writes a window set as one archive (`flows [n, C, H, W]`, `kinematics
/// [n, S, 76]`) plus a JSON index with labels and frame indices.
pub fn save_windows(
    archive_path: &Path,
    index_path: &Path,
    task: Task,
    windows: &[GestureWindow],
    report: &WindowReport,
    config_digest: [u8; 32],
) -> Result<()> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InsufficientData(format!("no windows for task {task}")))?;
    let mut archive = Archive::new(config_digest);
    archive.push(
        "flows",
        stack(windows.iter().map(|w| w.flows.clone()), first.flows.shape())?,
    )?;
    archive.push(
        "kinematics",
        stack(
            windows.iter().map(|w| w.kinematics.clone()),
            first.kinematics.shape(),
        )?,
    )?;
    archive.save(archive_path)?;
    let index = WindowIndex {
        task,
        report: report.clone(),
        windows: windows
            .iter()
            .map(|w| WindowMeta {
                trial_id: w.trial_id.clone(),
                skill: w.skill,
                gesture: w.gesture,
                frame_indices: w.frame_indices.clone(),
            })
            .collect(),
    };
    write_json(index_path, &index)
}

/// Reads a window set written by [`save_windows`]; returns the archive
/// digest alongside.
pub fn load_windows(
    archive_path: &Path,
    index_path: &Path,
) -> Result<(Vec<GestureWindow>, [u8; 32])> {
    let mut archive = Archive::load(archive_path)?;
    let index: WindowIndex = read_json(index_path)?;
    let flows = unstack(&archive.take("flows")?)?;
    let kinematics = unstack(&archive.take("kinematics")?)?;
    if flows.len() != index.windows.len() || kinematics.len() != index.windows.len() {
        return Err(Error::Load {
            what: archive_path.display().to_string(),
            reason: format!(
                "{} flow stacks and {} kinematics blocks for {} indexed windows",
                flows.len(),
                kinematics.len(),
                index.windows.len()
            ),
        });
    }
    let windows = index
        .windows
        .into_iter()
        .zip(flows.into_iter().zip(kinematics))
        .map(|(m, (flows, kinematics))| GestureWindow {
            trial_id: m.trial_id,
            task: index.task,
            skill: m.skill,
            gesture: m.gesture,
            frame_indices: m.frame_indices,
            flows,
            kinematics,
        })
        .collect();
    Ok((windows, archive.digest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingIndex {
    gestures: Vec<Gesture>,
    skills: Vec<Skill>,
    trial_ids: Vec<String>,
    tasks: Vec<Task>,
}

pub fn save_embeddings(
    archive_path: &Path,
    index_path: &Path,
    e: &Embeddings,
    config_digest: [u8; 32],
) -> Result<()> {
    let mut archive = Archive::new(config_digest);
    archive.push("matrix", e.matrix.clone())?;
    archive.save(archive_path)?;
    write_json(
        index_path,
        &EmbeddingIndex {
            gestures: e.gestures.clone(),
            skills: e.skills.clone(),
            trial_ids: e.trial_ids.clone(),
            tasks: e.tasks.clone(),
        },
    )
}

pub fn load_embeddings(archive_path: &Path, index_path: &Path) -> Result<(Embeddings, [u8; 32])> {
    let mut archive = Archive::load(archive_path)?;
    let index: EmbeddingIndex = read_json(index_path)?;
    let matrix = archive.take("matrix")?;
    if matrix.rank() != 2 || matrix.shape()[0] != index.gestures.len() {
        return Err(Error::Load {
            what: archive_path.display().to_string(),
            reason: format!(
                "matrix {:?} for {} labels",
                matrix.shape(),
                index.gestures.len()
            ),
        });
    }
    Ok((
        Embeddings {
            matrix,
            gestures: index.gestures,
            skills: index.skills,
            trial_ids: index.trial_ids,
            tasks: index.tasks,
        },
        archive.digest,
    ))
}

/// Parses the `epoch,loss` CSV written during training.
pub fn read_loss_curve(path: &Path) -> Result<LossCurve> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut epoch_loss = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let loss = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                path: path.into(),
                line: i + 1,
                reason: format!("expected `epoch,loss`, got `{line}`"),
            })?;
        epoch_loss.push(loss);
    }
    Ok(LossCurve { epoch_loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

/// Result of one stage for one target (a task, or `all`).
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub target: String,
    pub status: StageStatus,
    pub outputs: Vec<PathBuf>,
    pub note: String,
}

/// One run: configuration, artifact layout and the rerun policy.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    pub layout: Layout,
    pub force: bool,
}

struct StageSpec<'a> {
    stage: &'static str,
    target: String,
    digest: [u8; 32],
    seed: u64,
    /// Required inputs with the command that produces each.
    inputs: Vec<(PathBuf, &'a str)>,
    /// Inputs used when present.
    optional: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
}

impl Pipeline {
    /// Validates the configuration.
    pub fn new(config: RunConfig, force: bool) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config.output_dir.clone());
        Ok(Pipeline {
            config,
            layout,
            force,
        })
    }

    fn input_digests(&self, spec: &StageSpec) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (path, requires) in &spec.inputs {
            if !path.is_file() {
                return Err(Error::StageOrder {
                    stage: spec.stage.into(),
                    requires: (*requires).into(),
                    missing: path.clone(),
                });
            }
            out.insert(self.layout.relative(path), file_digest(path)?);
        }
        for path in spec.optional.iter().filter(|p| p.is_file()) {
            out.insert(self.layout.relative(path), file_digest(path)?);
        }
        Ok(out)
    }

    fn is_fresh(&self, spec: &StageSpec, inputs: &BTreeMap<String, String>) -> bool {
        let Ok(m) = read_json::<StageManifest>(&spec.manifest) else {
            return false;
        };
        m.stage == spec.stage
            && m.config_digest == hex(&spec.digest)
            && m.seed == spec.seed
            && &m.inputs == inputs
            && m.outputs.len() == spec.outputs.len()
            && spec.outputs.iter().all(|p| {
                m.outputs
                    .get(&self.layout.relative(p))
                    .is_some_and(|d| file_digest(p).ok().as_ref() == Some(d))
            })
    }

    fn run_stage(
        &self,
        spec: StageSpec,
        body: impl FnOnce() -> Result<String>,
    ) -> Result<StageOutcome> {
        let inputs = self.input_digests(&spec)?;
        if !self.force && self.is_fresh(&spec, &inputs) {
            return Ok(StageOutcome {
                stage: spec.stage,
                target: spec.target,
                status: StageStatus::UpToDate,
                outputs: spec.outputs,
                note: "up to date".into(),
            });
        }
        let note = body()?;
        let mut outputs = BTreeMap::new();
        for p in &spec.outputs {
            outputs.insert(self.layout.relative(p), file_digest(p)?);
        }
        let manifest = StageManifest {
            stage: spec.stage.into(),
            target: spec.target.clone(),
            config_digest: hex(&spec.digest),
            seed: spec.seed,
            inputs,
            outputs,
        };
        write_json(&spec.manifest, &manifest)?;
        Ok(StageOutcome {
            stage: spec.stage,
            target: spec.target,
            status: StageStatus::Ran,
            outputs: spec.outputs,
            note,
        })
    }

    fn require_source(&self, stage: &str, want: &str) -> Result<()> {
        if self.config.windows_command() == want {
            Ok(())
        } else {
            Err(Error::Validation(vec![format!(
                "`{stage}` does not apply to this data source; use `{}`",
                self.config.windows_command()
            )]))
        }
    }

    fn windows_spec(&self, task: Task, inputs: Vec<(PathBuf, &'static str)>) -> StageSpec<'static> {
        let l = &self.layout;
        let mut outputs = vec![l.windows(task), l.window_index(task)];
        if matches!(self.config.data, DataSource::Synthetic { .. }) {
            outputs.push(l.dataset_manifest(task));
        }
        StageSpec {
            stage: self.config.windows_command(),
            target: task.to_string(),
            digest: self.config.data_digest(task),
            seed: self.config.stage_seed(self.config.windows_command(), task),
            inputs,
            optional: Vec::new(),
            outputs,
            manifest: l.manifest_for(&l.windows(task)),
        }
    }

    /// Generates synthetic trials and cuts them into windows.
    pub fn gen_data(&self) -> Result<Vec<StageOutcome>> {
        self.require_source(GEN_DATA, GEN_DATA)?;
        let DataSource::Synthetic { trials, duration } = self.config.data else {
            unreachable!("checked above")
        };
        self.config
            .tasks
            .iter()
            .map(|&task| {
                let spec = self.windows_spec(task, Vec::new());
                let seed = spec.seed;
                let digest = spec.digest;
                self.run_stage(spec, || {
                    let manifest = DatasetManifest::plan(task, trials, duration, seed)?;
                    let mut windows = Vec::new();
                    let mut report = WindowReport::default();
                    for entry in &manifest.trials {
                        let mut trial = entry.generate()?;
                        trial.trial_id = entry.trial_id.clone();
                        let (w, r) = window_and_sample(&trial, &self.config.window)?;
                        windows.extend(w);
                        report.merge(&r);
                    }
                    write_json(&self.layout.dataset_manifest(task), &manifest)?;
                    save_windows(
                        &self.layout.windows(task),
                        &self.layout.window_index(task),
                        task,
                        &windows,
                        &report,
                        digest,
                    )?;
                    Ok(format!(
                        "{} windows from {} trials",
                        windows.len(),
                        manifest.trials.len()
                    ))
                })
            })
            .collect()
    }

    /// Loads a JIGSAWS-format tree and cuts its trials into windows.
    pub fn ingest(&self) -> Result<Vec<StageOutcome>> {
        self.require_source(INGEST, INGEST)?;
        let DataSource::Jigsaws { root } = &self.config.data else {
            unreachable!("checked above")
        };
        let stems = list_stems(root)?;
        self.config
            .tasks
            .iter()
            .map(|&task| {
                let mine: Vec<&String> = stems
                    .iter()
                    .filter(|s| stem_task(s).map(|(_, t)| t == task).unwrap_or(false))
                    .collect();
                let mut inputs: Vec<(PathBuf, &'static str)> = Vec::new();
                for stem in &mine {
                    inputs.push((kinematics_path(root, stem), INGEST));
                    inputs.push((transcript_path(root, stem), INGEST));
                }
                if !mine.is_empty() {
                    inputs.push((meta_path(root, task.name()), INGEST));
                }
                let spec = self.windows_spec(task, inputs);
                let digest = spec.digest;
                self.run_stage(spec, || {
                    if mine.is_empty() {
                        return Err(Error::InsufficientData(format!(
                            "no trials of task {task} under {}",
                            root.display()
                        )));
                    }
                    let mut windows = Vec::new();
                    let mut report = WindowReport::default();
                    for stem in &mine {
                        let trial = load_jigsaws_trial(root, stem)?;
                        let (w, r) = window_and_sample(&trial, &self.config.window)?;
                        windows.extend(w);
                        report.merge(&r);
                    }
                    save_windows(
                        &self.layout.windows(task),
                        &self.layout.window_index(task),
                        task,
                        &windows,
                        &report,
                        digest,
                    )?;
                    Ok(format!(
                        "{} windows from {} trials",
                        windows.len(),
                        mine.len()
                    ))
                })
            })
            .collect()
    }

    fn load_task_windows(&self, task: Task) -> Result<Vec<GestureWindow>> {
        let path = self.layout.windows(task);
        let (windows, found) = load_windows(&path, &self.layout.window_index(task))?;
        check_digest(
            &path,
            &found,
            &self.config.data_digest(task),
            self.config.windows_command(),
        )?;
        Ok(windows)
    }

    fn window_inputs(&self, task: Task) -> Vec<(PathBuf, &'static str)> {
        let c = self.config.windows_command();
        vec![
            (self.layout.windows(task), c),
            (self.layout.window_index(task), c),
        ]
    }

    /// Trains one encoder-decoder per task.
    pub fn train_encoder(&self) -> Result<Vec<StageOutcome>> {
        self.config
            .tasks
            .iter()
            .map(|&task| {
                let l = &self.layout;
                let spec = StageSpec {
                    stage: TRAIN_ENCODER,
                    target: task.to_string(),
                    digest: self.config.train_digest(task),
                    seed: self.config.stage_seed(TRAIN_ENCODER, task),
                    inputs: self.window_inputs(task),
                    optional: Vec::new(),
                    outputs: vec![l.checkpoint(task), l.loss_curve(task)],
                    manifest: l.manifest_for(&l.checkpoint(task)),
                };
                let digest = spec.digest;
                self.run_stage(spec, || {
                    let windows = self.load_task_windows(task)?;
                    let cfg = self.config.train_config(task, Some(l.loss_curve(task)));
                    let out = train_encoder_decoder(&windows, &cfg)?;
                    save_checkpoint(
                        &l.checkpoint(task),
                        &out.encoder,
                        &out.decoder,
                        &out.normalizer,
                        digest,
                    )?;
                    Ok(format!(
                        "{} epochs on {} windows, loss {} -> {}",
                        out.curve.epoch_loss.len(),
                        windows.len(),
                        crate::downstream::format_number(out.curve.first().unwrap_or(f64::NAN)),
                        crate::downstream::format_number(out.curve.last().unwrap_or(f64::NAN))
                    ))
                })
            })
            .collect()
    }

    /// Embeds each task's windows with its own frozen encoder.
    pub fn embed(&self) -> Result<Vec<StageOutcome>> {
        self.config
            .tasks
            .iter()
            .map(|&task| {
                let l = &self.layout;
                let mut inputs = self.window_inputs(task);
                inputs.push((l.checkpoint(task), TRAIN_ENCODER));
                let spec = StageSpec {
                    stage: EMBED,
                    target: task.to_string(),
                    digest: self.config.embed_digest(task),
                    seed: 0,
                    inputs,
                    optional: Vec::new(),
                    outputs: vec![l.embeddings(task), l.embedding_index(task)],
                    manifest: l.manifest_for(&l.embeddings(task)),
                };
                let digest = spec.digest;
                self.run_stage(spec, || {
                    let ckpt = load_checkpoint(&l.checkpoint(task))?;
                    check_digest(
                        &l.checkpoint(task),
                        &ckpt.config_digest,
                        &self.config.train_digest(task),
                        TRAIN_ENCODER,
                    )?;
                    let windows = self.load_task_windows(task)?;
                    let emb = embed_dataset(&windows, &ckpt.encoder)?;
                    save_embeddings(&l.embeddings(task), &l.embedding_index(task), &emb, digest)?;
                    Ok(format!("{} x {} representations", emb.len(), emb.dim()))
                })
            })
            .collect()
    }

    /// Embeddings of `task`, checked against the current configuration.
    pub fn load_task_embeddings(&self, task: Task) -> Result<Embeddings> {
        let path = self.layout.embeddings(task);
        let (emb, found) = load_embeddings(&path, &self.layout.embedding_index(task))?;
        check_digest(&path, &found, &self.config.embed_digest(task), EMBED)?;
        Ok(emb)
    }

    fn embedding_inputs(&self) -> Vec<(PathBuf, &'static str)> {
        self.config
            .tasks
            .iter()
            .flat_map(|&t| {
                [
                    (self.layout.embeddings(t), EMBED),
                    (self.layout.embedding_index(t), EMBED),
                ]
            })
            .collect()
    }

    fn metrics_spec(
        &self,
        stage: &'static str,
        name: &str,
        inputs: Vec<(PathBuf, &'static str)>,
    ) -> StageSpec<'static> {
        let l = &self.layout;
        StageSpec {
            stage,
            target: "all".into(),
            digest: self.config.eval_digest(stage),
            seed: derive_seed(self.config.seed, stage),
            inputs,
            optional: Vec::new(),
            outputs: vec![l.metrics_csv(name), l.metrics_json(name)],
            manifest: l.manifest_for(&l.metrics_csv(name)),
        }
    }

    fn classification(
        &self,
        stage: &'static str,
        name: &str,
        skill: bool,
    ) -> Result<Vec<StageOutcome>> {
        let spec = self.metrics_spec(stage, name, self.embedding_inputs());
        let outcome = self.run_stage(spec, || {
            let mut rows = Vec::new();
            for &task in &self.config.tasks {
                let emb = self.load_task_embeddings(task)?;
                let labels = if skill {
                    class_ids(&emb.skills)
                } else {
                    class_ids(&emb.gestures)
                };
                rows.push(run_split_experiment(
                    &emb,
                    &labels,
                    task.display_name(),
                    &self.config.experiment(stage, task),
                )?);
            }
            Metrics::write_files(
                &rows,
                &self.layout.metrics_csv(name),
                &self.layout.metrics_json(name),
            )?;
            Ok(rows
                .iter()
                .map(|m| m.table_row())
                .collect::<Vec<_>>()
                .join("\n"))
        })?;
        Ok(vec![outcome])
    }

    /// Gesture recognition per task.
    pub fn eval_gesture(&self) -> Result<Vec<StageOutcome>> {
        self.classification(EVAL_GESTURE, "gesture", false)
    }

    /// Skill recognition per task.
    pub fn eval_skill(&self) -> Result<Vec<StageOutcome>> {
        self.classification(EVAL_SKILL, "skill", true)
    }

    /// Ordered (source, target) task pairs of the transfer experiment.
    pub fn transfer_pairs(&self) -> Vec<(Task, Task)> {
        let t = &self.config.tasks;
        t.iter()
            .flat_map(|&s| t.iter().filter(move |&&d| d != s).map(move |&d| (s, d)))
            .collect()
    }

    /// Dataset label of a transfer row.
    pub fn transfer_label(source: Task, target: Task) -> String {
        format!("{}->{}", source.display_name(), target.display_name())
    }

    /// Gesture recognition on each task with every other task's encoder.
    pub fn transfer(&self) -> Result<Vec<StageOutcome>> {
        if self.config.tasks.len() < 2 {
            return Err(Error::Validation(vec![
                "transfer needs at least two tasks".into()
            ]));
        }
        let mut inputs = Vec::new();
        for &t in &self.config.tasks {
            inputs.extend(self.window_inputs(t));
            inputs.push((self.layout.checkpoint(t), TRAIN_ENCODER));
        }
        let mut spec = self.metrics_spec(TRANSFER, "transfer", inputs);
        let trains: Vec<String> = self
            .config
            .tasks
            .iter()
            .map(|&t| hex(&self.config.train_digest(t)))
            .collect();
        spec.digest = digest(TRANSFER, &(hex(&spec.digest), trains));
        let outcome = self.run_stage(spec, || {
            let mut rows = Vec::new();
            for (source, target) in self.transfer_pairs() {
                let path = self.layout.checkpoint(source);
                let ckpt = load_checkpoint(&path)?;
                check_digest(
                    &path,
                    &ckpt.config_digest,
                    &self.config.train_digest(source),
                    TRAIN_ENCODER,
                )?;
                let windows = self.load_task_windows(target)?;
                rows.push(transfer_experiment(
                    &ckpt,
                    &windows,
                    &Self::transfer_label(source, target),
                    &self.config.experiment(TRANSFER, target),
                )?);
            }
            Metrics::write_files(
                &rows,
                &self.layout.metrics_csv("transfer"),
                &self.layout.metrics_json("transfer"),
            )?;
            Ok(rows
                .iter()
                .map(|m| m.table_row())
                .collect::<Vec<_>>()
                .join("\n"))
        })?;
        Ok(vec![outcome])
    }

    /// 2-D PCA scatter of each task's representations.
    pub fn project(&self) -> Result<Vec<StageOutcome>> {
        self.config
            .tasks
            .iter()
            .map(|&task| {
                let l = &self.layout;
                let spec = StageSpec {
                    stage: PROJECT,
                    target: task.to_string(),
                    digest: digest(PROJECT, &hex(&self.config.embed_digest(task))),
                    seed: 0,
                    inputs: vec![
                        (l.embeddings(task), EMBED),
                        (l.embedding_index(task), EMBED),
                    ],
                    optional: Vec::new(),
                    outputs: vec![l.scatter(task)],
                    manifest: l.manifest_for(&l.scatter(task)),
                };
                self.run_stage(spec, || {
                    let p = pca_project(&self.load_task_embeddings(task)?)?;
                    write_text(&l.scatter(task), &scatter_csv(&p))?;
                    Ok(format!(
                        "explained variance {} / {}",
                        crate::downstream::format_number(p.explained[0]),
                        crate::downstream::format_number(p.explained[1])
                    ))
                })
            })
            .collect()
    }

    fn read_metrics(&self, name: &str) -> Result<Option<Vec<Metrics>>> {
        let path = self.layout.metrics_json(name);
        if path.is_file() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Assembles the report (without writing it).
    pub fn build_report(&self) -> Result<Report> {
        let cfg = &self.config;
        let mut report = Report {
            config_digest: hex(&cfg.config_digest()),
            ..Report::default()
        };
        report.seeds.push(("master".into(), cfg.seed));
        for &task in &cfg.tasks {
            for stage in [
                cfg.windows_command(),
                TRAIN_ENCODER,
                EVAL_GESTURE,
                EVAL_SKILL,
            ] {
                report
                    .seeds
                    .push((format!("{stage}/{task}"), cfg.stage_seed(stage, task)));
            }
        }
        for name in ["gesture", "skill", "transfer"] {
            if let Some(rows) = self.read_metrics(name)? {
                report.experiments.insert(name.into(), rows);
            }
        }
        let mut gesture_counts = BTreeMap::new();
        for &task in &cfg.tasks {
            let emb = self.load_task_embeddings(task)?;
            gesture_counts.insert(task, emb.gestures.iter().collect::<BTreeSet<_>>().len());
            report
                .projections
                .insert(task.to_string(), pca_project(&emb)?);
            match SkillStructure::compute(&emb) {
                Ok(s) => {
                    report.skill_structure.insert(task.to_string(), s);
                }
                // Real data may lack one of the pure skill classes.
                Err(Error::Contract(_)) if !task.is_synthetic() => {}
                Err(e) => return Err(e),
            }
        }
        if matches!(cfg.data, DataSource::Synthetic { .. }) {
            report.gates = self.gates(&report, &gesture_counts)?;
        }
        Ok(report)
    }

    fn gates(&self, report: &Report, gesture_counts: &BTreeMap<Task, usize>) -> Result<Vec<Gate>> {
        let mut gates = Vec::new();
        let in_task: BTreeMap<String, f64> = report
            .experiments
            .get("gesture")
            .map(|rows| {
                rows.iter()
                    .map(|m| (m.dataset.clone(), m.accuracy.mean))
                    .collect()
            })
            .unwrap_or_default();
        for &task in &self.config.tasks {
            let curve_path = self.layout.loss_curve(task);
            if curve_path.is_file() {
                let curve = read_loss_curve(&curve_path)?;
                if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                    gates.push(Gate::below(
                        format!("{task} loss ratio"),
                        last / first,
                        LOSS_RATIO_GATE,
                    ));
                }
                let steps = curve.non_monotone_steps(MONOTONE_BURN_IN_EPOCHS);
                gates.push(Gate::new(
                    format!("{task} loss increases after epoch {MONOTONE_BURN_IN_EPOCHS}"),
                    steps <= MAX_NON_MONOTONE_STEPS,
                    format!("{steps} <= {MAX_NON_MONOTONE_STEPS}"),
                ));
            }
            if let Some(&acc) = in_task.get(task.display_name()) {
                gates.push(Gate::at_least(
                    format!("{task} gesture accuracy"),
                    acc,
                    GESTURE_ACCURACY_GATE,
                ));
            }
            if let Some(s) = report.skill_structure.get(task.name()) {
                gates.push(Gate::above(
                    format!("{task} expert-vs-beginner silhouette"),
                    s.expert_vs_beginner,
                    SKILL_SILHOUETTE_GATE,
                ));
                let by = |k: Skill| s.by_skill.get(&k).copied().unwrap_or(f64::NAN);
                gates.push(Gate::new(
                    format!("{task} intermediate silhouette below expert and beginner"),
                    s.intermediate_below_pure() == Some(true),
                    format!(
                        "I {} vs E {} / B {}",
                        crate::downstream::format_number(by(Skill::Intermediate)),
                        crate::downstream::format_number(by(Skill::Expert)),
                        crate::downstream::format_number(by(Skill::Beginner))
                    ),
                ));
            }
        }
        if let Some(rows) = report.experiments.get("transfer") {
            for (source, target) in self.transfer_pairs() {
                let label = Self::transfer_label(source, target);
                let Some(row) = rows.iter().find(|m| m.dataset == label) else {
                    continue;
                };
                let chance = 1.0 / gesture_counts.get(&target).copied().unwrap_or(1).max(1) as f64;
                gates.push(Gate::at_least(
                    format!("{label} transfer accuracy vs chance"),
                    row.accuracy.mean,
                    TRANSFER_CHANCE_FACTOR * chance,
                ));
                if let Some(&own) = in_task.get(target.display_name()) {
                    gates.push(Gate::below(
                        format!("{label} transfer accuracy vs in-task"),
                        row.accuracy.mean,
                        own,
                    ));
                }
            }
        }
        Ok(gates)
    }

    /// Writes metrics tables, scatter CSVs and the summary with gates.
    pub fn report(&self) -> Result<(Vec<StageOutcome>, Report)> {
        let l = &self.layout;
        let mut inputs = self.embedding_inputs();
        inputs.push((l.metrics_json("gesture"), EVAL_GESTURE));
        let mut optional = vec![l.metrics_json("skill"), l.metrics_json("transfer")];
        optional.extend(self.config.tasks.iter().map(|&t| l.loss_curve(t)));
        let dir = l.report_dir();
        let mut outputs = Vec::new();
        let mut experiments = vec!["gesture"];
        experiments.extend(
            ["skill", "transfer"]
                .into_iter()
                .filter(|n| l.metrics_json(n).is_file()),
        );
        experiments.sort_unstable();
        for name in experiments {
            outputs.push(dir.join(format!("metrics_{name}.csv")));
            outputs.push(dir.join(format!("metrics_{name}.json")));
        }
        outputs.extend(
            self.config
                .tasks
                .iter()
                .map(|t| dir.join(format!("scatter_{t}.csv"))),
        );
        outputs.push(dir.join("summary.txt"));
        let spec = StageSpec {
            stage: REPORT,
            target: "all".into(),
            digest: digest(REPORT, &hex(&self.config.config_digest())),
            seed: self.config.seed,
            inputs,
            optional,
            outputs,
            manifest: dir.join("report.manifest.json"),
        };
        let mut built = None;
        let outcome = self.run_stage(spec, || {
            let report = self.build_report()?;
            emit_report(&report, &dir)?;
            let failed = report.gates.iter().filter(|g| !g.passed).count();
            let note = format!("{} gates, {failed} failed", report.gates.len());
            built = Some(report);
            Ok(note)
        })?;
        let report = match built {
            Some(r) => r,
            None => self.build_report()?,
        };
        Ok((vec![outcome], report))
    }

    /// Every stage in order; transfer only with two or more tasks.
    pub fn run_all(&self) -> Result<(Vec<StageOutcome>, Report)> {
        let mut outcomes = match self.config.data {
            DataSource::Synthetic { .. } => self.gen_data()?,
            DataSource::Jigsaws { .. } => self.ingest()?,
        };
        outcomes.extend(self.train_encoder()?);
        outcomes.extend(self.embed()?);
        outcomes.extend(self.eval_gesture()?);
        outcomes.extend(self.eval_skill()?);
        if self.config.tasks.len() >= 2 {
            outcomes.extend(self.transfer()?);
        }
        outcomes.extend(self.project()?);
        let (r, report) = self.report()?;
        outcomes.extend(r);
        Ok((outcomes, report))
    }
}
