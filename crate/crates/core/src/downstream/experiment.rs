use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate, gbt_predict, gbt_train, ClassId, GBTConfig, Metrics};
use crate::dataio::GestureWindow;
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::numerics::Tensor;
use crate::selfsup::{embed_dataset, Embeddings};

/// Attempts per split at drawing a training set that covers every class.
pub const MAX_SPLIT_ATTEMPTS: usize = 100;

/// What a train/test split partitions: individual windows, or whole trials
/// (no near-duplicate windows of one trial on both sides).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    #[default]
    Window,
    Trial,
}

impl std::str::FromStr for SplitUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(SplitUnit::Window),
            "trial" => Ok(SplitUnit::Trial),
            _ => Err(Error::Config(format!(
                "unknown split unit `{s}` (window or trial)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub gbt: GBTConfig,
    pub n_splits: usize,
    pub test_fraction: f64,
    pub split_by: SplitUnit,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gbt: GBTConfig::default(),
            n_splits: 5,
            test_fraction: 0.2,
            split_by: SplitUnit::Window,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = match self.gbt.validate() {
            Err(Error::Validation(p)) => p,
            _ => Vec::new(),
        };
        if self.n_splits == 0 {
            problems.push("n_splits must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            problems.push(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Maps labels onto classifier class ids.
pub fn class_ids<T: Copy + Into<ClassId>>(labels: &[T]) -> Vec<ClassId> {
    labels.iter().map(|&l| l.into()).collect()
}

/// Order-independent pseudo-random key: hashing content instead of position
/// makes splits (and so metrics) invariant to the order of the samples.
fn sample_key(seed: u64, attempt: usize, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((attempt as u64).to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn row_bytes(x: &Tensor, i: usize) -> Vec<u8> {
    let d = x.shape()[1];
    x.data()[i * d..(i + 1) * d]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

fn test_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Train and test row indices of split `split`, both sorted. The training
/// side always contains every class present in `labels`.
pub fn split_indices(
    x: &Tensor,
    labels: &[ClassId],
    groups: &[String],
    cfg: &ExperimentConfig,
    split: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let base = crate::util::derive_seed(cfg.seed, &format!("split/{split}"));
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut is_test = vec![false; n];
        match cfg.split_by {
            SplitUnit::Window => {
                let mut keyed: Vec<([u8; 32], usize)> = (0..n)
                    .map(|i| {
                        let row = row_bytes(x, i);
                        let label = labels[i].to_le_bytes();
                        (
                            sample_key(base, attempt, &[&row, &label, groups[i].as_bytes()]),
                            i,
                        )
                    })
                    .collect();
                keyed.sort();
                for &(_, i) in keyed.iter().take(test_count(n, cfg.test_fraction)) {
                    is_test[i] = true;
                }
            }
            SplitUnit::Trial => {
                let mut names: Vec<&str> = groups.iter().map(String::as_str).collect();
                names.sort_unstable();
                names.dedup();
                if names.len() < 2 {
                    return Err(Error::InsufficientData(
                        "trial-level splits need at least 2 trials".into(),
                    ));
                }
                let mut keyed: Vec<([u8; 32], &str)> = names
                    .iter()
                    .map(|g| (sample_key(base, attempt, &[g.as_bytes()]), *g))
                    .collect();
                keyed.sort();
                let chosen: Vec<&str> = keyed
                    .iter()
                    .take(test_count(names.len(), cfg.test_fraction))
                    .map(|&(_, g)| g)
                    .collect();
                for (i, g) in groups.iter().enumerate() {
                    is_test[i] = chosen.contains(&g.as_str());
                }
            }
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let test: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
        let mut covered: Vec<ClassId> = train.iter().map(|&i| labels[i]).collect();
        covered.sort_unstable();
        covered.dedup();
        if covered == classes && !test.is_empty() {
            return Ok((train, test));
        }
    }
    Err(Error::InsufficientData(format!(
        "no split out of {MAX_SPLIT_ATTEMPTS} attempts puts every class in the training set"
    )))
}

fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let d = x.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * d);
    for &i in rows {
        data.extend_from_slice(&x.data()[i * d..(i + 1) * d]);
    }
    Tensor::from_vec(&[rows.len(), d], data).expect("row count times width")
}

/// Trains and evaluates a fresh classifier on `n_splits` seeded random
/// splits and aggregates the metrics.
pub fn run_split_experiment(
    embeddings: &Embeddings,
    labels: &[ClassId],
    dataset: &str,
    cfg: &ExperimentConfig,
) -> Result<Metrics> {
    cfg.validate()?;
    let x = &embeddings.matrix;
    if labels.len() != embeddings.len() || x.rank() != 2 || x.shape()[0] != labels.len() {
        return Err(Error::contract(format!(
            "{} labels for {} representations",
            labels.len(),
            embeddings.len()
        )));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{dataset}: need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let mut splits = Vec::with_capacity(cfg.n_splits);
    for s in 0..cfg.n_splits {
        let (train, test) = split_indices(x, labels, &embeddings.trial_ids, cfg, s)?;
        let y_train: Vec<ClassId> = train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<ClassId> = test.iter().map(|&i| labels[i]).collect();
        let model = gbt_train(&select_rows(x, &train), &y_train, &cfg.gbt)?;
        let (pred, _) = gbt_predict(&model, &select_rows(x, &test))?;
        splits.push(evaluate(&y_test, &pred, &classes)?);
    }
    Ok(Metrics::from_splits(dataset, splits))
}

/// Embeds task-B windows with a task-A encoder (frozen) and runs the gesture
/// split experiment on the result.
pub fn transfer_experiment(
    checkpoint: &Checkpoint,
    windows: &[GestureWindow],
    dataset: &str,
    cfg: &ExperimentConfig,
) -> Result<Metrics> {
    let channels = checkpoint.encoder.in_channels();
    if let Some(w) = windows
        .iter()
        .find(|w| w.flows.rank() != 3 || w.flows.shape()[0] != channels)
    {
        return Err(Error::Transfer(format!(
            "encoder expects {channels}-channel flow stacks but window from {} has shape {:?}",
            w.trial_id,
            w.flows.shape()
        )));
    }
    let embeddings = embed_dataset(windows, &checkpoint.encoder)?;
    let labels = class_ids(&embeddings.gestures);
    run_split_experiment(&embeddings, &labels, dataset, cfg)
}
