use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pca::Projection2D;
use super::silhouette::{silhouette, silhouette_by_class};
use crate::dataio::{Gesture, Skill};
use crate::downstream::{class_ids, format_number, ClassId, Metrics};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::selfsup::Embeddings;

pub const SCATTER_CSV_HEADER: &str = "x,y,gesture,skill,trial_id";

/// A named pass/fail check shown in the summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Gate {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Gate {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(
            name,
            value >= threshold,
            format!("{} >= {}", format_number(value), format_number(threshold)),
        )
    }

    /// Passes when `value > threshold`.
    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(
            name,
            value > threshold,
            format!("{} > {}", format_number(value), format_number(threshold)),
        )
    }

    /// Passes when `value < threshold`.
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(
            name,
            value < threshold,
            format!("{} < {}", format_number(value), format_number(threshold)),
        )
    }

    /// `[PASS] name: detail` or `[FAIL] name: detail`.
    pub fn line(&self) -> String {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        format!("[{mark}] {}: {}", self.name, self.detail)
    }
}

/// Skill cluster structure of a representation set, measured in the full
/// representation space.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillStructure {
    /// Mean silhouette over Expert and Beginner windows only.
    pub expert_vs_beginner: f64,
    /// Mean silhouette of each skill with all three skills labeled.
    pub by_skill: BTreeMap<Skill, f64>,
    /// Expert-vs-Beginner silhouette within each gesture; `None` when a
    /// gesture lacks two windows of either skill.
    pub by_gesture: BTreeMap<Gesture, Option<f64>>,
}

impl SkillStructure {
    pub fn compute(embeddings: &Embeddings) -> Result<Self> {
        let labels = class_ids(&embeddings.skills);
        let pure = [ClassId::from(Skill::Expert), ClassId::from(Skill::Beginner)];
        let expert_vs_beginner = silhouette(&embeddings.matrix, &labels, &pure)?;
        let present: Vec<ClassId> = Skill::ALL
            .iter()
            .map(|&s| ClassId::from(s))
            .filter(|c| labels.iter().filter(|&l| l == c).count() >= 2)
            .collect();
        let by_class = silhouette_by_class(&embeddings.matrix, &labels, &present)?;
        let by_skill = Skill::ALL
            .iter()
            .filter_map(|&s| by_class.get(&ClassId::from(s)).map(|&v| (s, v)))
            .collect();

        let mut by_gesture = BTreeMap::new();
        let d = embeddings.dim();
        for g in embeddings
            .gestures
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
        {
            let rows: Vec<usize> = (0..embeddings.len())
                .filter(|&i| embeddings.gestures[i] == g)
                .collect();
            let mut data = Vec::with_capacity(rows.len() * d);
            for &i in &rows {
                data.extend_from_slice(embeddings.row(i));
            }
            let sub = Tensor::from_vec(&[rows.len(), d], data)?;
            let sub_labels: Vec<ClassId> = rows.iter().map(|&i| labels[i]).collect();
            by_gesture.insert(g, silhouette(&sub, &sub_labels, &pure).ok());
        }
        Ok(SkillStructure {
            expert_vs_beginner,
            by_skill,
            by_gesture,
        })
    }

    /// Whether Intermediate's mean silhouette is below both Expert's and
    /// Beginner's; `None` if any of the three is missing.
    pub fn intermediate_below_pure(&self) -> Option<bool> {
        let get = |s| self.by_skill.get(&s).copied();
        let i = get(Skill::Intermediate)?;
        Some(i < get(Skill::Expert)? && i < get(Skill::Beginner)?)
    }
}

/// Everything the report emitter writes.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub config_digest: String,
    /// Named seeds in the order they should be listed.
    pub seeds: Vec<(String, u64)>,
    /// Experiment name (e.g. `gesture`) to one metrics row per dataset.
    pub experiments: BTreeMap<String, Vec<Metrics>>,
    /// Task name to its projection.
    pub projections: BTreeMap<String, Projection2D>,
    pub skill_structure: BTreeMap<String, SkillStructure>,
    pub gates: Vec<Gate>,
}

impl Report {
    pub fn all_gates_pass(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    /// Plain structured text listing digest, seeds, tables, cluster scores
    /// and gates.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "config_digest: {}", self.config_digest).unwrap();
        writeln!(w, "seeds:").unwrap();
        for (name, seed) in &self.seeds {
            writeln!(w, "  {name}: {seed}").unwrap();
        }
        writeln!(w, "experiments:").unwrap();
        for (name, rows) in &self.experiments {
            writeln!(w, "  {name}:").unwrap();
            writeln!(w, "    Dataset & Accuracy & Precision & Recall & F1").unwrap();
            for m in rows {
                writeln!(w, "    {}", m.table_row()).unwrap();
            }
        }
        writeln!(w, "projections:").unwrap();
        for (task, p) in &self.projections {
            writeln!(
                w,
                "  {task}: {} points, explained variance {} / {}",
                p.coords.len(),
                format_number(p.explained[0]),
                format_number(p.explained[1])
            )
            .unwrap();
        }
        writeln!(w, "skill_structure:").unwrap();
        for (task, st) in &self.skill_structure {
            writeln!(w, "  {task}:").unwrap();
            writeln!(
                w,
                "    expert_vs_beginner: {}",
                format_number(st.expert_vs_beginner)
            )
            .unwrap();
            for (skill, v) in &st.by_skill {
                writeln!(w, "    {}: {}", skill.name(), format_number(*v)).unwrap();
            }
            for (g, v) in &st.by_gesture {
                let v = v.map_or_else(|| "n/a".to_string(), format_number);
                writeln!(w, "    {g} expert_vs_beginner: {v}").unwrap();
            }
        }
        writeln!(w, "gates:").unwrap();
        for g in &self.gates {
            writeln!(w, "  {}", g.line()).unwrap();
        }
        s
    }
}

/// Scatter rows `x,y,gesture,skill,trial_id` with a header.
pub fn scatter_csv(p: &Projection2D) -> String {
    let mut out = format!("{SCATTER_CSV_HEADER}\n");
    for (i, [x, y]) in p.coords.iter().enumerate() {
        writeln!(
            out,
            "{x},{y},{},{},{}",
            p.gestures[i],
            p.skills[i].name(),
            p.trial_ids[i]
        )
        .unwrap();
    }
    out
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `metrics_<experiment>.csv/.json`, `scatter_<task>.csv` and
/// `summary.txt` into `dir`, returning the paths in write order.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, rows) in &report.experiments {
        let csv = dir.join(format!("metrics_{name}.csv"));
        let json = dir.join(format!("metrics_{name}.json"));
        Metrics::write_files(rows, &csv, &json)?;
        written.extend([csv, json]);
    }
    for (task, p) in &report.projections {
        write(
            dir.join(format!("scatter_{task}.csv")),
            &scatter_csv(p),
            &mut written,
        )?;
    }
    write(dir.join("summary.txt"), &report.summary(), &mut written)?;
    Ok(written)
}
