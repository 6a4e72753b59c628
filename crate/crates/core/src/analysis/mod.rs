//! Cluster-structure analysis of representations: a 2-D PCA projection for
//! plotting, silhouette scores for assertable cluster claims, and report
//! emission.

mod pca;
mod report;
mod silhouette;

pub use pca::{pca_project, pca_top2, Projection2D, PCA_MAX_ITERATIONS, PCA_TOLERANCE};
pub use report::{emit_report, scatter_csv, Gate, Report, SkillStructure, SCATTER_CSV_HEADER};
pub use silhouette::{silhouette, silhouette_by_class, silhouette_samples};
