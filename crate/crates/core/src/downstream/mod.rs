//! Gradient-boosted trees on frozen representations and the evaluation
//! protocol built on them (repeated random splits, gesture, skill and
//! transfer experiments).

mod experiment;
mod gbt;
mod metrics;

pub use experiment::{
    class_ids, run_split_experiment, split_indices, transfer_experiment, ExperimentConfig,
    SplitUnit,
};
pub use gbt::{gbt_predict, gbt_train, ClassId, GBTConfig, GBTModel, Node, Tree};
pub use metrics::{evaluate, format_number, MeanStd, Metrics, SplitMetrics, METRICS_CSV_HEADER};
