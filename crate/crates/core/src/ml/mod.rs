//! Per-participant gradient-boosted regression trees (squared error), their
//! gain-based feature importances and a k-fold accuracy report.

mod accuracy;
mod importance;
mod table;
mod tree;

pub use accuracy::{accuracy, AccuracyReport, ACCURACY_DEFINITION};
pub use importance::{importance, ImportanceMap, ImportanceRejection};
pub use table::{build_table, DroppedDay, TrainingTable};
pub use tree::{train, Hyperparams, Node, TrainedModel, Tree};

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlError {
    #[error("insufficient-training-data: {rows} usable rows, at least {required} required")]
    InsufficientTrainingData { rows: usize, required: usize },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("too few rows for {k}-fold accuracy: {rows} rows, need at least {required}")]
    TooFewRowsForFolds { k: usize, rows: usize, required: usize },
}
