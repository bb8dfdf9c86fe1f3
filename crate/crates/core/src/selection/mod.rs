//! Metric selection: a gradient-boosted tree classifier over prompt
//! embeddings and candidate metrics, ranked by gain importance.

mod gbdt;
mod importance;
mod matrix;

use thiserror::Error;

pub use gbdt::{fit, fit_traced, predict_proba, predict_named, BoostedTreeModel, FitTrace, GbdtParams, Node, NodeSplit, RoundTrace, Tree};
pub use importance::{column_gains, gain_importance, select_metrics, select_with_fallback, GainImportance, ImportanceEntry, Selection};
pub use matrix::{FeatureMatrix, EMBEDDING_GROUP};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("feature matrix has no rows")]
    EmptyMatrix,
    #[error("all labels belong to one class")]
    SingleClass,
    #[error("row does not match the model schema: {0}")]
    SchemaMismatch(String),
    #[error("model has no splits, so gain shares are undefined")]
    UndefinedShares,
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
}
