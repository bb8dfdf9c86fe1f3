//! End-to-end pipeline: dataset ingestion, the stage DAG with manifests,
//! benchmarking and the experiment report.

mod benchmark;
mod config;
mod ingest;
mod manifest;
mod report;
mod stages;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::evaluator::EvaluatorError;
use crate::gateway::GatewayError;
use crate::io::IoError;
use crate::metrics::MetricsError;
use crate::optimizer::OptimizerError;
use crate::selection::SelectionError;

pub use benchmark::{accuracy_rows, BenchmarkRecord, TaskAccuracy};
pub use config::{
    BackendConfig, BenchmarkConfig, DataConfig, DatasetSpec, EvaluatorConfig, GatewaySettings, OptimizeConfig,
    Overrides, RunConfig, SelectionConfig, SplitPolicy,
};
pub use ingest::{ingest, parse_queries, split_sizes};
pub use manifest::{Manifest, StageUsage};
pub use report::{render_table, EvaluatorSummary, OptimizationSummary, Report, SelectionSummary, WeightSummary};
pub use stages::{
    ItemFailure, OptimizedRecord, Pipeline, SelectionArtifact, StageStatus, TrainingSummary,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("duplicate query id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("missing dependency: {artifact} (expected {path})")]
    MissingDependency { artifact: String, path: String },
    #[error("manifest mismatch for stage {stage}: {detail}")]
    ManifestMismatch { stage: String, detail: String },
    #[error("the {0} split is empty")]
    EmptySplit(String),
    #[error("stage {stage}: {failed} item(s) failed on backend calls; first: {first}")]
    StageFailures { stage: String, failed: usize, first: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

impl HarnessError {
    pub fn is_backend_failure(&self) -> bool {
        match self {
            HarnessError::StageFailures { .. } => true,
            HarnessError::Gateway(e)
            | HarnessError::Corpus(CorpusError::Gateway(e))
            | HarnessError::Metrics(MetricsError::Gateway(e))
            | HarnessError::Evaluator(EvaluatorError::Gateway(e)) => e.is_backend_failure(),
            HarnessError::Optimizer(e) => e.is_backend_failure(),
            _ => false,
        }
    }

    /// 1 for validation errors, 2 for backend failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_backend_failure() {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    BuildPool,
    Measure,
    SelectMetrics,
    TrainEvaluator,
    Optimize,
    Benchmark,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::BuildPool,
        Stage::Measure,
        Stage::SelectMetrics,
        Stage::TrainEvaluator,
        Stage::Optimize,
        Stage::Benchmark,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildPool => "build-pool",
            Stage::Measure => "measure",
            Stage::SelectMetrics => "select-metrics",
            Stage::TrainEvaluator => "train-evaluator",
            Stage::Optimize => "optimize",
            Stage::Benchmark => "benchmark",
            Stage::Report => "report",
        }
    }

    /// Name of the artifact downstream stages ask for.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::BuildPool => "pool",
            Stage::Measure => "measurements",
            Stage::SelectMetrics => "selection",
            Stage::TrainEvaluator => "evaluator",
            Stage::Optimize => "optimized",
            Stage::Benchmark => "benchmark",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::BuildPool => &[],
            Stage::Measure => &[Stage::BuildPool],
            Stage::SelectMetrics => &[Stage::BuildPool, Stage::Measure],
            Stage::TrainEvaluator => &[Stage::BuildPool, Stage::Measure, Stage::SelectMetrics],
            Stage::Optimize => &[Stage::BuildPool, Stage::TrainEvaluator],
            Stage::Benchmark => &[Stage::BuildPool, Stage::Optimize],
            Stage::Report => {
                &[Stage::BuildPool, Stage::Measure, Stage::SelectMetrics, Stage::TrainEvaluator, Stage::Optimize, Stage::Benchmark]
            }
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}
