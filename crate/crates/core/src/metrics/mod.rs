//! Execution-derived metrics and quality labels for (query, prompt) pairs.

mod canonical;
mod estimators;
mod judge;
mod measure;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;

pub use canonical::{canonicalize_answer, AnswerSchema, SchemaRegistry};
pub use estimators::{answer_entropy, mutual_information, nll_from_logprobs, stability_score, AnswerDistribution};
pub use judge::{judge_scores, parse_judge_scores, JudgeScores};
pub use measure::{measure_candidate, nll_score, query_baseline, EstimatorSettings, Measurement, QueryBaseline};
pub use trace::{collect_trace, execution_messages, ExecutionTrace, TraceSample};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("stability needs at least 2 samples, got {n}")]
    DegenerateTrace { n: usize },
    #[error("embedding {index} has zero norm")]
    ZeroVector { index: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no answer schema registered for task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Names of every metric the pipeline can compute, in canonical feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    NllScore,
    StabilityScore,
    MiScore,
    QueryEntropy,
    PromptEntropy,
    Clarity,
    Coherence,
    Specificity,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::NllScore,
        MetricName::StabilityScore,
        MetricName::MiScore,
        MetricName::QueryEntropy,
        MetricName::PromptEntropy,
        MetricName::Clarity,
        MetricName::Coherence,
        MetricName::Specificity,
    ];

    /// The four metrics the evaluator predicts and the optimizer diagnoses.
    pub const CORE: [MetricName; 4] =
        [MetricName::NllScore, MetricName::StabilityScore, MetricName::MiScore, MetricName::QueryEntropy];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::NllScore => "nll_score",
            MetricName::StabilityScore => "stability_score",
            MetricName::MiScore => "mi_score",
            MetricName::QueryEntropy => "query_entropy",
            MetricName::PromptEntropy => "prompt_entropy",
            MetricName::Clarity => "clarity",
            MetricName::Coherence => "coherence",
            MetricName::Specificity => "specificity",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Selection-stage extras. Judge scores are `None` when the judge output
/// could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedMetrics {
    pub prompt_entropy: f64,
    pub clarity: Option<f64>,
    pub coherence: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub nll_score: f64,
    pub stability_score: f64,
    /// May be negative: the plug-in estimate of the entropy reduction.
    pub mi_score: f64,
    pub query_entropy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended: Option<ExtendedMetrics>,
}

impl MetricVector {
    /// Value of `name`, or `None` when it was not computed (or is missing).
    pub fn get(&self, name: MetricName) -> Option<f64> {
        let ext = self.extended.as_ref();
        match name {
            MetricName::NllScore => Some(self.nll_score),
            MetricName::StabilityScore => Some(self.stability_score),
            MetricName::MiScore => Some(self.mi_score),
            MetricName::QueryEntropy => Some(self.query_entropy),
            MetricName::PromptEntropy => ext.map(|e| e.prompt_entropy),
            MetricName::Clarity => ext.and_then(|e| e.clarity),
            MetricName::Coherence => ext.and_then(|e| e.coherence),
            MetricName::Specificity => ext.and_then(|e| e.specificity),
        }
    }

    pub fn core(&self) -> [f64; 4] {
        [self.nll_score, self.stability_score, self.mi_score, self.query_entropy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityLabel {
    pub mean_accuracy: f64,
    pub is_good: bool,
}

impl QualityLabel {
    pub fn from_accuracy(mean_accuracy: f64) -> Self {
        Self { mean_accuracy, is_good: mean_accuracy > 0.5 }
    }
}
