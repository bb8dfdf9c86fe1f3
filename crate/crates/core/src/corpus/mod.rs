//! Queries, prompt candidates and the prompt-pool builder.

mod pool;
mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;

pub use pool::{
    build_pool, generate_static, generate_styled, recombine, Pairing, PoolConfig, PoolFailure, PoolOutcome,
    RecombinationRecord,
};
pub use templates::{StyleGuide, Template, TemplateRegistry};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("template registry is empty")]
    EmptyRegistry,
    #[error("generation failed: {0}")]
    GenerationFailure(String),
    #[error("could not find two segments in decomposition of {prompt_id}")]
    DecompositionFailure { prompt_id: String },
    #[error("recombination parents must differ (got {0} twice)")]
    IdenticalParents(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One task instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub gold_answer: String,
    pub task: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleTag {
    StepByStep,
    ExpertDiscussion,
    Socratic,
    Creative,
    Verification,
    Contrastive,
}

impl StyleTag {
    pub const ALL: [StyleTag; 6] = [
        StyleTag::StepByStep,
        StyleTag::ExpertDiscussion,
        StyleTag::Socratic,
        StyleTag::Creative,
        StyleTag::Verification,
        StyleTag::Contrastive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StyleTag::StepByStep => "step_by_step",
            StyleTag::ExpertDiscussion => "expert_discussion",
            StyleTag::Socratic => "socratic",
            StyleTag::Creative => "creative",
            StyleTag::Verification => "verification",
            StyleTag::Contrastive => "contrastive",
        }
    }
}

impl fmt::Display for StyleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StyleTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StyleTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown style {s:?}"))
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSource {
    StaticTemplate { name: String },
    LlmStyle { style: StyleTag },
    Recombination { parent_a: String, parent_b: String },
}

impl PromptSource {
    /// Sort rank used for order-stable pool assembly.
    pub fn rank(&self) -> u8 {
        match self {
            PromptSource::StaticTemplate { .. } => 0,
            PromptSource::LlmStyle { .. } => 1,
            PromptSource::Recombination { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: String,
    pub query_id: String,
    pub text: String,
    pub source: PromptSource,
    pub generation_temperature: f64,
}
