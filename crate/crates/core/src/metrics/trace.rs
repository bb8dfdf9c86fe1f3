use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{canonicalize_answer, AnswerDistribution, AnswerSchema, MetricsError, QualityLabel};
use crate::corpus::Query;
use crate::gateway::{Gateway, GenerationRequest, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub raw_text: String,
    pub canonical_answer: String,
    pub is_correct: bool,
}

/// `n` sampled responses for one (query, prompt) pair. `prompt_id` is empty
/// for prompt-free traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub query_id: String,
    pub prompt_id: String,
    pub samples: Vec<TraceSample>,
    pub n: usize,
    pub temperature: f64,
}

impl ExecutionTrace {
    /// Build a trace from raw responses, canonicalizing and marking each one.
    pub fn from_responses(
        query_id: &str,
        prompt_id: &str,
        responses: impl IntoIterator<Item = String>,
        gold: &str,
        schema: &AnswerSchema,
        temperature: f64,
    ) -> Result<Self, MetricsError> {
        let gold = canonicalize_answer(gold, schema);
        let samples: Vec<TraceSample> = responses
            .into_iter()
            .map(|raw_text| {
                let canonical_answer = canonicalize_answer(&raw_text, schema);
                let is_correct = canonical_answer == gold;
                TraceSample { raw_text, canonical_answer, is_correct }
            })
            .collect();
        if samples.is_empty() {
            return Err(MetricsError::EmptyTrace);
        }
        Ok(Self {
            query_id: query_id.to_string(),
            prompt_id: prompt_id.to_string(),
            n: samples.len(),
            samples,
            temperature,
        })
    }

    pub fn distribution(&self) -> Result<AnswerDistribution, MetricsError> {
        let answers: Vec<&str> = self.samples.iter().map(|s| s.canonical_answer.as_str()).collect();
        AnswerDistribution::from_answers(&answers)
    }

    pub fn label(&self) -> QualityLabel {
        let correct = self.samples.iter().filter(|s| s.is_correct).count();
        QualityLabel::from_accuracy(correct as f64 / self.n.max(1) as f64)
    }

    /// Most frequent canonical answer; ties go to the lexicographically smallest.
    pub fn modal_answer(&self) -> Option<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.canonical_answer.as_str()).or_default() += 1;
        }
        let mut best: Option<(&str, usize)> = None;
        for (answer, c) in counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((answer, c));
            }
        }
        best.map(|(a, _)| a)
    }
}

/// Messages for executing `query` under `prompt` (system role), or prompt-free.
pub fn execution_messages(prompt: Option<&str>, query: &str) -> Vec<Message> {
    match prompt {
        Some(p) => vec![Message::system(p), Message::user(query)],
        None => vec![Message::user(query)],
    }
}

/// Sample `n` responses from the execution model and canonicalize them.
pub fn collect_trace(
    gateway: &Gateway,
    query: &Query,
    prompt: Option<(&str, &str)>,
    schema: &AnswerSchema,
    n: u32,
    temperature: f64,
    max_tokens: u32,
) -> Result<ExecutionTrace, MetricsError> {
    let request = GenerationRequest::new(execution_messages(prompt.map(|p| p.1), &query.text))
        .temperature(temperature)
        .samples(n)
        .max_tokens(max_tokens);
    let result = gateway.generate(&request)?;
    ExecutionTrace::from_responses(
        &query.id,
        prompt.map_or("", |p| p.0),
        result.samples.into_iter().map(|s| s.text),
        &query.gold_answer,
        schema,
        temperature,
    )
}
