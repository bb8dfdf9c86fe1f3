use serde::{Deserialize, Serialize};

use super::{
    answer_entropy, collect_trace, execution_messages, judge_scores, mutual_information, nll_from_logprobs,
    stability_score, AnswerDistribution, AnswerSchema, ExecutionTrace, ExtendedMetrics, MetricVector,
    MetricsError, QualityLabel,
};
use crate::corpus::Query;
use crate::gateway::Gateway;

/// Sampling settings shared by every trace of a run. Recorded in the
/// measurement manifest so downstream stages can detect mismatches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub n_samples: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Also compute prompt entropy and judge scores (selection stage).
    pub extended: bool,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self { n_samples: 10, temperature: 0.7, max_tokens: 256, extended: true }
    }
}

/// The prompt-free trace of a query, shared by all of its candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBaseline {
    pub query_id: String,
    pub trace: ExecutionTrace,
    pub query_entropy: f64,
}

impl QueryBaseline {
    pub fn from_trace(trace: ExecutionTrace) -> Result<Self, MetricsError> {
        let query_entropy = answer_entropy(&trace.distribution()?);
        Ok(Self { query_id: trace.query_id.clone(), trace, query_entropy })
    }

    pub fn distribution(&self) -> Result<AnswerDistribution, MetricsError> {
        self.trace.distribution()
    }
}

pub fn query_baseline(
    gateway: &Gateway,
    query: &Query,
    schema: &AnswerSchema,
    settings: &EstimatorSettings,
) -> Result<QueryBaseline, MetricsError> {
    let trace = collect_trace(gateway, query, None, schema, settings.n_samples, settings.temperature, settings.max_tokens)?;
    QueryBaseline::from_trace(trace)
}

/// Mean negated logprob of the gold answer forced after (prompt, query).
pub fn nll_score(gateway: &Gateway, query: &str, prompt: &str, gold: &str) -> Result<f64, MetricsError> {
    let lps = gateway.forced_logprobs(&execution_messages(Some(prompt), query), gold)?;
    let values: Vec<f64> = lps.iter().map(|t| t.logprob).collect();
    nll_from_logprobs(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub query_id: String,
    pub prompt_id: String,
    pub metrics: MetricVector,
    pub label: QualityLabel,
    pub trace: ExecutionTrace,
}

/// Execute one candidate and compute its metric vector and label. The
/// with-prompt trace feeds stability, prompt entropy and the MI estimate.
pub fn measure_candidate(
    gateway: &Gateway,
    query: &Query,
    baseline: &QueryBaseline,
    prompt_id: &str,
    prompt: &str,
    schema: &AnswerSchema,
    settings: &EstimatorSettings,
) -> Result<Measurement, MetricsError> {
    let trace = collect_trace(
        gateway,
        query,
        Some((prompt_id, prompt)),
        schema,
        settings.n_samples,
        settings.temperature,
        settings.max_tokens,
    )?;
    let embeddings = trace
        .samples
        .iter()
        .map(|s| {
            // empty responses still count as samples; embed a fixed stand-in
            let text = if s.raw_text.trim().is_empty() { "<empty>" } else { s.raw_text.as_str() };
            gateway.embed(text).map(|e| e.values)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let with_prompt = trace.distribution()?;
    let prompt_entropy = answer_entropy(&with_prompt);
    let extended = if settings.extended {
        let judged = judge_scores(gateway, &query.text, prompt)?;
        Some(ExtendedMetrics {
            prompt_entropy,
            clarity: judged.map(|j| j.clarity as f64),
            coherence: judged.map(|j| j.coherence as f64),
            specificity: judged.map(|j| j.specificity as f64),
        })
    } else {
        None
    };
    let metrics = MetricVector {
        nll_score: nll_score(gateway, &query.text, prompt, &query.gold_answer)?,
        stability_score: stability_score(&embeddings)?,
        mi_score: mutual_information(&baseline.distribution()?, &with_prompt),
        query_entropy: baseline.query_entropy,
        extended,
    };
    Ok(Measurement {
        query_id: query.id.clone(),
        prompt_id: prompt_id.to_string(),
        metrics,
        label: trace.label(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::gateway::SimulatedBackend;
    use std::sync::Arc;

    #[test]
    fn simulated_measurement_is_well_formed() {
        let gateway = Gateway::in_memory(Arc::new(SimulatedBackend::new(16)));
        let query = Query {
            id: "q1".into(),
            text: "What is 17 + 25?".into(),
            gold_answer: "42".into(),
            task: "arith".into(),
            split: Split::Train,
        };
        let settings = EstimatorSettings::default();
        let schema = AnswerSchema::Numeric;
        let baseline = query_baseline(&gateway, &query, &schema, &settings).unwrap();
        let m = measure_candidate(
            &gateway,
            &query,
            &baseline,
            "p1",
            "Solve it step by step and give the final answer.",
            &schema,
            &settings,
        )
        .unwrap();
        assert_eq!(m.trace.n, 10);
        assert!(m.metrics.nll_score >= 0.0);
        assert!((-1.0..=1.0).contains(&m.metrics.stability_score));
        assert!(m.metrics.query_entropy >= 0.0);
        let ext = m.metrics.extended.clone().unwrap();
        assert!(ext.prompt_entropy <= (10f64).ln());
        assert!(ext.clarity.is_some());
        let again = measure_candidate(&gateway, &query, &baseline, "p1", "Solve it step by step and give the final answer.", &schema, &settings).unwrap();
        assert_eq!(m.metrics, again.metrics);
    }
}
