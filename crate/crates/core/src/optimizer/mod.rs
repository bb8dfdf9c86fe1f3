//! Metric-guided prompt revision: attribute a low predicted quality to
//! metric dimensions, diagnose the most influential ones, rewrite, and
//! re-evaluate with the evaluator (no prompt execution).

mod diagnose;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{encode, EvaluatorError, EvaluatorInput, EvaluatorModel, Prediction};
use crate::gateway::{Gateway, GatewayError, GenerationRequest, Message};
use crate::metrics::MetricName;
use crate::prompts;

pub use diagnose::{diagnose, parse_diagnosis, DiagnoserRegistry, DiagnoserTemplate, Diagnosis};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("prediction {y_hat} is not below 0.5; nothing to attribute")]
    NotBad { y_hat: f64 },
    #[error("rewrite failed: {0}")]
    GenerationFailure(String),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl OptimizerError {
    pub fn is_backend_failure(&self) -> bool {
        match self {
            OptimizerError::Gateway(g) | OptimizerError::Evaluator(EvaluatorError::Gateway(g)) => g.is_backend_failure(),
            _ => false,
        }
    }
}

/// Per-metric `|∂L_cls/∂m̂_i|` toward the "good" label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub metrics: Vec<MetricName>,
    pub gradients: Vec<f64>,
    /// Metric names by descending gradient; ties keep the model's metric order.
    pub ranking: Vec<MetricName>,
}

impl Attribution {
    pub fn from_gradients(metrics: &[MetricName], signed: &[f64]) -> Self {
        let gradients: Vec<f64> = signed.iter().map(|g| g.abs()).collect();
        let mut order: Vec<usize> = (0..metrics.len()).collect();
        order.sort_by(|&a, &b| gradients[b].total_cmp(&gradients[a]));
        Self { metrics: metrics.to_vec(), ranking: order.iter().map(|&i| metrics[i]).collect(), gradients }
    }
}

/// Attribution for an encoded input. Fails with `NotBad` when ŷ ≥ 0.5.
pub fn attribute_encoded(model: &EvaluatorModel, h: &[f64]) -> Result<(Prediction, Attribution), OptimizerError> {
    let (pred, g) = model.metric_gradient(h, true)?;
    if pred.is_good() {
        return Err(OptimizerError::NotBad { y_hat: pred.y_hat });
    }
    Ok((pred, Attribution::from_gradients(&model.metrics, &g)))
}

pub fn attribute(
    model: &EvaluatorModel,
    gateway: &Gateway,
    input: &EvaluatorInput,
) -> Result<(Prediction, Attribution), OptimizerError> {
    model.check_prefix(input)?;
    let h = encode(gateway, input)?;
    attribute_encoded(model, &h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewrite {
    pub prompt: String,
    pub query: String,
    pub raw_text: String,
}

/// One rewrite call applying every suggestion. Query-entropy suggestions
/// only ever augment the query; all others only ever edit the prompt.
pub fn rewrite(
    gateway: &Gateway,
    query: &str,
    prompt: &str,
    diagnoses: &[Diagnosis],
    temperature: f64,
    max_tokens: u32,
) -> Result<Rewrite, OptimizerError> {
    let (query_side, prompt_side): (Vec<&Diagnosis>, Vec<&Diagnosis>) =
        diagnoses.iter().partition(|d| d.metric == MetricName::QueryEntropy);
    let edits: Vec<&str> = prompt_side.iter().flat_map(|d| d.suggestions.iter().map(String::as_str)).collect();
    let clarifications: Vec<&str> = query_side.iter().flat_map(|d| d.suggestions.iter().map(String::as_str)).collect();
    if edits.is_empty() && clarifications.is_empty() {
        return Err(OptimizerError::GenerationFailure("no suggestions to apply".into()));
    }
    let mut user = String::new();
    for (label, items) in [(prompts::PROMPT_EDITS_LABEL, &edits), (prompts::QUERY_CLARIFICATIONS_LABEL, &clarifications)] {
        if !items.is_empty() {
            let _ = writeln!(user, "{label}");
            for s in items.iter() {
                let _ = writeln!(user, "- {s}");
            }
            user.push('\n');
        }
    }
    let _ = write!(user, "{}\n{query}\n\n{}\n{prompt}", prompts::QUERY_LABEL, prompts::PROMPT_LABEL);
    let messages = vec![prompts::tagged_system(prompts::REWRITE_HEADER, prompts::REWRITE_BODY), Message::user(user)];
    let raw = gateway.complete(&GenerationRequest::new(messages).temperature(temperature).max_tokens(max_tokens))?;

    let tagged_prompt = prompts::between(&raw, "<prompt>", "</prompt>");
    let tagged_clar = prompts::between(&raw, "<clarifications>", "</clarifications>");
    let new_prompt = if edits.is_empty() {
        prompt.to_string()
    } else {
        let p = match tagged_prompt {
            Some(p) => p,
            None if tagged_clar.is_none() => raw.trim(),
            None => "",
        };
        if p.is_empty() {
            return Err(OptimizerError::GenerationFailure("rewrite returned an empty prompt".into()));
        }
        p.to_string()
    };
    let new_query = if clarifications.is_empty() {
        query.to_string()
    } else {
        let block = match tagged_clar.filter(|c| !c.is_empty()) {
            Some(c) => c.to_string(),
            None => clarifications.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n"),
        };
        format!("{query}\n\nClarifications:\n{block}")
    };
    Ok(Rewrite { prompt: new_prompt, query: new_query, raw_text: raw })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PassedThreshold,
    MaxIterations,
    /// The diagnosers found nothing to fix, or the rewrite changed nothing.
    NoImprovement,
    /// An LLM call failed; the best candidate so far is returned.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub prompt: String,
    pub query: String,
    pub y_hat: f64,
    pub m_hat: Vec<f64>,
    pub attribution: Attribution,
    pub diagnoses: Vec<Diagnosis>,
    pub rewrite: Option<Rewrite>,
    pub y_hat_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub initial_y_hat: f64,
    pub iterations: Vec<Iteration>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub prompt: String,
    pub query: String,
    pub y_hat: f64,
    pub trace: OptimizationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub top_k: usize,
    pub rewrite_temperature: f64,
    pub max_tokens: u32,
    pub diagnosers: DiagnoserRegistry,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            top_k: 2,
            rewrite_temperature: 0.3,
            max_tokens: 512,
            diagnosers: DiagnoserRegistry::default(),
        }
    }
}

/// Evaluate, and while ŷ < 0.5 and iterations remain: attribute, diagnose
/// the `top_k` metrics, rewrite, re-evaluate. Returns the best (prompt,
/// query) seen. Only the initial evaluation can fail the call.
pub fn optimize(
    model: &EvaluatorModel,
    gateway: &Gateway,
    prefix: &str,
    query: &str,
    prompt: &str,
    config: &OptimizerConfig,
) -> Result<OptimizationOutcome, OptimizerError> {
    let input = EvaluatorInput::new(prefix, query, prompt);
    model.check_prefix(&input)?;
    let mut h = encode(gateway, &input)?;
    let mut pred = model.forward(&h)?;
    let initial_y_hat = pred.y_hat;
    let (mut cur_prompt, mut cur_query) = (prompt.to_string(), query.to_string());
    let mut best = (cur_prompt.clone(), cur_query.clone(), pred.y_hat);
    let mut iterations: Vec<Iteration> = Vec::new();

    let stop_reason = loop {
        if pred.is_good() {
            break StopReason::PassedThreshold;
        }
        if iterations.len() >= config.max_iterations {
            break StopReason::MaxIterations;
        }
        let (_, attribution) = attribute_encoded(model, &h)?;
        let mut it = Iteration {
            prompt: cur_prompt.clone(),
            query: cur_query.clone(),
            y_hat: pred.y_hat,
            m_hat: pred.m_hat.clone(),
            attribution: attribution.clone(),
            diagnoses: Vec::new(),
            rewrite: None,
            y_hat_after: None,
            error: None,
        };
        let mut failed = None;
        for &metric in attribution.ranking.iter().take(config.top_k) {
            let Some(template) = config.diagnosers.get(metric) else {
                log::warn!("no diagnoser registered for {metric}; skipped");
                continue;
            };
            match diagnose(gateway, metric, template, &cur_query, &cur_prompt, config.max_tokens) {
                Ok(d) => it.diagnoses.push(d),
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(e) = failed {
            it.error = Some(e);
            iterations.push(it);
            break StopReason::Aborted;
        }
        let useful: Vec<Diagnosis> = it.diagnoses.iter().filter(|d| !d.suggestions.is_empty()).cloned().collect();
        if useful.is_empty() {
            iterations.push(it);
            break StopReason::NoImprovement;
        }
        let rewritten = rewrite(gateway, &cur_query, &cur_prompt, &useful, config.rewrite_temperature, config.max_tokens)
            .and_then(|r| {
                let next = EvaluatorInput::new(prefix, r.query.clone(), r.prompt.clone());
                let h_next = encode(gateway, &next)?;
                let p_next = model.forward(&h_next)?;
                Ok((r, h_next, p_next))
            });
        let (r, h_next, p_next) = match rewritten {
            Ok(x) => x,
            Err(e) => {
                log::warn!("optimization iteration aborted: {e}");
                it.error = Some(e.to_string());
                iterations.push(it);
                break StopReason::Aborted;
            }
        };
        let unchanged = r.prompt == cur_prompt && r.query == cur_query;
        it.y_hat_after = Some(p_next.y_hat);
        it.rewrite = Some(r.clone());
        iterations.push(it);
        if p_next.y_hat > best.2 {
            best = (r.prompt.clone(), r.query.clone(), p_next.y_hat);
        }
        if unchanged {
            break StopReason::NoImprovement;
        }
        cur_prompt = r.prompt;
        cur_query = r.query;
        h = h_next;
        pred = p_next;
    };

    Ok(OptimizationOutcome {
        prompt: best.0,
        query: best.1,
        y_hat: best.2,
        trace: OptimizationTrace { initial_y_hat, iterations, stop_reason },
    })
}
