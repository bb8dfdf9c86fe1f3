//! Scripted optimization scenarios over a hand-built evaluator.
//!
//! The evaluator reads ŷ off the first embedding coordinate: the regression
//! path is zeroed (so m̂ = 0), the fusion hidden unit sees `h[0]` plus
//! `alpha_j * m̂_j`, and the classifier scales the fused unit by `GAIN`.
//! `embedding_for(y)` inverts that map, so every scripted state gets an
//! exact ŷ, and `alpha` fixes the attribution ranking.
#![allow(dead_code)]

use std::sync::Arc;

use promptgauge::evaluator::{EvaluatorInput, EvaluatorModel, Network, Shape};
use promptgauge::gateway::{CallCounts, Gateway, Role, ScriptedBackend};
use promptgauge::metrics::MetricName;
use promptgauge::optimizer::{optimize, OptimizationOutcome, OptimizerConfig};
use promptgauge::prompts;

pub const PREFIX: &str = "Score this query and prompt.";
const GAIN: f64 = 4.0;

pub fn hand_built_model(alpha: [f64; 4]) -> EvaluatorModel {
    let shape = Shape { input: 2, metrics: 4, reg_hidden: 1, fuse_hidden: 1, fused: 1 };
    let mut model = EvaluatorModel::new("fixture", shape, MetricName::CORE.to_vec(), PREFIX, 0);
    let mut net = Network::zeros(shape);
    net.fuse_hidden.weight[0] = 1.0;
    for (j, a) in alpha.iter().enumerate() {
        net.fuse_hidden.weight[2 + j] = *a;
    }
    net.fuse_out.weight[0] = 1.0;
    net.classifier.weight[0] = GAIN;
    model.network = net;
    model
}

/// Embedding whose prediction under `hand_built_model` is `y_hat`.
pub fn embedding_for(y_hat: f64) -> Vec<f64> {
    let z = (y_hat / (1.0 - y_hat)).ln() / GAIN;
    vec![z.atanh().atanh(), 0.0]
}

/// One scripted state of the loop: its text, its ŷ, and the raw rewrite
/// reply produced when the loop rewrites from here.
#[derive(Debug, Clone)]
pub struct Step {
    pub prompt: String,
    pub query: String,
    pub y_hat: f64,
    pub reply: Option<String>,
}

impl Step {
    pub fn new(prompt: &str, query: &str, y_hat: f64) -> Self {
        Self { prompt: prompt.into(), query: query.into(), y_hat, reply: None }
    }

    pub fn replying(mut self, reply: impl Into<String>) -> Self {
        self.reply = Some(reply.into());
        self
    }
}

/// Gateway answering embeddings for every step, diagnoser calls per metric
/// (`NONE` when unlisted) and rewrite calls per step.
pub fn scenario_gateway(steps: &[Step], diagnoses: &[(MetricName, &str)]) -> Gateway {
    let mut backend = ScriptedBackend::new("fixture");
    for s in steps {
        backend = backend.on_embed(EvaluatorInput::new(PREFIX, s.query.clone(), s.prompt.clone()).text(), embedding_for(s.y_hat));
    }
    let replies: Vec<(String, String)> = steps
        .iter()
        .filter_map(|s| {
            let tail = format!("{}\n{}\n\n{}\n{}", prompts::QUERY_LABEL, s.query, prompts::PROMPT_LABEL, s.prompt);
            s.reply.clone().map(|r| (tail, r))
        })
        .collect();
    backend = backend.on_generate_with(move |req, _| {
        let system = &req.messages.iter().find(|m| m.role == Role::System)?.content;
        if !system.starts_with(prompts::REWRITE_HEADER) {
            return None;
        }
        let user = &req.messages.iter().find(|m| m.role == Role::User)?.content;
        replies.iter().find(|(tail, _)| user.ends_with(tail.as_str())).map(|(_, r)| r.clone())
    });
    for (metric, reply) in diagnoses {
        backend = backend.on_generate(format!("{} {}\n", prompts::METRIC_LABEL, metric.as_str()), [reply.to_string()]);
    }
    backend = backend.on_generate(prompts::DIAGNOSE_HEADER, ["NONE"]);
    Gateway::in_memory(Arc::new(backend))
}

pub fn prompt_reply(prompt: &str) -> String {
    format!("<prompt>{prompt}</prompt>\n<clarifications></clarifications>")
}

pub const Q0: &str = "What is 17 + 25?";
pub const P0: &str = "Think step by step.";
const CLARIFICATION: &str = "Both numbers are whole numbers.";

/// Ranking nll_score, stability_score first.
pub const NLL_FIRST: [f64; 4] = [1.0, 0.5, 0.2, 0.1];
/// Ranking query_entropy, stability_score first.
pub const QUERY_FIRST: [f64; 4] = [0.1, 0.5, 0.05, 1.0];
/// Ranking stability_score, nll_score first.
pub const STABILITY_FIRST: [f64; 4] = [0.5, 1.0, 0.2, 0.1];

pub struct Scenario {
    pub model: EvaluatorModel,
    pub gateway: Gateway,
}

impl Scenario {
    pub fn run(&self) -> (OptimizationOutcome, CallCounts) {
        let before = self.gateway.call_counts();
        let out = optimize(&self.model, &self.gateway, PREFIX, Q0, P0, &OptimizerConfig::default()).unwrap();
        let after = self.gateway.call_counts();
        let delta = CallCounts {
            generate: after.generate - before.generate,
            score: after.score - before.score,
            embed: after.embed - before.embed,
            backend: after.backend - before.backend,
        };
        (out, delta)
    }
}

fn nll_issue() -> (MetricName, &'static str) {
    (MetricName::NllScore, "ISSUE: Task mismatch | SUGGESTION: Ask for the sum directly.")
}

/// Prompt-only rewrites through the chain `P0, P1, ...` with the given ŷ.
pub fn prompt_chain(y_hats: &[f64]) -> Scenario {
    let steps: Vec<Step> = y_hats
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = if i == 0 { P0.to_string() } else { format!("Revised prompt {i}.") };
            Step::new(&p, Q0, y).replying(prompt_reply(&format!("Revised prompt {}.", i + 1)))
        })
        .collect();
    Scenario { model: hand_built_model(NLL_FIRST), gateway: scenario_gateway(&steps, &[nll_issue()]) }
}

/// ŷ already above threshold.
pub fn already_good() -> Scenario {
    prompt_chain(&[0.8])
}

/// ŷ 0.3, 0.45, 0.2, 0.35: hits the iteration cap, best is the 0.45 state.
pub fn non_monotone() -> Scenario {
    prompt_chain(&[0.3, 0.45, 0.2, 0.35])
}

/// ŷ 0.3, 0.45, 0.6: passes on the second rewrite.
pub fn rising() -> Scenario {
    prompt_chain(&[0.3, 0.45, 0.6])
}

/// Every rewrite is worse than the start.
pub fn worsening() -> Scenario {
    prompt_chain(&[0.3, 0.15, 0.2, 0.13])
}

/// query_entropy ranks first and is the only diagnoser reporting an issue.
/// `tagged` selects whether the rewrite wraps the clarifications in tags.
pub fn query_clarification(tagged: bool) -> Scenario {
    let clarified = clarified_query();
    let reply = if tagged {
        format!("<prompt>{P0}</prompt>\n<clarifications>- {CLARIFICATION}</clarifications>")
    } else {
        format!("<prompt>{P0}</prompt>")
    };
    let steps = [Step::new(P0, Q0, 0.3).replying(reply), Step::new(P0, &clarified, 0.6)];
    let issue = format!("ISSUE: Missing domain context | SUGGESTION: {CLARIFICATION}");
    Scenario {
        model: hand_built_model(QUERY_FIRST),
        gateway: scenario_gateway(&steps, &[(MetricName::QueryEntropy, issue.as_str())]),
    }
}

pub fn clarified_query() -> String {
    format!("{Q0}\n\nClarifications:\n- {CLARIFICATION}")
}

/// Only stability_score reports an issue; the query must stay as given.
pub fn stability_only() -> Scenario {
    let steps = [
        Step::new(P0, Q0, 0.3).replying(prompt_reply("Think step by step. End with 'Answer: <n>'.")),
        Step::new("Think step by step. End with 'Answer: <n>'.", Q0, 0.6),
    ];
    let issue = "ISSUE: Unspecified output format | SUGGESTION: End with 'Answer: <n>'.";
    Scenario {
        model: hand_built_model(STABILITY_FIRST),
        gateway: scenario_gateway(&steps, &[(MetricName::StabilityScore, issue)]),
    }
}

/// The rewrite returns an empty prompt.
pub fn failed_rewrite() -> Scenario {
    let steps = [Step::new(P0, Q0, 0.3).replying("<prompt></prompt>")];
    Scenario { model: hand_built_model(NLL_FIRST), gateway: scenario_gateway(&steps, &[nll_issue()]) }
}

/// Every diagnoser answers NONE.
pub fn nothing_to_fix() -> Scenario {
    let steps = [Step::new(P0, Q0, 0.3)];
    Scenario { model: hand_built_model(NLL_FIRST), gateway: scenario_gateway(&steps, &[]) }
}
