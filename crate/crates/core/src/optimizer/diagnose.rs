use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, GenerationRequest, Message};
use crate::metrics::MetricName;
use crate::prompts;

/// A metric-specific diagnoser: what the metric measures and its closed
/// set of failure causes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnoserTemplate {
    pub description: String,
    /// (issue tag, explanation) pairs. Tags are the only accepted issue names.
    pub taxonomy: Vec<(String, String)>,
}

impl DiagnoserTemplate {
    fn new(description: &str, taxonomy: &[(&str, &str)]) -> Self {
        Self {
            description: description.to_string(),
            taxonomy: taxonomy.iter().map(|(t, e)| (t.to_string(), e.to_string())).collect(),
        }
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.taxonomy.iter().map(|(t, _)| t.as_str())
    }

    /// System-message body: description, taxonomy and output format.
    pub fn instructions(&self) -> String {
        let mut s = format!("{}\nPossible issues:\n", self.description);
        for (tag, explanation) in &self.taxonomy {
            let _ = writeln!(s, "- {tag}: {explanation}");
        }
        s.push_str(prompts::DIAGNOSE_FORMAT);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagnoserRegistry(pub BTreeMap<MetricName, DiagnoserTemplate>);

impl Default for DiagnoserRegistry {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(
            MetricName::NllScore,
            DiagnoserTemplate::new(
                "The prompt makes the correct answer unlikely for the model. Look for instructions that pull the model away from the expected answer.",
                &[
                    ("Instruction conflict", "two instructions in the prompt ask for incompatible things"),
                    ("Noisy or long preambles", "long or irrelevant text before the actual instruction"),
                    ("Few-shot inconsistency", "examples in the prompt disagree with each other or with the task"),
                    ("Task mismatch", "the reasoning pattern the prompt asks for does not fit this kind of task"),
                ],
            ),
        );
        m.insert(
            MetricName::StabilityScore,
            DiagnoserTemplate::new(
                "Repeated answers under this prompt disagree with each other. Look for what leaves the response shape or path open.",
                &[
                    ("Unspecified output format", "the prompt does not say how the answer should be presented"),
                    ("Conflicting objectives", "the prompt asks for several goals that pull responses apart"),
                    ("Unconstrained reasoning paths", "the prompt allows many unrelated ways to approach the problem"),
                    ("Missing guiding example", "no example shows what a good response looks like"),
                ],
            ),
        );
        m.insert(
            MetricName::MiScore,
            DiagnoserTemplate::new(
                "The prompt barely changes what the model answers compared with the query alone. Look for content that carries no usable guidance.",
                &[
                    ("Hollow templates", "generic phrasing without concrete operational cues"),
                    ("Stylistic noise", "wording about tone or style that does not affect the answer"),
                    ("Missing schemas", "no structure or procedure the model could follow"),
                ],
            ),
        );
        m.insert(
            MetricName::QueryEntropy,
            DiagnoserTemplate::new(
                "The query itself admits many different answers. Look for what the query leaves unstated; fixes are clarifications added to the query.",
                &[
                    ("Ambiguity or missing assumptions", "the query can be read in more than one way"),
                    ("Lack of reasoning structure", "the query gives no hint of how to approach it"),
                    ("Missing domain context", "facts or definitions needed to answer are absent"),
                    ("Unconstrained output space", "the form of the expected answer is not stated"),
                ],
            ),
        );
        Self(m)
    }
}

impl DiagnoserRegistry {
    pub fn get(&self, metric: MetricName) -> Option<&DiagnoserTemplate> {
        self.0.get(&metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub metric: MetricName,
    pub issues: Vec<String>,
    pub suggestions: Vec<String>,
    pub raw_judge_text: String,
}

impl Diagnosis {
    pub fn empty(metric: MetricName, raw: impl Into<String>) -> Self {
        Self { metric, issues: Vec::new(), suggestions: Vec::new(), raw_judge_text: raw.into() }
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty() && self.suggestions.is_empty()
    }
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*[-*]?\s*ISSUE:\s*(.+?)\s*\|\s*SUGGESTION:\s*(.+?)\s*$").unwrap())
}

/// Parse diagnoser output. `None` means the format was not followed;
/// `Some` with no issues means "NONE".
pub fn parse_diagnosis(metric: MetricName, template: &DiagnoserTemplate, text: &str) -> Option<Diagnosis> {
    if text.trim().trim_end_matches('.').eq_ignore_ascii_case("none") {
        return Some(Diagnosis::empty(metric, text));
    }
    let mut diagnosis = Diagnosis::empty(metric, text);
    let mut matched = false;
    for line in text.lines() {
        let Some(c) = line_re().captures(line) else { continue };
        matched = true;
        let tag = c[1].trim().trim_matches(|ch: char| ch == '"' || ch == '\'' || ch == '*' || ch == '.');
        match template.tags().find(|t| t.eq_ignore_ascii_case(tag)) {
            Some(t) => {
                if !diagnosis.issues.iter().any(|i| i == t) {
                    diagnosis.issues.push(t.to_string());
                }
            }
            None => log::warn!("diagnoser for {metric} used off-taxonomy issue {tag:?}; tag dropped"),
        }
        diagnosis.suggestions.push(c[2].to_string());
    }
    matched.then_some(diagnosis)
}

/// Run the metric's diagnoser at temperature 0, reprompting once on a
/// format violation; a second violation yields an empty diagnosis.
pub fn diagnose(
    gateway: &Gateway,
    metric: MetricName,
    template: &DiagnoserTemplate,
    query: &str,
    prompt: &str,
    max_tokens: u32,
) -> Result<Diagnosis, GatewayError> {
    let mut messages = vec![
        prompts::tagged_system(prompts::DIAGNOSE_HEADER, &template.instructions()),
        Message::user(format!(
            "{} {metric}\n\n{}\n{query}\n\n{}\n{prompt}",
            prompts::METRIC_LABEL,
            prompts::QUERY_LABEL,
            prompts::PROMPT_LABEL
        )),
    ];
    let first = gateway.complete(&GenerationRequest::new(messages.clone()).temperature(0.0).max_tokens(max_tokens))?;
    if let Some(d) = parse_diagnosis(metric, template, &first) {
        return Ok(d);
    }
    messages.push(Message::assistant(first));
    messages.push(Message::user(prompts::DIAGNOSE_REPROMPT));
    let second = gateway.complete(&GenerationRequest::new(messages).temperature(0.0).max_tokens(max_tokens))?;
    Ok(parse_diagnosis(metric, template, &second).unwrap_or_else(|| {
        log::warn!("diagnoser for {metric} output unparseable after reprompt; no issues recorded");
        Diagnosis::empty(metric, second)
    }))
}
