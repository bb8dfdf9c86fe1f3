use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// How a task's answers are recognized in free-form responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "labels")]
pub enum AnswerSchema {
    /// A single option letter A-J, canonicalized to lower case.
    MultipleChoice,
    YesNo,
    Numeric,
    /// A closed label set (e.g. classification tasks); matched case-insensitively.
    Labels(Vec<String>),
    ExactMatch,
}

/// Answer schema per task id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaRegistry(BTreeMap<String, AnswerSchema>);

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, task: impl Into<String>, schema: AnswerSchema) -> Self {
        self.insert(task, schema);
        self
    }

    pub fn insert(&mut self, task: impl Into<String>, schema: AnswerSchema) {
        self.0.insert(task.into(), schema);
    }

    pub fn schema_for(&self, task: &str) -> Result<&AnswerSchema, super::MetricsError> {
        self.0.get(task).ok_or_else(|| super::MetricsError::UnknownTask(task.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(final answer|the answer is|answer)\s*[:：]?").unwrap())
}

fn paren_choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-Ja-j])\)").unwrap())
}

fn bare_choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-J])\b").unwrap())
}

fn loose_choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b([a-j])\b").unwrap())
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").unwrap())
}

fn normalize_number(raw: &str) -> String {
    let s = raw.replace(',', "");
    match s.split_once('.') {
        Some((int, frac)) => {
            let frac = frac.trim_end_matches('0');
            if frac.is_empty() {
                int.to_string()
            } else {
                format!("{int}.{frac}")
            }
        }
        None => s,
    }
}

fn strip_trailing_punctuation(s: &str) -> &str {
    s.trim().trim_end_matches(['.', '!', '?', ',', ';', ':']).trim()
}

impl AnswerSchema {
    /// First schema match in a marker span (`first = true`) or last match in the
    /// whole response.
    fn find(&self, text: &str, first: bool) -> Option<String> {
        let pick = |re: &Regex| -> Option<String> {
            let mut it = re.captures_iter(text).map(|c| c[1].to_string());
            if first {
                it.next()
            } else {
                it.last()
            }
        };
        match self {
            AnswerSchema::MultipleChoice => {
                let hit = pick(paren_choice_re()).or_else(|| pick(bare_choice_re()));
                let hit = if first { hit.or_else(|| pick(loose_choice_re())) } else { hit };
                hit.map(|l| l.to_lowercase())
            }
            AnswerSchema::YesNo => pick(yes_no_re()).map(|s| s.to_lowercase()),
            AnswerSchema::Numeric => {
                let mut it = number_re().find_iter(text).map(|m| m.as_str().to_string());
                let hit = if first { it.next() } else { it.last() };
                hit.map(|s| normalize_number(&s))
            }
            AnswerSchema::Labels(labels) => {
                let lower = text.to_lowercase();
                let mut best: Option<(usize, &String)> = None;
                for label in labels {
                    let l = label.to_lowercase();
                    let positions = lower.match_indices(&l).map(|(i, _)| i).filter(|&i| {
                        let before = lower[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
                        let after = lower[i + l.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
                        before && after
                    });
                    let pos = if first { positions.min() } else { positions.max() };
                    if let Some(p) = pos {
                        let better = match best {
                            None => true,
                            Some((bp, _)) => if first { p < bp } else { p > bp },
                        };
                        if better {
                            best = Some((p, label));
                        }
                    }
                }
                best.map(|(_, l)| l.to_lowercase())
            }
            AnswerSchema::ExactMatch => {
                let s = strip_trailing_punctuation(text).to_lowercase();
                (first && !s.is_empty()).then_some(s)
            }
        }
    }
}

/// Reduce a raw response to the task's canonical answer form.
///
/// Rules, in order: the span after the last explicit answer marker
/// ("final answer", "the answer is", "answer:"), then the last
/// schema-matching span anywhere, then the whole trimmed text lowercased.
pub fn canonicalize_answer(raw: &str, schema: &AnswerSchema) -> String {
    if let Some(m) = marker_re().find_iter(raw).last() {
        let span = raw[m.end()..].lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
        if let Some(hit) = schema.find(span, true) {
            return hit;
        }
    }
    if let Some(hit) = schema.find(raw, false) {
        return hit;
    }
    let whole = raw.trim().to_lowercase();
    match schema {
        AnswerSchema::ExactMatch => strip_trailing_punctuation(&whole).to_string(),
        _ => whole,
    }
}
