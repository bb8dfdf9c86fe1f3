//! A deterministic, offline stand-in for a chat model.
//!
//! It understands three toy question families (integer arithmetic, parity
//! yes/no questions and "largest option" multiple choice), answers them
//! correctly with a probability that depends on cues in the system prompt,
//! and plays every helper role of the pipeline (style generation,
//! decomposition, rephrasing, judging, diagnosing and rewriting). All
//! randomness comes from hashing the request and the sample index, so results
//! are a pure function of the request.

use regex::Regex;
use std::sync::OnceLock;

use super::scripted::joined_context;
use super::{Backend, BackendError, Capabilities, Completion, GenerationRequest, Message, Role, TokenLogprob};
use crate::prompts::{self, between};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Map a hash to `[0, 1)`.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// Signed feature hashing of lower-cased words, plus a constant component,
/// L2-normalized. Never the zero vector.
pub(crate) fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(2);
    let mut v = vec![0.0; dim];
    v[0] = 0.5;
    for w in words(text) {
        let h = fnv1a(w.as_bytes());
        let slot = 1 + (h % (dim as u64 - 1)) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[slot] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Problem {
    Numeric(i64),
    YesNo(bool),
    Choice { correct: char, letters: Vec<char> },
}

fn arithmetic_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(-?\d+)\s*([+\-*])\s*(-?\d+)").unwrap())
}

fn parity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)is\s+(-?\d+)\s+an?\s+(even|odd)\s+number").unwrap())
}

fn option_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-J])\)\s*(-?\d+)").unwrap())
}

fn parse_problem(query: &str) -> Option<Problem> {
    let options: Vec<(char, i64)> = option_re()
        .captures_iter(query)
        .filter_map(|c| Some((c[1].chars().next()?, c[2].parse().ok()?)))
        .collect();
    if options.len() >= 2 {
        let (correct, _) = options.iter().copied().max_by_key(|&(l, v)| (v, std::cmp::Reverse(l)))?;
        return Some(Problem::Choice { correct, letters: options.iter().map(|o| o.0).collect() });
    }
    if let Some(c) = parity_re().captures(query) {
        let n: i64 = c[1].parse().ok()?;
        let even = n % 2 == 0;
        return Some(Problem::YesNo(if &c[2].to_lowercase() == "even" { even } else { !even }));
    }
    let c = arithmetic_re().captures(query)?;
    let a: i64 = c[1].parse().ok()?;
    let b: i64 = c[3].parse().ok()?;
    let v = match &c[2] {
        "+" => a.checked_add(b)?,
        "-" => a.checked_sub(b)?,
        _ => a.checked_mul(b)?,
    };
    Some(Problem::Numeric(v))
}

impl Problem {
    fn answer(&self) -> String {
        match self {
            Problem::Numeric(v) => v.to_string(),
            Problem::YesNo(b) => if *b { "yes" } else { "no" }.to_string(),
            Problem::Choice { correct, .. } => format!("({correct})"),
        }
    }

    fn wrong_answer(&self, h: u64) -> String {
        match self {
            Problem::Numeric(v) => {
                let delta = 1 + (h % 3) as i64;
                (if h & 8 == 0 { v + delta } else { v - delta }).to_string()
            }
            Problem::YesNo(b) => if *b { "no" } else { "yes" }.to_string(),
            Problem::Choice { correct, letters } => {
                let others: Vec<char> = letters.iter().copied().filter(|l| l != correct).collect();
                format!("({})", others[(h as usize) % others.len()])
            }
        }
    }
}

fn contains_any(haystack: &str, needles: &[&str]) -> bool {
    needles.iter().any(|n| haystack.contains(n))
}

/// Probability that the simulated model answers this (prompt, query) correctly.
fn success_probability(prompt: &str, query: &str) -> f64 {
    let p = prompt.to_lowercase();
    let q = query.to_lowercase();
    let difficulty = unit(fnv1a(query.split("\n\n").next().unwrap_or(query).as_bytes())) * 0.4 - 0.2;
    let mut score = 0.42 + difficulty;
    if p.contains("step") {
        score += 0.12;
    }
    if p.contains("final answer") {
        score += 0.15;
    }
    if contains_any(&p, &["verify", "check"]) {
        score += 0.08;
    }
    if contains_any(&p, &["imagine", "creative", "panel", "debate", "analogy"]) {
        score -= 0.08;
    }
    if p.len() > 400 {
        score -= 0.1;
    }
    if q.contains("clarifications:") {
        score += 0.1;
    }
    score.clamp(0.03, 0.97)
}

const PHRASINGS: [&str; 5] = [
    "The answer is {}.",
    "{}",
    "I think it is {}.",
    "After thinking it through, the result is {}.",
    "Probably {}, though I am not completely sure.",
];

/// Offline deterministic model. See the module docs.
pub struct SimulatedBackend {
    dim: usize,
}

impl SimulatedBackend {
    pub const ID: &'static str = "simulated:v1";

    pub fn new(embedding_dim: usize) -> Self {
        Self { dim: embedding_dim }
    }

    fn execute(&self, request: &GenerationRequest, index: u32) -> String {
        let prompt = request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let query = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let seed = fnv1a(joined_context(&request.messages).as_bytes())
            ^ fnv1a(&index.to_le_bytes()).rotate_left(17);
        let Some(problem) = parse_problem(query) else {
            return "I am not sure how to answer that.".to_string();
        };
        let p = success_probability(&prompt, query);
        let correct = if request.temperature == 0.0 { p >= 0.5 } else { unit(seed) < p };
        let answer = if correct { problem.answer() } else { problem.wrong_answer(seed >> 7) };
        if prompt.to_lowercase().contains("final answer") {
            return format!("Working through the question carefully. Final answer: {answer}");
        }
        let phrasing = if request.temperature == 0.0 { PHRASINGS[0] } else { PHRASINGS[(seed >> 23) as usize % PHRASINGS.len()] };
        phrasing.replace("{}", &answer)
    }

    fn style_prompt(&self, user: &str) -> String {
        let style = prompts::section(user, prompts::STYLE_LABEL).unwrap_or("step_by_step");
        let query = user.split(prompts::QUERY_LABEL).nth(1).unwrap_or_default().trim();
        let subject = if query.len() > 60 { "the problem" } else { "the question" };
        match style {
            "step_by_step" => format!("Solve {subject} step by step, writing down each intermediate result, and state the final answer at the end."),
            "expert_discussion" => format!("Simulate a panel of experts who each reason about {subject}, challenge each other, and agree on one answer."),
            "socratic" => format!("Ask yourself guiding questions about {subject}, check each assumption, and then answer."),
            "creative" => format!("Imagine a creative framing of {subject}, explore it freely, and then give your answer."),
            "verification" => format!("Propose an answer to {subject}, verify it by checking the work, revise if needed, and give the final answer."),
            "contrastive" => format!("Compare candidate answers to {subject}, reject the inconsistent ones, and select the one that holds."),
            other => format!("Answer {subject} in the {other} style."),
        }
    }

    fn decompose(&self, user: &str) -> String {
        let prompt = user.split_once(prompts::PROMPT_LABEL).map(|x| x.1).unwrap_or(user).trim();
        let mid = prompt.len() / 2;
        let cut = prompt
            .match_indices(", ")
            .map(|(i, _)| i)
            .min_by_key(|&i| i.abs_diff(mid))
            .map(|i| (i, i + 2))
            .or_else(|| {
                prompt
                    .match_indices(' ')
                    .map(|(i, _)| i)
                    .min_by_key(|&i| i.abs_diff(mid))
                    .map(|i| (i, i + 1))
            });
        let (a, b) = match cut {
            Some((end, start)) => (&prompt[..end], &prompt[start..]),
            None => (prompt, prompt),
        };
        format!(
            "{}{}{}\n{}{}{}",
            prompts::SEGMENT_1_OPEN,
            a.trim(),
            prompts::SEGMENT_1_CLOSE,
            prompts::SEGMENT_2_OPEN,
            b.trim().trim_end_matches('.'),
            prompts::SEGMENT_2_CLOSE
        )
    }

    fn rephrase(&self, user: &str) -> String {
        let draft = user.split_once(prompts::DRAFT_LABEL).map(|x| x.1).unwrap_or(user);
        let mut text = draft.split_whitespace().collect::<Vec<_>>().join(" ");
        text = text.trim_end_matches(['.', ',']).to_string();
        let mut chars = text.chars();
        let mut out = match chars.next() {
            Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        };
        out.push('.');
        out
    }

    fn judge(&self, user: &str) -> String {
        let prompt = user.split_once(prompts::PROMPT_LABEL).map(|x| x.1).unwrap_or(user).to_lowercase();
        let clarity = 5 + i32::from(prompt.contains("final answer")) * 2 + i32::from(prompt.len() < 200);
        let coherence = 6 + i32::from(prompt.contains("step")) - i32::from(prompt.contains("creative"));
        let specificity = 4 + i32::from(prompt.contains("check") || prompt.contains("verify")) * 2
            + (fnv1a(prompt.as_bytes()) % 3) as i32;
        format!("clarity: {}, coherence: {}, specificity: {}", clarity.clamp(1, 10), coherence.clamp(1, 10), specificity.clamp(1, 10))
    }

    fn diagnose(&self, user: &str) -> String {
        let metric = prompts::section(user, prompts::METRIC_LABEL).unwrap_or_default();
        let query = between(user, prompts::QUERY_LABEL, &format!("\n\n{}", prompts::PROMPT_LABEL)).unwrap_or_default();
        let prompt = user.rsplit_once(prompts::PROMPT_LABEL).map(|x| x.1).unwrap_or_default().trim();
        let p = prompt.to_lowercase();
        let line = |issue: &str, suggestion: &str| format!("ISSUE: {issue} | SUGGESTION: {suggestion}");
        match metric {
            "nll_score" if p.len() > 300 => line("Noisy or long preambles", "Cut everything except the task instruction."),
            "nll_score" if !p.contains("step") => line("Task mismatch", "Ask for the solution to be worked out step by step."),
            "stability_score" if !p.contains("final answer") => {
                line("Unspecified output format", "End the response with a line of the form 'Final answer: <answer>'.")
            }
            "stability_score" if contains_any(&p, &["creative", "imagine", "panel"]) => {
                line("Conflicting objectives", "Remove the instruction to explore multiple perspectives.")
            }
            "mi_score" if !contains_any(&p, &["check", "verify"]) => {
                line("Missing schemas", "Check the result once before answering.")
            }
            "query_entropy" if !query.to_lowercase().contains("clarifications:") => {
                line("Unconstrained output space", "The answer must be a single value with no extra words.")
            }
            _ => "NONE".to_string(),
        }
    }

    fn rewrite(&self, user: &str) -> String {
        let prompt = user.rsplit_once(prompts::PROMPT_LABEL).map(|x| x.1).unwrap_or_default().trim();
        let bullets = |label: &str| -> Vec<String> {
            prompts::section(user, label)
                .map(|s| s.lines().filter_map(|l| l.trim().strip_prefix("- ")).map(str::to_string).collect())
                .unwrap_or_default()
        };
        let edits = bullets(prompts::PROMPT_EDITS_LABEL);
        let clarifications = bullets(prompts::QUERY_CLARIFICATIONS_LABEL);
        let mut new_prompt = prompt.to_string();
        for e in &edits {
            new_prompt.push(' ');
            new_prompt.push_str(e);
        }
        format!("<prompt>{}</prompt>\n<clarifications>{}</clarifications>", new_prompt.trim(), clarifications.join(" "))
    }
}

fn system_text(messages: &[Message]) -> &str {
    messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str()).unwrap_or_default()
}

fn last_user(messages: &[Message]) -> &str {
    messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or_default()
}

impl Backend for SimulatedBackend {
    fn id(&self) -> String {
        Self::ID.to_string()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { scoring: true }
    }

    fn generate(&self, request: &GenerationRequest, sample_indices: &[u32]) -> Result<Vec<Completion>, BackendError> {
        let system = system_text(&request.messages);
        // the first user message carries the task payload for helper calls
        let user = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let reprompted = request.messages.iter().filter(|m| m.role == Role::User).count() > 1;
        Ok(sample_indices
            .iter()
            .map(|&i| {
                let text = if system.starts_with(prompts::STYLE_HEADER) {
                    self.style_prompt(user)
                } else if system.starts_with(prompts::DECOMPOSE_HEADER) {
                    self.decompose(user)
                } else if system.starts_with(prompts::REPHRASE_HEADER) {
                    self.rephrase(user)
                } else if system.starts_with(prompts::JUDGE_HEADER) {
                    self.judge(user)
                } else if system.starts_with(prompts::DIAGNOSE_HEADER) {
                    if reprompted { "NONE".to_string() } else { self.diagnose(user) }
                } else if system.starts_with(prompts::REWRITE_HEADER) {
                    self.rewrite(user)
                } else {
                    self.execute(request, i)
                };
                Completion::text(text)
            })
            .collect())
    }

    fn score(&self, context: &[Message], target: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        let prompt = system_text(context);
        let query = last_user(context);
        let p = success_probability(prompt, query);
        let chars: Vec<char> = target.chars().collect();
        let h = fnv1a(joined_context(context).as_bytes());
        Ok(chars
            .chunks(3)
            .enumerate()
            .map(|(i, chunk)| {
                let jitter = 1.0 + 0.1 * (unit(h.rotate_left(i as u32 * 7)) - 0.5);
                TokenLogprob { token: chunk.iter().collect(), logprob: (p.ln() * jitter).min(0.0) }
            })
            .collect())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(hashed_embedding(text, self.dim))
    }
}
