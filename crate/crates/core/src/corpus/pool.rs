use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusError, PromptCandidate, PromptSource, Query, StyleGuide, StyleTag, TemplateRegistry};
use crate::gateway::{Gateway, GenerationRequest, Message};
use crate::io::derive_seed;
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub templates: TemplateRegistry,
    pub styles: Vec<StyleTag>,
    pub style_guide: StyleGuide,
    pub style_temperature: f64,
    /// Recombined candidates per query.
    pub recombinations: usize,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            templates: TemplateRegistry::default(),
            styles: StyleTag::ALL.to_vec(),
            style_guide: StyleGuide::default(),
            style_temperature: 1.0,
            recombinations: 4,
            max_tokens: 256,
            seed: 0,
        }
    }
}

/// Which cross pairing of the parents' segments forms the hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Segment 1 of A followed by segment 2 of B.
    A1B2,
    /// Segment 1 of B followed by segment 2 of A.
    B1A2,
}

/// Intermediate artifacts of one recombination, kept in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecombinationRecord {
    pub candidate_id: String,
    pub parent_a: String,
    pub parent_b: String,
    pub segments_a: [String; 2],
    pub segments_b: [String; 2],
    pub pairing: Pairing,
    pub draft: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFailure {
    pub query_id: String,
    pub stage: String,
    pub message: String,
    pub backend_failure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolOutcome {
    pub candidates: Vec<PromptCandidate>,
    pub recombinations: Vec<RecombinationRecord>,
    pub failures: Vec<PoolFailure>,
}

pub fn generate_static(query: &Query, registry: &TemplateRegistry) -> Result<Vec<PromptCandidate>, CorpusError> {
    if registry.is_empty() {
        return Err(CorpusError::EmptyRegistry);
    }
    Ok(registry
        .templates
        .iter()
        .map(|t| PromptCandidate {
            id: format!("{}/static/{}", query.id, t.name),
            query_id: query.id.clone(),
            text: t.text.clone(),
            source: PromptSource::StaticTemplate { name: t.name.clone() },
            generation_temperature: 0.0,
        })
        .collect())
}

fn looks_refused(text: &str) -> bool {
    let t = text.trim_start().to_lowercase();
    ["i'm sorry", "i am sorry", "i cannot", "i can't", "as an ai"].iter().any(|p| t.starts_with(p))
}

fn complete_nonempty(gateway: &Gateway, request: GenerationRequest, what: &str) -> Result<String, CorpusError> {
    let text = gateway.complete(&request)?;
    let text = text.trim();
    if text.is_empty() || looks_refused(text) {
        return Err(CorpusError::GenerationFailure(format!("{what}: empty or refused output")));
    }
    Ok(text.to_string())
}

pub fn generate_styled(
    gateway: &Gateway,
    query: &Query,
    style: StyleTag,
    guide: &StyleGuide,
    temperature: f64,
    max_tokens: u32,
) -> Result<PromptCandidate, CorpusError> {
    let body = format!("{}\nStyle description: {}", prompts::STYLE_BODY, guide.describe(style));
    let messages = vec![
        prompts::tagged_system(prompts::STYLE_HEADER, &body),
        Message::user(format!("{} {style}\n\n{}\n{}", prompts::STYLE_LABEL, prompts::QUERY_LABEL, query.text)),
    ];
    let request = GenerationRequest::new(messages).temperature(temperature).max_tokens(max_tokens);
    let text = complete_nonempty(gateway, request, &format!("style {style}"))?;
    Ok(PromptCandidate {
        id: format!("{}/style/{style}", query.id),
        query_id: query.id.clone(),
        text,
        source: PromptSource::LlmStyle { style },
        generation_temperature: temperature,
    })
}

fn decompose(gateway: &Gateway, parent: &PromptCandidate, max_tokens: u32) -> Result<[String; 2], CorpusError> {
    let messages = vec![
        prompts::tagged_system(prompts::DECOMPOSE_HEADER, prompts::DECOMPOSE_BODY),
        Message::user(format!("{}\n{}", prompts::PROMPT_LABEL, parent.text)),
    ];
    let reply = gateway.complete(&GenerationRequest::new(messages).temperature(0.0).max_tokens(max_tokens))?;
    let first = prompts::between(&reply, prompts::SEGMENT_1_OPEN, prompts::SEGMENT_1_CLOSE);
    let second = prompts::between(&reply, prompts::SEGMENT_2_OPEN, prompts::SEGMENT_2_CLOSE);
    match (first, second) {
        (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => Ok([a.to_string(), b.to_string()]),
        _ => Err(CorpusError::DecompositionFailure { prompt_id: parent.id.clone() }),
    }
}

/// Decompose both parents, cross-combine per `pairing`, and rephrase the draft.
pub fn recombine(
    gateway: &Gateway,
    parent_a: &PromptCandidate,
    parent_b: &PromptCandidate,
    pairing: Pairing,
    id: impl Into<String>,
    max_tokens: u32,
) -> Result<(PromptCandidate, RecombinationRecord), CorpusError> {
    if parent_a.id == parent_b.id {
        return Err(CorpusError::IdenticalParents(parent_a.id.clone()));
    }
    let segments_a = decompose(gateway, parent_a, max_tokens)?;
    let segments_b = decompose(gateway, parent_b, max_tokens)?;
    let draft = match pairing {
        Pairing::A1B2 => format!("{} {}", segments_a[0], segments_b[1]),
        Pairing::B1A2 => format!("{} {}", segments_b[0], segments_a[1]),
    };
    let messages = vec![
        prompts::tagged_system(prompts::REPHRASE_HEADER, prompts::REPHRASE_BODY),
        Message::user(format!("{}\n{draft}", prompts::DRAFT_LABEL)),
    ];
    let request = GenerationRequest::new(messages).temperature(0.0).max_tokens(max_tokens);
    let text = complete_nonempty(gateway, request, "rephrase")?;
    let id = id.into();
    let candidate = PromptCandidate {
        id: id.clone(),
        query_id: parent_a.query_id.clone(),
        text,
        source: PromptSource::Recombination { parent_a: parent_a.id.clone(), parent_b: parent_b.id.clone() },
        generation_temperature: 0.0,
    };
    let record = RecombinationRecord {
        candidate_id: id,
        parent_a: parent_a.id.clone(),
        parent_b: parent_b.id.clone(),
        segments_a,
        segments_b,
        pairing,
        draft,
    };
    Ok((candidate, record))
}

fn failure(query: &Query, stage: String, err: &CorpusError) -> PoolFailure {
    let backend_failure = matches!(err, CorpusError::Gateway(g) if g.is_backend_failure());
    log::warn!("pool: {} {stage}: {err}", query.id);
    PoolFailure { query_id: query.id.clone(), stage, message: err.to_string(), backend_failure }
}

fn build_for_query(gateway: &Gateway, query: &Query, config: &PoolConfig) -> Result<PoolOutcome, CorpusError> {
    let mut out = PoolOutcome { candidates: generate_static(query, &config.templates)?, ..Default::default() };
    for &style in &config.styles {
        match generate_styled(gateway, query, style, &config.style_guide, config.style_temperature, config.max_tokens) {
            Ok(c) => out.candidates.push(c),
            Err(e) => out.failures.push(failure(query, format!("style {style}"), &e)),
        }
    }
    let parents = out.candidates.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &query.id));
    for i in 0..config.recombinations {
        let stage = format!("recombination {i}");
        if parents.len() < 2 {
            let err = CorpusError::GenerationFailure("fewer than two parents available".into());
            out.failures.push(failure(query, stage, &err));
            continue;
        }
        let picked = sample(&mut rng, parents.len(), 2);
        let pairing = if rng.gen_bool(0.5) { Pairing::A1B2 } else { Pairing::B1A2 };
        let (a, b) = (&parents[picked.index(0)], &parents[picked.index(1)]);
        let id = format!("{}/recomb/{i}", query.id);
        match recombine(gateway, a, b, pairing, id, config.max_tokens) {
            Ok((c, r)) => {
                out.candidates.push(c);
                out.recombinations.push(r);
            }
            Err(e) => out.failures.push(failure(query, stage, &e)),
        }
    }
    Ok(out)
}

/// Build the candidate pool for every query. Per-query work runs in
/// parallel; the result is ordered by query id, then source, then index.
/// Sub-step failures are collected rather than aborting the pool.
pub fn build_pool(gateway: &Gateway, queries: &[Query], config: &PoolConfig) -> Result<PoolOutcome, CorpusError> {
    let mut sorted: Vec<&Query> = queries.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let parts = sorted
        .par_iter()
        .map(|q| build_for_query(gateway, q, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = PoolOutcome::default();
    for mut part in parts {
        part.candidates.sort_by_key(|c| c.source.rank());
        out.candidates.append(&mut part.candidates);
        out.recombinations.append(&mut part.recombinations);
        out.failures.append(&mut part.failures);
    }
    Ok(out)
}
