use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{HarnessError, SplitPolicy};
use crate::corpus::{Query, Split};
use crate::io::{derive_seed, IoError};
use crate::metrics::{canonicalize_answer, AnswerSchema};

/// A dataset line as stored on disk.
#[derive(Debug, Clone, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(alias = "query", alias = "input")]
    text: String,
    #[serde(default)]
    gold_answer: Option<String>,
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    split: Option<Split>,
}

fn malformed(origin: &str, line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Io(IoError::MalformedRecord { path: origin.to_string(), line, message: message.into() })
}

/// Parse dataset text and assign splits. Gold answers are stored in the
/// task's canonical form.
pub fn parse_queries(
    text: &str,
    origin: &str,
    task: &str,
    schema: &AnswerSchema,
    policy: SplitPolicy,
    seed: u64,
) -> Result<Vec<Query>, HarnessError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| malformed(origin, line_no, e.to_string()))?;
        if raw.id.trim().is_empty() || raw.text.trim().is_empty() {
            return Err(malformed(origin, line_no, "empty id or text"));
        }
        let gold = match raw.gold_answer.as_deref().map(str::trim) {
            Some(g) if !g.is_empty() => canonicalize_answer(g, schema),
            _ => return Err(malformed(origin, line_no, "missing gold_answer")),
        };
        if let Some(t) = &raw.task {
            if t != task {
                return Err(malformed(origin, line_no, format!("task {t:?} does not match dataset task {task:?}")));
            }
        }
        if !seen.insert(raw.id.clone()) {
            return Err(HarnessError::DuplicateId { id: raw.id, line: line_no });
        }
        if policy == SplitPolicy::AsGiven && raw.split.is_none() {
            return Err(malformed(origin, line_no, "missing split under the as_given policy"));
        }
        records.push((raw.id, raw.text, gold, raw.split));
    }

    let n = records.len();
    let assigned: Vec<Option<Split>> = match policy {
        SplitPolicy::AsGiven => records.iter().map(|r| r.3).collect(),
        _ => {
            let (train, test) = split_sizes(policy, n).ok_or_else(|| {
                HarnessError::Config(format!("{origin}: {n} records cannot satisfy split policy {policy:?}"))
            })?;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("split/{task}"))));
            let mut out = vec![None; n];
            for (rank, &i) in order.iter().enumerate() {
                out[i] = if rank < train {
                    Some(Split::Train)
                } else if rank < train + test {
                    Some(Split::Test)
                } else {
                    None
                };
            }
            out
        }
    };

    Ok(records
        .into_iter()
        .zip(assigned)
        .filter_map(|((id, text, gold_answer, _), split)| {
            Some(Query { id, text, gold_answer, task: task.to_string(), split: split? })
        })
        .collect())
}

/// (train, test) sizes for `n` records, or `None` if the policy asks for more
/// records than exist.
pub fn split_sizes(policy: SplitPolicy, n: usize) -> Option<(usize, usize)> {
    match policy {
        SplitPolicy::Auto if n >= 200 => Some((100, 100)),
        SplitPolicy::Auto | SplitPolicy::Half => Some((n / 2, n - n / 2)),
        SplitPolicy::Fixed { train, test } => (train + test <= n).then_some((train, test)),
        SplitPolicy::AsGiven => None,
    }
}

pub fn ingest(
    path: &Path,
    task: &str,
    schema: &AnswerSchema,
    policy: SplitPolicy,
    seed: u64,
) -> Result<Vec<Query>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(IoError::Io { path: path.display().to_string(), source: e }))?;
    parse_queries(&text, &path.display().to_string(), task, schema, policy, seed)
}
