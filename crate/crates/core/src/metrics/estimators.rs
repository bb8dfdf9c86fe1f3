//! Plug-in estimators over sampled responses. Natural log throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Empirical distribution over canonical answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self, MetricsError> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(MetricsError::InvalidDistribution(format!(
                "support has {} entries, probs {}",
                support.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MetricsError::InvalidDistribution("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MetricsError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut seen = std::collections::HashSet::new();
        if !support.iter().all(|s| seen.insert(s)) {
            return Err(MetricsError::InvalidDistribution("duplicate support entry".into()));
        }
        Ok(Self { support, probs })
    }

    /// Frequencies of `answers`; support ordered lexicographically.
    pub fn from_answers<S: AsRef<str>>(answers: &[S]) -> Result<Self, MetricsError> {
        if answers.is_empty() {
            return Err(MetricsError::EmptyTrace);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in answers {
            *counts.entry(a.as_ref()).or_default() += 1;
        }
        let n = answers.len() as f64;
        let (support, probs) = counts.into_iter().map(|(a, c)| (a.to_string(), c as f64 / n)).unzip();
        Ok(Self { support, probs })
    }

    /// Distribution from raw counts over anonymous outcomes.
    pub fn from_counts(counts: &[usize]) -> Result<Self, MetricsError> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(MetricsError::EmptyTrace);
        }
        let support = (0..counts.len()).map(|i| format!("#{i}")).collect();
        let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::new(support, probs)
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `H = -Σ p ln p` with `0 ln 0 = 0`.
pub fn answer_entropy(dist: &AnswerDistribution) -> f64 {
    let h: f64 = dist.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    // summation can leave a -0.0 or a 1-ulp negative for point masses
    h.max(0.0)
}

/// `H(A|q) - H(A|q,p)`. Can be negative under the plug-in estimator.
pub fn mutual_information(prompt_free: &AnswerDistribution, with_prompt: &AnswerDistribution) -> f64 {
    answer_entropy(prompt_free) - answer_entropy(with_prompt)
}

/// Mean negated token logprob.
pub fn nll_from_logprobs(logprobs: &[f64]) -> Result<f64, MetricsError> {
    if logprobs.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let total: f64 = logprobs.iter().map(|lp| -lp).sum();
    Ok((total / logprobs.len() as f64).max(0.0))
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// One minus the mean pairwise cosine distance of the response embeddings.
pub fn stability_score(embeddings: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricsError::DegenerateTrace { n });
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(MetricsError::InvalidDistribution("embeddings differ in dimension".into()));
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| e.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(index) = norms.iter().position(|&x| x == 0.0 || !x.is_finite()) {
        return Err(MetricsError::ZeroVector { index });
    }
    let mut distance = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            distance += 1.0 - cosine(&embeddings[i], &embeddings[j], norms[i], norms[j]);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(1.0 - distance / pairs)
}
