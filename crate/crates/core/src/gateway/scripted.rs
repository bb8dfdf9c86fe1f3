use std::sync::atomic::{AtomicU32, Ordering};

use parking_lot::Mutex;

use super::simulated::hashed_embedding;
use super::{Backend, BackendError, Capabilities, Completion, GenerationRequest, Message, TokenLogprob};

type Responder = Box<dyn Fn(&GenerationRequest, u32) -> Option<String> + Send + Sync>;

enum GenerateRule {
    /// Matches when the joined context contains `needle`; yields the responses
    /// in order, repeating the last one.
    Sequence { needle: String, responses: Vec<String>, cursor: usize },
    Responder(Responder),
}

/// A backend driven by fixture rules, for building deterministic scenarios.
///
/// Unmatched generation requests fail with an invalid-response error naming
/// the request, which makes missing fixtures obvious.
pub struct ScriptedBackend {
    id: String,
    scoring: bool,
    generate_rules: Mutex<Vec<GenerateRule>>,
    embed_rules: Vec<(String, Vec<f64>)>,
    embed_fallback_dim: Option<usize>,
    score_rules: Vec<(String, Vec<TokenLogprob>)>,
    failures_left: AtomicU32,
    calls: AtomicU32,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            scoring: true,
            generate_rules: Mutex::new(Vec::new()),
            embed_rules: Vec::new(),
            embed_fallback_dim: None,
            score_rules: Vec::new(),
            failures_left: AtomicU32::new(0),
            calls: AtomicU32::new(0),
        }
    }

    pub fn on_generate<S: Into<String>>(self, needle: impl Into<String>, responses: impl IntoIterator<Item = S>) -> Self {
        self.generate_rules.lock().push(GenerateRule::Sequence {
            needle: needle.into(),
            responses: responses.into_iter().map(Into::into).collect(),
            cursor: 0,
        });
        self
    }

    pub fn on_generate_with(
        self,
        responder: impl Fn(&GenerationRequest, u32) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.generate_rules.lock().push(GenerateRule::Responder(Box::new(responder)));
        self
    }

    /// Exact-text embedding fixture.
    pub fn on_embed(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        self.embed_rules.push((text.into(), values));
        self
    }

    /// Texts without a fixture get a hashed bag-of-words embedding of `dim`.
    pub fn embed_fallback(mut self, dim: usize) -> Self {
        self.embed_fallback_dim = Some(dim);
        self
    }

    pub fn on_score(mut self, target: impl Into<String>, logprobs: &[f64]) -> Self {
        let target = target.into();
        let tokens = split_tokens(&target, logprobs.len());
        let lps = tokens.into_iter().zip(logprobs).map(|(token, &logprob)| TokenLogprob { token, logprob }).collect();
        self.score_rules.push((target, lps));
        self
    }

    pub fn without_scoring(mut self) -> Self {
        self.scoring = false;
        self
    }

    /// The next `n` backend calls fail with a retryable network error.
    pub fn fail_times(self, n: u32) -> Self {
        self.failures_left.store(n, Ordering::SeqCst);
        self
    }

    pub fn backend_calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    fn tick(&self) -> Result<(), BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let left = self.failures_left.load(Ordering::SeqCst);
        if left > 0 {
            self.failures_left.store(left - 1, Ordering::SeqCst);
            return Err(BackendError::Network { message: "scripted outage".into(), retryable: true });
        }
        Ok(())
    }
}

/// Split `text` into `n` contiguous, non-empty-where-possible pieces.
fn split_tokens(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if n == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let end = if i + 1 == n { chars.len() } else { ((i + 1) * chars.len() / n).max(start) };
        out.push(chars[start..end].iter().collect());
        start = end;
    }
    out
}

pub(crate) fn joined_context(messages: &[Message]) -> String {
    messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { scoring: self.scoring }
    }

    fn generate(&self, request: &GenerationRequest, sample_indices: &[u32]) -> Result<Vec<Completion>, BackendError> {
        self.tick()?;
        let context = joined_context(&request.messages);
        let mut rules = self.generate_rules.lock();
        let mut out = Vec::with_capacity(sample_indices.len());
        for &index in sample_indices {
            let mut answer = None;
            for rule in rules.iter_mut() {
                match rule {
                    GenerateRule::Sequence { needle, responses, cursor } => {
                        if context.contains(needle.as_str()) && !responses.is_empty() {
                            let r = responses[(*cursor).min(responses.len() - 1)].clone();
                            *cursor += 1;
                            answer = Some(r);
                        }
                    }
                    GenerateRule::Responder(f) => answer = f(request, index),
                }
                if answer.is_some() {
                    break;
                }
            }
            match answer {
                Some(text) => out.push(Completion::text(text)),
                None => {
                    return Err(BackendError::InvalidResponse(format!(
                        "no scripted response for context: {}",
                        context.chars().take(120).collect::<String>()
                    )))
                }
            }
        }
        Ok(out)
    }

    fn score(&self, _context: &[Message], target: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        if !self.scoring {
            return Err(BackendError::Unsupported("continuation scoring".into()));
        }
        self.tick()?;
        self.score_rules
            .iter()
            .find(|(t, _)| t == target)
            .map(|(_, lps)| lps.clone())
            .ok_or_else(|| BackendError::InvalidResponse(format!("no scripted logprobs for {target:?}")))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.tick()?;
        if let Some((_, v)) = self.embed_rules.iter().find(|(t, _)| t == text) {
            return Ok(v.clone());
        }
        match self.embed_fallback_dim {
            Some(dim) => Ok(hashed_embedding(text, dim)),
            None => Err(BackendError::InvalidResponse(format!("no scripted embedding for {text:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayError, RetryPolicy};
    use std::sync::Arc;

    #[test]
    fn token_split_reconstructs_text() {
        for n in 1..6 {
            let parts = split_tokens("hello", n);
            assert_eq!(parts.len(), n);
            assert_eq!(parts.concat(), "hello");
        }
    }

    #[test]
    fn embeddings_are_cached_after_first_call() {
        let backend = Arc::new(ScriptedBackend::new("s").embed_fallback(8));
        let gw = Gateway::in_memory(backend.clone());
        let a = gw.embed("abc").unwrap();
        let b = gw.embed("abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 8);
        assert_eq!(backend.backend_calls(), 1);
        assert_eq!(gw.call_counts().embed, 2);
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = Arc::new(ScriptedBackend::new("s").on_generate("q", ["ok"]).fail_times(2));
        let gw = Gateway::in_memory(backend.clone()).with_retry(RetryPolicy::immediate(3));
        let req = GenerationRequest::new(vec![Message::user("q")]);
        assert_eq!(gw.complete(&req).unwrap(), "ok");
        assert_eq!(backend.backend_calls(), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let backend = Arc::new(ScriptedBackend::new("s").on_generate("q", ["ok"]).fail_times(5));
        let gw = Gateway::in_memory(backend.clone()).with_retry(RetryPolicy::immediate(3));
        let req = GenerationRequest::new(vec![Message::user("q")]);
        match gw.generate(&req) {
            Err(GatewayError::NetworkFailure { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(backend.backend_calls(), 3);
    }

    #[test]
    fn ten_samples_from_a_live_backend() {
        let backend = Arc::new(ScriptedBackend::new("s").on_generate_with(|_, i| Some(format!("answer {i}"))));
        let gw = Gateway::in_memory(backend);
        let req = GenerationRequest::new(vec![Message::user("q")]).temperature(0.7).samples(10);
        let out = gw.generate(&req).unwrap();
        assert_eq!(out.samples.len(), 10);
        assert!(!out.cached);
        assert_eq!(out.samples[9].text, "answer 9");
        assert!(gw.generate(&req).unwrap().cached);
    }

    #[test]
    fn scoring_capability_is_enforced() {
        let gw = Gateway::in_memory(Arc::new(ScriptedBackend::new("s").without_scoring()));
        assert!(matches!(
            gw.forced_logprobs(&[Message::user("q")], "a"),
            Err(GatewayError::UnsupportedCapability { .. })
        ));
    }

    #[test]
    fn certain_backend_gives_zero_logprobs() {
        let gw = Gateway::in_memory(Arc::new(ScriptedBackend::new("s").on_score("yes", &[0.0, 0.0, 0.0])));
        let lps = gw.forced_logprobs(&[Message::user("q")], "yes").unwrap();
        assert_eq!(lps.len(), 3);
        assert!(lps.iter().all(|t| t.logprob == 0.0));
    }
}
