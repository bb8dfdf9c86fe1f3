use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, GenerationRequest, Message};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub clarity: u8,
    pub coherence: u8,
    pub specificity: u8,
}

fn field_re(name: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b{name}\s*[:=]\s*(-?\d+)")).unwrap()
}

/// Parse `clarity: n, coherence: n, specificity: n`. Every field must be
/// present and in `1..=10`.
pub fn parse_judge_scores(text: &str) -> Option<JudgeScores> {
    static RES: OnceLock<[Regex; 3]> = OnceLock::new();
    let [c, h, s] = RES.get_or_init(|| [field_re("clarity"), field_re("coherence"), field_re("specificity")]);
    let get = |re: &Regex| -> Option<u8> {
        let v: i64 = re.captures(text)?[1].parse().ok()?;
        (1..=10).contains(&v).then_some(v as u8)
    };
    Some(JudgeScores { clarity: get(c)?, coherence: get(h)?, specificity: get(s)? })
}

/// One judge call at temperature 0, one reprompt on a parse failure, then
/// `None` (the score is recorded as missing).
pub fn judge_scores(gateway: &Gateway, query: &str, prompt: &str) -> Result<Option<JudgeScores>, GatewayError> {
    let mut messages = vec![
        prompts::tagged_system(prompts::JUDGE_HEADER, prompts::JUDGE_BODY),
        Message::user(format!("{}\n{query}\n\n{}\n{prompt}", prompts::QUERY_LABEL, prompts::PROMPT_LABEL)),
    ];
    let first = gateway.complete(&GenerationRequest::new(messages.clone()).temperature(0.0).max_tokens(64))?;
    if let Some(scores) = parse_judge_scores(&first) {
        return Ok(Some(scores));
    }
    messages.push(Message::assistant(first));
    messages.push(Message::user(prompts::JUDGE_REPROMPT));
    let second = gateway.complete(&GenerationRequest::new(messages).temperature(0.0).max_tokens(64))?;
    let parsed = parse_judge_scores(&second);
    if parsed.is_none() {
        log::warn!("judge output unparseable after reprompt; scores recorded as missing");
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use std::sync::Arc;

    #[test]
    fn parser_contract() {
        assert_eq!(
            parse_judge_scores("clarity: 8, coherence: 7, specificity: 5"),
            Some(JudgeScores { clarity: 8, coherence: 7, specificity: 5 })
        );
        assert_eq!(parse_judge_scores("clarity: 11, coherence: 7, specificity: 5"), None);
        assert_eq!(parse_judge_scores("clarity: 0, coherence: 7, specificity: 5"), None);
        assert_eq!(parse_judge_scores("clarity: 8, coherence: 7"), None);
    }

    #[test]
    fn missing_field_reprompts_once_then_gives_up() {
        let backend = ScriptedBackend::new("judge")
            .on_generate(prompts::JUDGE_HEADER, ["clarity: 8, coherence: 7", "still wrong"]);
        let backend = Arc::new(backend);
        let gateway = Gateway::in_memory(backend.clone());
        assert_eq!(judge_scores(&gateway, "q", "p").unwrap(), None);
        assert_eq!(gateway.call_counts().generate, 2);
    }

    #[test]
    fn reprompt_can_recover() {
        let backend = ScriptedBackend::new("judge")
            .on_generate(prompts::JUDGE_HEADER, ["great prompt!", "clarity: 3, coherence: 4, specificity: 9"]);
        let gateway = Gateway::in_memory(Arc::new(backend));
        assert_eq!(
            judge_scores(&gateway, "q", "p").unwrap(),
            Some(JudgeScores { clarity: 3, coherence: 4, specificity: 9 })
        );
    }
}
