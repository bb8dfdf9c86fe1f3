//! Instruction texts for the helper LLM calls.
//!
//! Each helper request starts its system message with a task header line so
//! that transcripts are self-describing (and the offline simulator can route
//! them). Bodies are configurable; headers are not.

use crate::gateway::Message;

pub const STYLE_HEADER: &str = "### Task: write a system prompt";
pub const DECOMPOSE_HEADER: &str = "### Task: decompose a prompt";
pub const REPHRASE_HEADER: &str = "### Task: rephrase a hybrid prompt";
pub const JUDGE_HEADER: &str = "### Task: rate a prompt";
pub const DIAGNOSE_HEADER: &str = "### Task: diagnose a prompt";
pub const REWRITE_HEADER: &str = "### Task: revise a prompt";

pub const SEGMENT_1_OPEN: &str = "<segment1>";
pub const SEGMENT_1_CLOSE: &str = "</segment1>";
pub const SEGMENT_2_OPEN: &str = "<segment2>";
pub const SEGMENT_2_CLOSE: &str = "</segment2>";

pub const QUERY_LABEL: &str = "Query:";
pub const PROMPT_LABEL: &str = "Prompt:";
pub const DRAFT_LABEL: &str = "Draft:";
pub const STYLE_LABEL: &str = "Style:";
pub const METRIC_LABEL: &str = "Metric:";
pub const PROMPT_EDITS_LABEL: &str = "Prompt edits:";
pub const QUERY_CLARIFICATIONS_LABEL: &str = "Query clarifications:";

pub fn tagged_system(header: &str, body: &str) -> Message {
    Message::system(format!("{header}\n{body}"))
}

pub const STYLE_BODY: &str = "Write a system prompt that will help a model answer the query below in the requested reasoning style. \
Tailor it to the query, but do not answer the query yourself. Return only the prompt text.";

pub const DECOMPOSE_BODY: &str = "Split the prompt below into exactly two consecutive semantic segments: \
the first sets up the approach, the second carries the remaining instructions. \
Return them verbatim between the markers <segment1>...</segment1> and <segment2>...</segment2> and nothing else.";

pub const REPHRASE_BODY: &str = "The draft below was assembled from fragments of two prompts. \
Rewrite it as one fluent instruction that keeps every requirement. Return only the rewritten prompt.";

pub const JUDGE_BODY: &str = "Rate the prompt for the given query on three criteria, each an integer from 1 to 10: \
clarity, coherence and specificity. Answer on one line exactly as: clarity: <n>, coherence: <n>, specificity: <n>";

pub const JUDGE_REPROMPT: &str = "Your previous answer could not be parsed. Reply with exactly one line of the form \
clarity: <n>, coherence: <n>, specificity: <n> using integers from 1 to 10.";

pub const DIAGNOSE_FORMAT: &str = "For every issue you find, write one line: ISSUE: <issue name from the list> | SUGGESTION: <one concrete edit>. \
If there is no issue, write the single word NONE.";

pub const DIAGNOSE_REPROMPT: &str = "Your previous answer did not follow the required format. Use only lines of the form \
ISSUE: <issue name> | SUGGESTION: <edit>, or the single word NONE.";

pub const REWRITE_BODY: &str = "Apply the listed edits to the prompt. Put the revised prompt between <prompt> and </prompt>. \
If query clarifications are listed, write a short block of clarifications that state the missing assumptions and the expected answer format, \
between <clarifications> and </clarifications>. Do not answer the query.";

/// Text between `open` and `close`, trimmed.
pub fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(text[start..end].trim())
}

/// The block following a `label` line, up to the next blank line or another known label.
pub fn section<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(label)? + label.len();
    let rest = &text[start..];
    let end = rest.find("\n\n").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn between_and_section() {
        let t = "x <segment1> a b </segment1> <segment2>c</segment2>";
        assert_eq!(between(t, SEGMENT_1_OPEN, SEGMENT_1_CLOSE), Some("a b"));
        assert_eq!(between(t, SEGMENT_2_OPEN, SEGMENT_2_CLOSE), Some("c"));
        assert_eq!(between(t, "<x>", "</x>"), None);
        let s = "Query:\nwhat\nis it\n\nPrompt:\np";
        assert_eq!(section(s, QUERY_LABEL), Some("what\nis it"));
        assert_eq!(section(s, PROMPT_LABEL), Some("p"));
    }
}
