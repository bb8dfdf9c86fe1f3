use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StyleTag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub text: String,
}

/// Query-independent instruction templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRegistry {
    pub templates: Vec<Template>,
}

const DEFAULT_TEMPLATES: [(&str, &str); 5] = [
    ("zero_shot_cot", "Let's think step by step:"),
    ("ape", "Let's work this out in a step by step way to be sure we have the right answer:"),
    (
        "least_to_most",
        "First, decompose the question into several sub-questions that need to be solved, and then solve each question step by step:",
    ),
    (
        "tree_of_thought",
        "Imagine three different experts are answering this question. All experts will write down 1 step of their thinking, \
then share it with the group. Then all experts will go on to the next step, etc. If any expert realizes they're wrong at any point then they leave.",
    ),
    (
        "multi_agent_debate",
        "3 experts are discussing the question, trying to solve it step by step, and make sure the result is correct:",
    ),
];

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self {
            templates: DEFAULT_TEMPLATES
                .iter()
                .map(|(name, text)| Template { name: name.to_string(), text: text.to_string() })
                .collect(),
        }
    }
}

impl TemplateRegistry {
    pub fn empty() -> Self {
        Self { templates: Vec::new() }
    }

    /// Add or replace a template by name.
    pub fn register(&mut self, name: impl Into<String>, text: impl Into<String>) {
        let name = name.into();
        let text = text.into();
        match self.templates.iter_mut().find(|t| t.name == name) {
            Some(t) => t.text = text,
            None => self.templates.push(Template { name, text }),
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Per-style descriptions sent to the prompt-writing model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleGuide(pub BTreeMap<StyleTag, String>);

impl Default for StyleGuide {
    fn default() -> Self {
        let entries = [
            (StyleTag::StepByStep, "Break the solution into explicit, ordered steps and end with a clear conclusion."),
            (StyleTag::ExpertDiscussion, "Have several domain experts reason about the problem, critique each other and converge on one answer."),
            (StyleTag::Socratic, "Guide the solver with a sequence of probing questions that surface assumptions before concluding."),
            (StyleTag::Creative, "Encourage an imaginative framing or analogy that exposes the structure of the problem, then commit to an answer."),
            (StyleTag::Verification, "Ask for a provisional answer, a check of that answer against every constraint, and a revision if the check fails."),
            (StyleTag::Contrastive, "Ask for competing hypotheses to be compared and the inconsistent ones rejected."),
        ];
        Self(entries.into_iter().map(|(t, d)| (t, d.to_string())).collect())
    }
}

impl StyleGuide {
    pub fn describe(&self, style: StyleTag) -> &str {
        self.0.get(&style).map(String::as_str).unwrap_or_default()
    }
}
