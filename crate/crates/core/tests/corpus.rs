use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use promptgauge::corpus::{
    build_pool, generate_static, generate_styled, recombine, CorpusError, Pairing, PoolConfig, PromptCandidate,
    PromptSource, Query, Split, StyleGuide, StyleTag, TemplateRegistry,
};
use promptgauge::gateway::{Gateway, Role, ScriptedBackend, SimulatedBackend};
use promptgauge::io::to_jsonl;
use promptgauge::prompts;

fn query(id: &str, text: &str) -> Query {
    Query { id: id.into(), text: text.into(), gold_answer: "42".into(), task: "arith".into(), split: Split::Train }
}

fn candidate(id: &str, text: &str) -> PromptCandidate {
    PromptCandidate {
        id: id.into(),
        query_id: "q".into(),
        text: text.into(),
        source: PromptSource::StaticTemplate { name: id.into() },
        generation_temperature: 0.0,
    }
}

#[test]
fn static_candidates_follow_the_registry() {
    let q = query("q", "What is 40 + 2?");
    assert_eq!(generate_static(&q, &TemplateRegistry::default()).unwrap().len(), 5);

    let mut one = TemplateRegistry::empty();
    one.register("only", "Answer carefully.");
    let c = generate_static(&q, &one).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].text, "Answer carefully.");

    let mut seven = TemplateRegistry::default();
    seven.register("extra_a", "First extra.");
    seven.register("extra_b", "Second extra.");
    assert_eq!(generate_static(&q, &seven).unwrap().len(), 7);

    assert!(matches!(generate_static(&q, &TemplateRegistry::empty()), Err(CorpusError::EmptyRegistry)));
}

#[test]
fn styled_candidate_is_the_backend_text() {
    let backend = ScriptedBackend::new("fixture").on_generate(prompts::STYLE_HEADER, ["Reason like a panel of experts."]);
    let gw = Gateway::in_memory(Arc::new(backend));
    let c = generate_styled(&gw, &query("q", "What is 40 + 2?"), StyleTag::ExpertDiscussion, &StyleGuide::default(), 1.0, 64)
        .unwrap();
    assert_eq!(c.text, "Reason like a panel of experts.");
    assert_eq!(c.source, PromptSource::LlmStyle { style: StyleTag::ExpertDiscussion });
    assert_eq!(c.generation_temperature, 1.0);
}

#[test]
fn six_styles_give_six_tags() {
    let gw = Gateway::in_memory(Arc::new(SimulatedBackend::new(8)));
    let q = query("q", "What is 40 + 2?");
    let tags: BTreeSet<StyleTag> = StyleTag::ALL
        .iter()
        .map(|&s| match generate_styled(&gw, &q, s, &StyleGuide::default(), 1.0, 64).unwrap().source {
            PromptSource::LlmStyle { style } => style,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(tags.len(), 6);
}

fn decomposition_fixture() -> Gateway {
    let seg = |a: &str, b: &str| {
        format!("{}{a}{}\n{}{b}{}", prompts::SEGMENT_1_OPEN, prompts::SEGMENT_1_CLOSE, prompts::SEGMENT_2_OPEN, prompts::SEGMENT_2_CLOSE)
    };
    let backend = ScriptedBackend::new("fixture")
        .on_generate("PARENT-A", [seg("A one", "A two")])
        .on_generate("PARENT-B", [seg("B one", "B two")])
        // identity rephrase: echo the draft
        .on_generate_with(|req, _| {
            let system = &req.messages.iter().find(|m| m.role == Role::System)?.content;
            if !system.starts_with(prompts::REPHRASE_HEADER) {
                return None;
            }
            let user = &req.messages.iter().find(|m| m.role == Role::User)?.content;
            user.split_once(prompts::DRAFT_LABEL).map(|(_, d)| d.trim().to_string())
        });
    Gateway::in_memory(Arc::new(backend))
}

#[test]
fn recombination_crosses_segments() {
    let gw = decomposition_fixture();
    let (a, b) = (candidate("a", "PARENT-A text"), candidate("b", "PARENT-B text"));
    let (c, record) = recombine(&gw, &a, &b, Pairing::A1B2, "q/recomb/0", 64).unwrap();
    assert_eq!(c.text, "A one B two");
    assert_eq!(record.segments_a, ["A one".to_string(), "A two".to_string()]);
    assert_eq!(c.source, PromptSource::Recombination { parent_a: "a".into(), parent_b: "b".into() });
    let (c, _) = recombine(&gw, &a, &b, Pairing::B1A2, "q/recomb/1", 64).unwrap();
    assert_eq!(c.text, "B one A two");
}

#[test]
fn identical_parents_are_rejected() {
    let gw = decomposition_fixture();
    let a = candidate("a", "PARENT-A text");
    assert!(matches!(recombine(&gw, &a, &a, Pairing::A1B2, "x", 64), Err(CorpusError::IdenticalParents(_))));
}

#[test]
fn missing_segment_marker_is_a_decomposition_failure() {
    let backend = ScriptedBackend::new("fixture").on_generate(prompts::DECOMPOSE_HEADER, ["no markers here"]);
    let gw = Gateway::in_memory(Arc::new(backend));
    let r = recombine(&gw, &candidate("a", "x"), &candidate("b", "y"), Pairing::A1B2, "z", 64);
    assert!(matches!(r, Err(CorpusError::DecompositionFailure { .. })));
}

fn two_queries() -> Vec<Query> {
    vec![query("q2", "Is 14 an even number?"), query("q1", "What is 17 + 25?")]
}

#[test]
fn two_queries_give_thirty_candidates() {
    let gw = Gateway::in_memory(Arc::new(SimulatedBackend::new(8)));
    let out = build_pool(&gw, &two_queries(), &PoolConfig::default()).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    assert_eq!(out.candidates.len(), 30);
    assert_eq!(out.recombinations.len(), 8);

    // ordered by query id, then source rank
    let keys: Vec<(String, u8)> = out.candidates.iter().map(|c| (c.query_id.clone(), c.source.rank())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    // lineage: parents exist, differ, belong to the same query and are not recombinations
    let by_id: HashMap<&str, &PromptCandidate> = out.candidates.iter().map(|c| (c.id.as_str(), c)).collect();
    for c in &out.candidates {
        if let PromptSource::Recombination { parent_a, parent_b } = &c.source {
            assert_ne!(parent_a, parent_b);
            for p in [parent_a, parent_b] {
                let parent = by_id[p.as_str()];
                assert_eq!(parent.query_id, c.query_id);
                assert!(parent.source.rank() < 2);
            }
        }
    }
}

#[test]
fn pool_is_reproducible_under_a_fixed_seed() {
    let config = PoolConfig { seed: 17, ..PoolConfig::default() };
    let run = || {
        let gw = Gateway::in_memory(Arc::new(SimulatedBackend::new(8)));
        to_jsonl(&build_pool(&gw, &two_queries(), &config).unwrap().candidates).unwrap()
    };
    assert_eq!(run(), run());
}
