//! Metric estimators against brute-force references, and the majority-vote
//! property of labeled traces.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use promptgauge::corpus::{Query, Split};
use promptgauge::gateway::{Gateway, ScriptedBackend};
use promptgauge::metrics::{
    answer_entropy, canonicalize_answer, measure_candidate, query_baseline, AnswerDistribution, AnswerSchema,
    EstimatorSettings, ExecutionTrace, MetricName,
};
use promptgauge::prompts;

use crate::ensure;

const WORDS: [&str; 6] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];
const TOL: f64 = 1e-9;

/// `ln n - (1/n) Σ c ln c` with counts found by rescanning the list.
fn entropy_ref(answers: &[&str]) -> f64 {
    let n = answers.len() as f64;
    let mut seen: Vec<&str> = Vec::new();
    let mut acc = 0.0;
    for a in answers {
        if seen.contains(a) {
            continue;
        }
        seen.push(a);
        let c = answers.iter().filter(|b| *b == a).count() as f64;
        acc += c * c.ln();
    }
    n.ln() - acc / n
}

/// Mean cosine distance over all ordered pairs, subtracted from one.
fn stability_ref(vs: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y);
    let mut total = 0.0;
    let mut pairs = 0.0;
    for (i, a) in vs.iter().enumerate() {
        for (j, b) in vs.iter().enumerate() {
            if i != j {
                total += 1.0 - dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
                pairs += 1.0;
            }
        }
    }
    1.0 - total / pairs
}

fn nll_ref(lps: &[f64]) -> f64 {
    -lps.iter().rev().sum::<f64>() / lps.len() as f64
}

struct Instance {
    free: Vec<&'static str>,
    with: Vec<&'static str>,
    vectors: Vec<Vec<f64>>,
    logprobs: Vec<f64>,
    gold: &'static str,
}

fn instance(rng: &mut impl Rng) -> Instance {
    let n = rng.gen_range(2..=12);
    let k = rng.gen_range(1..=WORDS.len());
    let free = (0..n).map(|_| WORDS[rng.gen_range(0..k)]).collect();
    let with = (0..n).map(|_| WORDS[rng.gen_range(0..k)]).collect();
    let dim = rng.gen_range(2..=6);
    let vectors = WORDS
        .iter()
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() > 0.01 {
                break v;
            }
        })
        .collect();
    let logprobs = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(-6.0..0.0)).collect();
    Instance { free, with, vectors, logprobs, gold: WORDS[rng.gen_range(0..k)] }
}

pub fn oracle_suite() -> Result<String, String> {
    const INSTANCES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];
    let names = ["stability_score", "answer_entropy", "mi_score", "prompt_entropy", "nll_score"];
    for i in 0..INSTANCES {
        let inst = instance(&mut rng);
        let query_text = format!("Query {i}: pick a word.");
        let prompt = format!("Prompt {i}: answer with one word.");
        let mut backend = ScriptedBackend::new("oracle")
            .on_generate(prompts::JUDGE_HEADER, ["no scores here"])
            .on_generate(prompt.clone(), inst.with.clone())
            .on_generate(query_text.clone(), inst.free.clone())
            .on_score(inst.gold, &inst.logprobs);
        for (w, v) in WORDS.iter().zip(&inst.vectors) {
            backend = backend.on_embed(*w, v.clone());
        }
        let gw = Gateway::in_memory(Arc::new(backend));
        let query = Query {
            id: format!("q{i}"),
            text: query_text,
            gold_answer: inst.gold.to_string(),
            task: "words".into(),
            split: Split::Train,
        };
        let settings = EstimatorSettings { n_samples: inst.free.len() as u32, ..EstimatorSettings::default() };
        let schema = AnswerSchema::ExactMatch;
        let baseline = query_baseline(&gw, &query, &schema, &settings).map_err(|e| e.to_string())?;
        let m = measure_candidate(&gw, &query, &baseline, "p", &prompt, &schema, &settings).map_err(|e| e.to_string())?;

        let word_vec = |w: &str| inst.vectors[WORDS.iter().position(|x| *x == w).unwrap()].clone();
        let embeddings: Vec<Vec<f64>> = inst.with.iter().map(|w| word_vec(w)).collect();
        let (h_free, h_with) = (entropy_ref(&inst.free), entropy_ref(&inst.with));
        let direct = answer_entropy(&AnswerDistribution::from_answers(&inst.with).unwrap());
        let pairs = [
            (m.metrics.stability_score, stability_ref(&embeddings)),
            (m.metrics.query_entropy, h_free),
            (m.metrics.mi_score, h_free - h_with),
            (m.metrics.get(MetricName::PromptEntropy).unwrap(), h_with),
            (m.metrics.nll_score, nll_ref(&inst.logprobs)),
        ];
        for (k, (got, want)) in pairs.iter().enumerate() {
            worst[k] = worst[k].max((got - want).abs());
        }
        worst[1] = worst[1].max((direct - h_with).abs());
    }
    let detail = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(worst.iter().all(|&w| w <= TOL), || format!("max error above {TOL}: {detail}"))?;
    Ok(format!("{INSTANCES} instances, max abs error {detail}"))
}

/// Ways a response can state a numeric answer.
fn phrase(answer: i64, rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => answer.to_string(),
        1 => format!("Adding them up gives {answer}."),
        2 => format!("Let me check: 3 + 4 = 7, so...\nFinal answer: {answer}"),
        _ => format!("The answer is {answer}"),
    }
}

pub fn majority_vote() -> Result<String, String> {
    const TRACES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let schema = AnswerSchema::Numeric;
    for t in 0..TRACES {
        let n: usize = rng.gen_range(1..=15);
        let correct = rng.gen_range(n / 2 + 1..=n);
        let gold: i64 = rng.gen_range(-50..200);
        let mut responses: Vec<String> = (0..correct).map(|_| phrase(gold, &mut rng)).collect();
        // wrong answers drawn from a small pool so they can cluster
        let wrong: Vec<i64> = (1..=3).map(|d| gold + d * 11).collect();
        responses.extend((correct..n).map(|_| phrase(*wrong.choose(&mut rng).unwrap(), &mut rng)));
        responses.shuffle(&mut rng);
        let trace = ExecutionTrace::from_responses("q", "p", responses, &gold.to_string(), &schema, 0.7)
            .map_err(|e| e.to_string())?;
        let label = trace.label();
        ensure(label.mean_accuracy > 0.5 && label.is_good, || format!("trace {t}: accuracy {}", label.mean_accuracy))?;
        let canonical_gold = canonicalize_answer(&gold.to_string(), &schema);
        ensure(trace.modal_answer() == Some(canonical_gold.as_str()), || {
            format!("trace {t}: modal {:?} vs gold {canonical_gold}", trace.modal_answer())
        })?;
    }
    Ok(format!("{TRACES}/{TRACES} traces recover the gold answer by majority vote"))
}
