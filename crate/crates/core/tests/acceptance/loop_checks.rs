//! Optimization loop scenarios and the no-execution property of evaluation.

use std::sync::Arc;

use promptgauge::evaluator::{EvaluatorInput, EvaluatorModel, Shape};
use promptgauge::gateway::{Gateway, SimulatedBackend};
use promptgauge::metrics::MetricName;
use promptgauge::optimizer::StopReason;

use crate::common::*;
use crate::ensure;

pub fn optimization_loop() -> Result<String, String> {
    // (a) passing input: no rewrite, no LLM call
    let (out, calls) = already_good().run();
    ensure(out.trace.stop_reason == StopReason::PassedThreshold && out.trace.iterations.is_empty(), || {
        format!("(a) {:?} after {} iterations", out.trace.stop_reason, out.trace.iterations.len())
    })?;
    ensure(calls.generate == 0, || format!("(a) {} generation calls", calls.generate))?;

    // (b) never passing: exactly three iterations, best state returned
    for (name, s) in [("non-monotone", non_monotone()), ("worsening", worsening())] {
        let (out, _) = s.run();
        let rewrites = out.trace.iterations.iter().filter(|i| i.rewrite.is_some()).count();
        ensure(out.trace.stop_reason == StopReason::MaxIterations && rewrites == 3, || {
            format!("(b) {name}: {:?} after {rewrites} rewrites", out.trace.stop_reason)
        })?;
    }

    // (c) query_entropy suggestions touch only the query
    for tagged in [true, false] {
        let (out, _) = query_clarification(tagged).run();
        let it = &out.trace.iterations[0];
        ensure(it.attribution.ranking[0] == MetricName::QueryEntropy, || format!("(c) ranking {:?}", it.attribution.ranking))?;
        let r = it.rewrite.as_ref().ok_or("(c) no rewrite")?;
        ensure(r.prompt == P0 && r.query == clarified_query(), || format!("(c) rewrite gave {:?} / {:?}", r.prompt, r.query))?;
    }
    let (out, _) = stability_only().run();
    ensure(out.query == Q0 && out.prompt != P0, || "(c) prompt-side suggestion changed the query".to_string())?;

    // (d) output never scores below input
    let scenarios = [
        already_good(),
        non_monotone(),
        rising(),
        worsening(),
        query_clarification(true),
        query_clarification(false),
        stability_only(),
        failed_rewrite(),
        nothing_to_fix(),
    ];
    let n = scenarios.len();
    for (i, s) in scenarios.iter().enumerate() {
        let (out, _) = s.run();
        ensure(out.y_hat >= out.trace.initial_y_hat, || {
            format!("(d) scenario {i}: {} below initial {}", out.y_hat, out.trace.initial_y_hat)
        })?;
    }
    Ok(format!("(a) 0 rewrites, (b) 3 iterations, (c) query-only edits, (d) holds in {n} scenarios"))
}

pub fn execution_free() -> Result<String, String> {
    let gw = Gateway::in_memory(Arc::new(SimulatedBackend::new(16)));
    let model = EvaluatorModel::new("simulated", Shape::new(16, 4), MetricName::CORE.to_vec(), PREFIX, 7);
    let inputs: Vec<EvaluatorInput> = (0..5)
        .map(|i| EvaluatorInput::new(PREFIX, format!("What is {i} + {i}?"), "Think step by step."))
        .collect();
    let before = gw.call_counts();
    let preds = model.evaluate_batch(&gw, &inputs).map_err(|e| e.to_string())?;
    let after = gw.call_counts();
    let (generate, score, embed) =
        (after.generate - before.generate, after.score - before.score, after.embed - before.embed);
    ensure(generate == 0 && score == 0, || format!("{generate} generation and {score} scoring calls"))?;
    ensure(embed == inputs.len() as u64, || format!("{embed} embedding calls for {} inputs", inputs.len()))?;
    ensure(preds.iter().all(|p| (0.0..=1.0).contains(&p.y_hat)), || "prediction out of range".into())?;
    Ok(format!("{} evaluations: generate 0, score 0, embed {embed}", inputs.len()))
}
