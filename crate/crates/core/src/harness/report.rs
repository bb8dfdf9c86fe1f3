use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::benchmark::{accuracy_rows, BenchmarkRecord, TaskAccuracy};
use super::manifest::StageUsage;
use super::stages::{OptimizedRecord, SelectionArtifact, TrainingSummary};
use crate::evaluator::EpochRecord;
use crate::metrics::MetricName;
use crate::optimizer::StopReason;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub metric: MetricName,
    pub initial: f64,
    pub at_best_epoch: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorSummary {
    pub metrics: Vec<MetricName>,
    pub best_epoch: usize,
    pub epochs: usize,
    pub validation_accuracy: f64,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub weights: Vec<WeightSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub selected: Vec<MetricName>,
    pub threshold: f64,
    pub fallback_used: bool,
    /// (feature or group, share), descending.
    pub shares: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub queries: usize,
    pub failed: usize,
    pub passed_threshold: usize,
    pub max_iterations: usize,
    pub no_improvement: usize,
    pub aborted: usize,
    pub iterations: usize,
    pub mean_initial_y_hat: f64,
    pub mean_final_y_hat: f64,
}

/// Everything in here is a pure function of the run's artifacts, so a
/// replayed run reproduces it byte for byte. Wall-clock timings live in the
/// stage manifests only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub backend_id: String,
    pub accuracy: Vec<TaskAccuracy>,
    pub evaluator: EvaluatorSummary,
    pub selection: SelectionSummary,
    pub optimization: OptimizationSummary,
    pub stages: Vec<StageUsage>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn weight_summaries(metrics: &[MetricName], history: &[EpochRecord], best_epoch: usize) -> Vec<WeightSummary> {
    metrics
        .iter()
        .enumerate()
        .map(|(i, &metric)| {
            let series: Vec<f64> = history.iter().filter_map(|r| r.weights.get(i).copied()).collect();
            let at = |pred: &dyn Fn(&EpochRecord) -> bool| {
                history.iter().find(|r| pred(r)).and_then(|r| r.weights.get(i).copied()).unwrap_or(f64::NAN)
            };
            WeightSummary {
                metric,
                initial: series.first().copied().unwrap_or(f64::NAN),
                at_best_epoch: at(&|r| r.epoch == best_epoch),
                last: series.last().copied().unwrap_or(f64::NAN),
                min: series.iter().copied().fold(f64::INFINITY, f64::min),
                max: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build_report(
    seed: u64,
    backend_id: &str,
    benchmark: &[BenchmarkRecord],
    selection: &SelectionArtifact,
    training: &TrainingSummary,
    history: &[EpochRecord],
    optimized: &[OptimizedRecord],
    stages: Vec<StageUsage>,
) -> Report {
    let ok: Vec<&OptimizedRecord> = optimized.iter().filter(|r| r.error.is_none()).collect();
    let count = |reason: StopReason| ok.iter().filter(|r| r.stop_reason == Some(reason)).count();
    Report {
        seed,
        backend_id: backend_id.to_string(),
        accuracy: accuracy_rows(benchmark),
        evaluator: EvaluatorSummary {
            metrics: training.metrics.clone(),
            best_epoch: training.best_epoch,
            epochs: training.epochs,
            validation_accuracy: training.validation_accuracy,
            train_examples: training.train_examples,
            validation_examples: training.validation_examples,
            weights: weight_summaries(&training.metrics, history, training.best_epoch),
        },
        selection: SelectionSummary {
            selected: selection.selection.metrics.clone(),
            threshold: selection.selection.threshold,
            fallback_used: selection.selection.fallback_used,
            shares: selection.importance.ranked().into_iter().map(|e| (e.name.clone(), e.share)).collect(),
        },
        optimization: OptimizationSummary {
            queries: optimized.len(),
            failed: optimized.len() - ok.len(),
            passed_threshold: count(StopReason::PassedThreshold),
            max_iterations: count(StopReason::MaxIterations),
            no_improvement: count(StopReason::NoImprovement),
            aborted: count(StopReason::Aborted),
            iterations: ok.iter().map(|r| r.iterations).sum(),
            mean_initial_y_hat: mean(ok.iter().filter_map(|r| r.initial_y_hat)),
            mean_final_y_hat: mean(ok.iter().filter_map(|r| r.y_hat)),
        },
        stages,
    }
}

/// Human-readable rendering of a report.
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run seed {}  backend {}", report.seed, report.backend_id);
    let _ = writeln!(out, "\nAccuracy (test split)");
    let _ = writeln!(out, "{:<20} {:>6} {:>6} {:>10} {:>10}", "task", "n", "failed", "query only", "optimized");
    for r in &report.accuracy {
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>6} {:>10.3} {:>10.3}",
            r.task, r.scored, r.failed, r.baseline_accuracy, r.optimized_accuracy
        );
    }

    let e = &report.evaluator;
    let _ = writeln!(
        out,
        "\nEvaluator: validation accuracy {:.3} at epoch {} of {} ({} train / {} validation examples)",
        e.validation_accuracy, e.best_epoch, e.epochs, e.train_examples, e.validation_examples
    );
    let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}", "metric weight", "initial", "best", "last", "min", "max");
    for w in &e.weights {
        let _ = writeln!(
            out,
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            w.metric.as_str(),
            w.initial,
            w.at_best_epoch,
            w.last,
            w.min,
            w.max
        );
    }

    let s = &report.selection;
    let selected: Vec<&str> = s.selected.iter().map(|m| m.as_str()).collect();
    let _ = writeln!(
        out,
        "\nSelected metrics (share > {}): {}{}",
        s.threshold,
        selected.join(", "),
        if s.fallback_used { " [fallback]" } else { "" }
    );
    for (name, share) in &s.shares {
        let _ = writeln!(out, "  {name:<20} {:>6.1}%", share * 100.0);
    }

    let o = &report.optimization;
    let _ = writeln!(
        out,
        "\nOptimization: {} queries, {} failed, {} passed, {} hit the iteration cap, {} without improvement, {} aborted",
        o.queries, o.failed, o.passed_threshold, o.max_iterations, o.no_improvement, o.aborted
    );
    let _ = writeln!(
        out,
        "  {} iterations; mean predicted quality {:.3} -> {:.3}",
        o.iterations, o.mean_initial_y_hat, o.mean_final_y_hat
    );

    let _ = writeln!(out, "\nGateway usage");
    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10}",
        "stage", "generate", "score", "embed", "backend", "prompt tok", "compl tok", "estimated"
    );
    for u in &report.stages {
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10}",
            u.stage,
            u.calls.generate,
            u.calls.score,
            u.calls.embed,
            u.calls.backend,
            u.tokens.prompt_tokens,
            u.tokens.completion_tokens,
            u.tokens.estimated_tokens
        );
    }
    out
}
