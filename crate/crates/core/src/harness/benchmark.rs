use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchmarkConfig;
use crate::corpus::Query;
use crate::gateway::Gateway;
use crate::metrics::{collect_trace, AnswerSchema, MetricsError};

/// Outcome of one test query under the query alone and under the optimized
/// (prompt, query).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub query_id: String,
    pub task: String,
    pub gold_answer: String,
    pub baseline_answer: Option<String>,
    pub optimized_answer: Option<String>,
    pub baseline_correct: bool,
    pub optimized_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_failure: bool,
}

/// Accuracy for one task; the row with task `all` pools every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    /// Queries scored (failures excluded).
    pub scored: usize,
    pub failed: usize,
    pub baseline_correct: usize,
    pub optimized_correct: usize,
    pub baseline_accuracy: f64,
    pub optimized_accuracy: f64,
}

fn ratio(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Per-task rows sorted by task, then the pooled `all` row.
pub fn accuracy_rows(records: &[BenchmarkRecord]) -> Vec<TaskAccuracy> {
    let mut by_task: BTreeMap<&str, Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(&r.task).or_default().push(r);
    }
    let row = |task: &str, rs: &[&BenchmarkRecord]| {
        let ok: Vec<&&BenchmarkRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
        let baseline_correct = ok.iter().filter(|r| r.baseline_correct).count();
        let optimized_correct = ok.iter().filter(|r| r.optimized_correct).count();
        TaskAccuracy {
            task: task.to_string(),
            scored: ok.len(),
            failed: rs.len() - ok.len(),
            baseline_correct,
            optimized_correct,
            baseline_accuracy: ratio(baseline_correct, ok.len()),
            optimized_accuracy: ratio(optimized_correct, ok.len()),
        }
    };
    let mut rows: Vec<TaskAccuracy> = by_task.iter().map(|(t, rs)| row(t, rs)).collect();
    let all: Vec<&BenchmarkRecord> = records.iter().collect();
    rows.push(row("all", &all));
    rows
}

/// Execute the query alone and the optimized pair; score the modal canonical
/// answers against gold.
pub fn benchmark_query(
    gateway: &Gateway,
    query: &Query,
    optimized_prompt: &str,
    optimized_query: &str,
    schema: &AnswerSchema,
    settings: &BenchmarkConfig,
) -> BenchmarkRecord {
    let run = || -> Result<(String, String), MetricsError> {
        let base = collect_trace(gateway, query, None, schema, settings.executions, settings.temperature, settings.max_tokens)?;
        let rewritten = Query { text: optimized_query.to_string(), ..query.clone() };
        let prompt_id = format!("{}/optimized", query.id);
        let opt = collect_trace(
            gateway,
            &rewritten,
            Some((&prompt_id, optimized_prompt)),
            schema,
            settings.executions,
            settings.temperature,
            settings.max_tokens,
        )?;
        let modal = |t: &crate::metrics::ExecutionTrace| t.modal_answer().unwrap_or_default().to_string();
        Ok((modal(&base), modal(&opt)))
    };
    let mut record = BenchmarkRecord {
        query_id: query.id.clone(),
        task: query.task.clone(),
        gold_answer: query.gold_answer.clone(),
        baseline_answer: None,
        optimized_answer: None,
        baseline_correct: false,
        optimized_correct: false,
        error: None,
        backend_failure: false,
    };
    match run() {
        Ok((b, o)) => {
            record.baseline_correct = b == query.gold_answer;
            record.optimized_correct = o == query.gold_answer;
            record.baseline_answer = Some(b);
            record.optimized_answer = Some(o);
        }
        Err(e) => {
            record.backend_failure = matches!(&e, MetricsError::Gateway(g) if g.is_backend_failure());
            record.error = Some(e.to_string());
        }
    }
    record
}
