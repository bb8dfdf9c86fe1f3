use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::benchmark::{accuracy_rows, benchmark_query, BenchmarkRecord};
use super::manifest::{calls_since, settings_hash, tokens_since, Manifest};
use super::report::build_report;
use super::{ingest, HarnessError, RunConfig, Stage};
use crate::corpus::{build_pool, PoolConfig, PoolFailure, PromptCandidate, Query, RecombinationRecord, Split, TemplateRegistry};
use crate::evaluator::{encode, train, EpochRecord, EvaluatorInput, EvaluatorModel, Shape, TrainingExample};
use crate::gateway::Gateway;
use crate::io::{derive_seed, read_json, read_jsonl, sha256_file, write_json, write_jsonl, write_atomic};
use crate::metrics::{measure_candidate, query_baseline, Measurement, MetricName, MetricsError, QueryBaseline};
use crate::optimizer::{optimize, OptimizationTrace, StopReason};
use crate::selection::{fit, gain_importance, select_with_fallback, FeatureMatrix, GainImportance, Selection};

pub const QUERIES: &str = "queries.jsonl";
pub const POOL: &str = "pool.jsonl";
pub const RECOMBINATIONS: &str = "recombinations.jsonl";
pub const POOL_FAILURES: &str = "pool_failures.jsonl";
pub const BASELINES: &str = "baselines.jsonl";
pub const MEASUREMENTS: &str = "measurements.jsonl";
pub const MEASURE_FAILURES: &str = "measure_failures.jsonl";
pub const SELECTION: &str = "selection.json";
pub const SELECTION_TABLE: &str = "selection.txt";
pub const EVALUATOR: &str = "evaluator.json";
pub const TRAINING_HISTORY: &str = "training_history.jsonl";
pub const TRAINING_SUMMARY: &str = "training_summary.json";
pub const OPTIMIZED: &str = "optimized.jsonl";
pub const OPTIMIZATION_TRACES: &str = "optimization_traces.jsonl";
pub const BENCHMARK: &str = "benchmark.jsonl";
pub const BENCHMARK_SUMMARY: &str = "benchmark_summary.json";
pub const REPORT: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Inputs and settings were unchanged; the stored artifacts were kept.
    Cached,
}

/// A per-item failure that did not stop the stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: String,
    pub message: String,
    pub backend_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub selection: Selection,
    pub importance: GainImportance,
    pub rows: usize,
    pub positives: usize,
    pub columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub metrics: Vec<MetricName>,
    pub best_epoch: usize,
    pub epochs: usize,
    pub validation_accuracy: f64,
    pub train_examples: usize,
    pub validation_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedRecord {
    pub query_id: String,
    pub task: String,
    pub initial_prompt: String,
    pub prompt: String,
    pub query: String,
    pub initial_y_hat: Option<f64>,
    pub y_hat: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceRecord {
    query_id: String,
    trace: OptimizationTrace,
}

fn metrics_backend_failure(e: &MetricsError) -> bool {
    matches!(e, MetricsError::Gateway(g) if g.is_backend_failure())
}

fn first_backend_failure<'a>(stage: Stage, failures: impl Iterator<Item = (&'a str, bool)>) -> Result<(), HarnessError> {
    let backend: Vec<&str> = failures.filter(|f| f.1).map(|f| f.0).collect();
    match backend.first() {
        Some(first) => Err(HarnessError::StageFailures {
            stage: stage.name().to_string(),
            failed: backend.len(),
            first: first.to_string(),
        }),
        None => Ok(()),
    }
}

fn column_median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs stages against one output directory and one gateway.
pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    gateway: Gateway,
}

impl Pipeline {
    pub fn new(config: RunConfig, gateway: Gateway) -> Result<Self, HarnessError> {
        let out = config.out_dir()?.to_path_buf();
        Ok(Self { config, out, gateway })
    }

    /// Gateway built from the configuration (replay or live).
    pub fn from_config(config: RunConfig) -> Result<Self, HarnessError> {
        let gateway = config.gateway()?;
        Self::new(config, gateway)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn backend_id(&self) -> String {
        self.config.backend.backend_id()
    }

    fn pool_config(&self) -> PoolConfig {
        PoolConfig { seed: derive_seed(self.config.seed, "pool"), ..self.config.pool.clone() }
    }

    /// The configuration slice a stage's outputs depend on.
    pub fn settings(&self, stage: Stage) -> Value {
        let c = &self.config;
        let backend = self.backend_id();
        match stage {
            Stage::BuildPool => {
                let datasets: Vec<Value> = c
                    .data
                    .datasets
                    .iter()
                    .map(|d| json!({"task": d.task, "file": d.path.file_name().map(|f| f.to_string_lossy())}))
                    .collect();
                json!({"backend": backend, "seed": c.seed, "datasets": datasets, "split": c.data.split,
                       "tasks": c.tasks, "pool": self.pool_config()})
            }
            Stage::Measure => json!({"backend": backend, "tasks": c.tasks, "estimator": c.estimator}),
            Stage::SelectMetrics => json!({"backend": backend, "selection": c.selection}),
            Stage::TrainEvaluator => json!({"backend": backend, "seed": c.seed, "evaluator": c.evaluator}),
            Stage::Optimize => json!({"backend": backend, "optimize": c.optimize, "prefix": c.evaluator.prefix}),
            Stage::Benchmark => json!({"backend": backend, "tasks": c.tasks, "benchmark": c.benchmark}),
            Stage::Report => json!({"seed": c.seed}),
        }
    }

    fn dataset_inputs(&self) -> Result<BTreeMap<String, String>, HarnessError> {
        let mut inputs = BTreeMap::new();
        for d in &self.config.data.datasets {
            let name = d.path.file_name().map(|f| f.to_string_lossy().to_string()).unwrap_or_default();
            inputs.insert(format!("dataset:{}:{name}", d.task), sha256_file(&d.path)?);
        }
        Ok(inputs)
    }

    /// Validate upstream manifests and collect the hashes of their outputs.
    fn check_dependencies(&self, stage: Stage) -> Result<BTreeMap<String, String>, HarnessError> {
        let mut inputs = if stage == Stage::BuildPool { self.dataset_inputs()? } else { BTreeMap::new() };
        for &dep in stage.dependencies() {
            let manifest = Manifest::load(&self.out, dep)?.ok_or_else(|| HarnessError::MissingDependency {
                artifact: dep.artifact().to_string(),
                path: super::manifest::manifest_path(&self.out, dep).display().to_string(),
            })?;
            if manifest.settings_hash != settings_hash(&self.settings(dep)) {
                return Err(HarnessError::ManifestMismatch {
                    stage: dep.name().to_string(),
                    detail: "its settings changed since it ran; rerun it".into(),
                });
            }
            if let Some(file) = manifest.check_outputs(&self.out)? {
                return Err(HarnessError::ManifestMismatch {
                    stage: dep.name().to_string(),
                    detail: format!("{file} is missing or differs from its recorded hash"),
                });
            }
            inputs.extend(manifest.outputs);
        }
        Ok(inputs)
    }

    pub fn run(&self, stage: Stage) -> Result<StageStatus, HarnessError> {
        let inputs = self.check_dependencies(stage)?;
        let settings = self.settings(stage);
        let hash = settings_hash(&settings);
        if let Some(existing) = Manifest::load(&self.out, stage)? {
            if existing.settings_hash == hash
                && existing.inputs == inputs
                && existing.seed == self.config.seed
                && existing.check_outputs(&self.out)?.is_none()
            {
                info!("{stage}: inputs unchanged, using cached artifacts");
                return Ok(StageStatus::Cached);
            }
            std::fs::remove_file(super::manifest::manifest_path(&self.out, stage))
                .map_err(|e| crate::io::IoError::Io { path: self.out.display().to_string(), source: e })?;
        }

        info!("{stage}: running");
        let (calls0, tokens0) = (self.gateway.call_counts(), self.gateway.token_counts());
        let started = Instant::now();
        let written = match stage {
            Stage::BuildPool => self.build_pool()?,
            Stage::Measure => self.measure()?,
            Stage::SelectMetrics => self.select_metrics()?,
            Stage::TrainEvaluator => self.train_evaluator()?,
            Stage::Optimize => self.optimize()?,
            Stage::Benchmark => self.benchmark()?,
            Stage::Report => self.report()?,
        };
        let mut outputs = BTreeMap::new();
        for name in written {
            outputs.insert(name.to_string(), sha256_file(&self.path(name))?);
        }
        let manifest = Manifest {
            stage: stage.name().to_string(),
            seed: self.config.seed,
            backend_id: self.backend_id(),
            settings,
            settings_hash: hash,
            inputs,
            outputs,
            calls: calls_since(calls0, self.gateway.call_counts()),
            tokens: tokens_since(tokens0, self.gateway.token_counts()),
            elapsed_ms: started.elapsed().as_millis() as u64,
        };
        manifest.save(&self.out, stage)?;
        info!("{stage}: done in {} ms", manifest.elapsed_ms);
        Ok(StageStatus::Ran)
    }

    /// Run every stage up to and including `last`.
    pub fn run_through(&self, last: Stage) -> Result<Vec<(Stage, StageStatus)>, HarnessError> {
        Stage::ALL.into_iter().filter(|s| *s <= last).map(|s| self.run(s).map(|st| (s, st))).collect()
    }

    pub fn load_queries(&self) -> Result<Vec<Query>, HarnessError> {
        Ok(read_jsonl(&self.path(QUERIES))?)
    }

    fn queries_in(&self, split: Split) -> Result<Vec<Query>, HarnessError> {
        Ok(self.load_queries()?.into_iter().filter(|q| q.split == split).collect())
    }

    fn build_pool(&self) -> Result<Vec<&'static str>, HarnessError> {
        let mut queries = Vec::new();
        let schemas = self.config.schemas();
        for d in &self.config.data.datasets {
            let schema = schemas.schema_for(&d.task)?;
            queries.extend(ingest(&d.path, &d.task, schema, self.config.data.split, self.config.seed)?);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = queries.iter().find(|q| !seen.insert(q.id.as_str())) {
            return Err(HarnessError::DuplicateId { id: dup.id.clone(), line: 0 });
        }
        queries.sort_by(|a, b| a.id.cmp(&b.id));
        let train: Vec<Query> = queries.iter().filter(|q| q.split == Split::Train).cloned().collect();
        if train.is_empty() {
            return Err(HarnessError::EmptySplit("train".into()));
        }
        let outcome = build_pool(&self.gateway, &train, &self.pool_config())?;
        write_jsonl(&self.path(QUERIES), &queries)?;
        write_jsonl::<PromptCandidate>(&self.path(POOL), &outcome.candidates)?;
        write_jsonl::<RecombinationRecord>(&self.path(RECOMBINATIONS), &outcome.recombinations)?;
        write_jsonl::<PoolFailure>(&self.path(POOL_FAILURES), &outcome.failures)?;
        first_backend_failure(
            Stage::BuildPool,
            outcome.failures.iter().map(|f| (f.message.as_str(), f.backend_failure)),
        )?;
        Ok(vec![QUERIES, POOL, RECOMBINATIONS, POOL_FAILURES])
    }

    fn load_pool(&self) -> Result<BTreeMap<String, PromptCandidate>, HarnessError> {
        let pool: Vec<PromptCandidate> = read_jsonl(&self.path(POOL))?;
        Ok(pool.into_iter().map(|c| (c.id.clone(), c)).collect())
    }

    fn measure(&self) -> Result<Vec<&'static str>, HarnessError> {
        let train = self.queries_in(Split::Train)?;
        let pool = self.load_pool()?;
        let schemas = self.config.schemas();
        let settings = &self.config.estimator;
        let parts: Vec<(Option<QueryBaseline>, Vec<Measurement>, Vec<ItemFailure>)> = train
            .par_iter()
            .map(|q| {
                let fail = |item: &str, e: &MetricsError| ItemFailure {
                    item: item.to_string(),
                    message: e.to_string(),
                    backend_failure: metrics_backend_failure(e),
                };
                let schema = match schemas.schema_for(&q.task) {
                    Ok(s) => s,
                    Err(e) => return (None, Vec::new(), vec![fail(&q.id, &e)]),
                };
                let baseline = match query_baseline(&self.gateway, q, schema, settings) {
                    Ok(b) => b,
                    Err(e) => return (None, Vec::new(), vec![fail(&q.id, &e)]),
                };
                let mut measured = Vec::new();
                let mut failures = Vec::new();
                for c in pool.values().filter(|c| c.query_id == q.id) {
                    match measure_candidate(&self.gateway, q, &baseline, &c.id, &c.text, schema, settings) {
                        Ok(m) => measured.push(m),
                        Err(e) => failures.push(fail(&c.id, &e)),
                    }
                }
                (Some(baseline), measured, failures)
            })
            .collect();
        let mut baselines = Vec::new();
        let mut measurements = Vec::new();
        let mut failures = Vec::new();
        for (b, m, f) in parts {
            baselines.extend(b);
            measurements.extend(m);
            failures.extend(f);
        }
        write_jsonl(&self.path(BASELINES), &baselines)?;
        write_jsonl(&self.path(MEASUREMENTS), &measurements)?;
        write_jsonl(&self.path(MEASURE_FAILURES), &failures)?;
        first_backend_failure(Stage::Measure, failures.iter().map(|f| (f.message.as_str(), f.backend_failure)))?;
        if measurements.is_empty() {
            return Err(HarnessError::EmptySplit("measured train".into()));
        }
        Ok(vec![BASELINES, MEASUREMENTS, MEASURE_FAILURES])
    }

    fn load_measurements(&self) -> Result<Vec<Measurement>, HarnessError> {
        Ok(read_jsonl(&self.path(MEASUREMENTS))?)
    }

    fn prompt_text<'a>(pool: &'a BTreeMap<String, PromptCandidate>, id: &str) -> Result<&'a str, HarnessError> {
        pool.get(id).map(|c| c.text.as_str()).ok_or_else(|| HarnessError::ManifestMismatch {
            stage: Stage::BuildPool.name().to_string(),
            detail: format!("measured prompt {id} is not in the pool"),
        })
    }

    fn select_metrics(&self) -> Result<Vec<&'static str>, HarnessError> {
        let measurements = self.load_measurements()?;
        let pool = self.load_pool()?;
        let cfg = &self.config.selection;
        let embeddings = if cfg.include_embeddings {
            let texts = measurements.iter().map(|m| Self::prompt_text(&pool, &m.prompt_id)).collect::<Result<Vec<_>, _>>()?;
            Some(
                texts
                    .par_iter()
                    .map(|t| self.gateway.embed(t).map(|e| e.values))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let metrics: Vec<_> = measurements.iter().map(|m| m.metrics.clone()).collect();
        let labels: Vec<bool> = measurements.iter().map(|m| m.label.is_good).collect();
        let matrix = FeatureMatrix::from_metrics(embeddings.as_deref(), &metrics, &labels)?;
        let model = fit(&matrix, &cfg.gbdt)?;
        let importance = gain_importance(&model)?;
        let selection = select_with_fallback(&importance, cfg.threshold, cfg.fallback_k);
        let artifact = SelectionArtifact {
            rows: labels.len(),
            positives: labels.iter().filter(|l| **l).count(),
            columns: matrix.columns.len(),
            selection,
            importance,
        };
        let names: Vec<&str> = artifact.selection.metrics.iter().map(|m| m.as_str()).collect();
        let table = format!(
            "{}\nselected (share > {}): {}{}\n",
            artifact.importance.table(),
            artifact.selection.threshold,
            names.join(", "),
            if artifact.selection.fallback_used { " [fallback: top-k]" } else { "" }
        );
        write_json(&self.path(SELECTION), &artifact)?;
        write_atomic(&self.path(SELECTION_TABLE), table.as_bytes())?;
        Ok(vec![SELECTION, SELECTION_TABLE])
    }

    fn train_evaluator(&self) -> Result<Vec<&'static str>, HarnessError> {
        let cfg = &self.config.evaluator;
        let artifact: SelectionArtifact = read_json(&self.path(SELECTION))?;
        let metrics = cfg.metrics.clone().unwrap_or(artifact.selection.metrics);
        if metrics.is_empty() {
            return Err(HarnessError::Config("no metrics to train the evaluator on".into()));
        }
        let measurements = self.load_measurements()?;
        let pool = self.load_pool()?;
        let queries: BTreeMap<String, Query> = self.load_queries()?.into_iter().map(|q| (q.id.clone(), q)).collect();

        let inputs = measurements
            .iter()
            .map(|m| {
                let q = queries.get(&m.query_id).ok_or_else(|| HarnessError::ManifestMismatch {
                    stage: Stage::BuildPool.name().to_string(),
                    detail: format!("measured query {} is unknown", m.query_id),
                })?;
                Ok(EvaluatorInput::new(cfg.prefix.clone(), q.text.clone(), Self::prompt_text(&pool, &m.prompt_id)?))
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let hs = inputs.par_iter().map(|i| encode(&self.gateway, i)).collect::<Result<Vec<_>, _>>()?;

        // missing judge scores take the column median
        let mut columns: Vec<Vec<f64>> =
            metrics.iter().map(|&name| measurements.iter().filter_map(|m| m.metrics.get(name)).collect()).collect();
        let medians: Vec<f64> = columns.iter_mut().map(|c| column_median(c)).collect();
        let examples: Vec<TrainingExample> = measurements
            .iter()
            .zip(hs)
            .map(|(m, h)| TrainingExample {
                h,
                metrics: metrics.iter().zip(&medians).map(|(&name, med)| m.metrics.get(name).unwrap_or(*med)).collect(),
                label: m.label.is_good,
            })
            .collect();
        let dim = examples.first().map_or(0, |e| e.h.len());
        let shape = Shape {
            input: dim,
            metrics: metrics.len(),
            reg_hidden: cfg.reg_hidden,
            fuse_hidden: cfg.fuse_hidden,
            fused: cfg.fused,
        };
        let init = EvaluatorModel::new(
            self.gateway.backend_id(),
            shape,
            metrics.clone(),
            &cfg.prefix,
            derive_seed(self.config.seed, "evaluator/init"),
        );
        let train_config = crate::evaluator::TrainConfig {
            seed: derive_seed(self.config.seed, "evaluator/train"),
            ..cfg.train.clone()
        };
        let outcome = train(init, &examples, &train_config)?;
        let summary = TrainingSummary {
            metrics,
            best_epoch: outcome.best_epoch,
            epochs: outcome.history.len(),
            validation_accuracy: outcome
                .history
                .iter()
                .find(|r| r.epoch == outcome.best_epoch)
                .map_or(0.0, |r| r.val_accuracy),
            train_examples: outcome.train_indices.len(),
            validation_examples: outcome.validation_indices.len(),
        };
        write_json(&self.path(EVALUATOR), &outcome.model)?;
        write_jsonl::<EpochRecord>(&self.path(TRAINING_HISTORY), &outcome.history)?;
        write_json(&self.path(TRAINING_SUMMARY), &summary)?;
        Ok(vec![EVALUATOR, TRAINING_HISTORY, TRAINING_SUMMARY])
    }

    fn initial_prompt(&self) -> Result<String, HarnessError> {
        let cfg = &self.config.optimize;
        if let Some(p) = &cfg.initial_prompt {
            return Ok(p.clone());
        }
        TemplateRegistry::default()
            .templates
            .into_iter()
            .find(|t| t.name == cfg.initial_template)
            .map(|t| t.text)
            .ok_or_else(|| HarnessError::Config(format!("unknown template {:?}", cfg.initial_template)))
    }

    fn optimize(&self) -> Result<Vec<&'static str>, HarnessError> {
        let test = self.queries_in(Split::Test)?;
        if test.is_empty() {
            return Err(HarnessError::EmptySplit("test".into()));
        }
        let model: EvaluatorModel = read_json(&self.path(EVALUATOR))?;
        let initial = self.initial_prompt()?;
        let prefix = &self.config.evaluator.prefix;
        let results: Vec<(OptimizedRecord, Option<TraceRecord>)> = test
            .par_iter()
            .map(|q| {
                let mut record = OptimizedRecord {
                    query_id: q.id.clone(),
                    task: q.task.clone(),
                    initial_prompt: initial.clone(),
                    prompt: initial.clone(),
                    query: q.text.clone(),
                    initial_y_hat: None,
                    y_hat: None,
                    stop_reason: None,
                    iterations: 0,
                    error: None,
                    backend_failure: false,
                };
                match optimize(&model, &self.gateway, prefix, &q.text, &initial, &self.config.optimize.optimizer) {
                    Ok(out) => {
                        record.prompt = out.prompt;
                        record.query = out.query;
                        record.initial_y_hat = Some(out.trace.initial_y_hat);
                        record.y_hat = Some(out.y_hat);
                        record.stop_reason = Some(out.trace.stop_reason);
                        record.iterations = out.trace.iterations.len();
                        (record, Some(TraceRecord { query_id: q.id.clone(), trace: out.trace }))
                    }
                    Err(e) => {
                        record.backend_failure = e.is_backend_failure();
                        record.error = Some(e.to_string());
                        (record, None)
                    }
                }
            })
            .collect();
        let (records, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let traces: Vec<TraceRecord> = traces.into_iter().flatten().collect();
        write_jsonl(&self.path(OPTIMIZED), &records)?;
        write_jsonl(&self.path(OPTIMIZATION_TRACES), &traces)?;
        first_backend_failure(
            Stage::Optimize,
            records.iter().filter_map(|r| r.error.as_deref().map(|e| (e, r.backend_failure))),
        )?;
        Ok(vec![OPTIMIZED, OPTIMIZATION_TRACES])
    }

    fn benchmark(&self) -> Result<Vec<&'static str>, HarnessError> {
        let test = self.queries_in(Split::Test)?;
        if test.is_empty() {
            return Err(HarnessError::EmptySplit("test".into()));
        }
        let optimized: Vec<OptimizedRecord> = read_jsonl(&self.path(OPTIMIZED))?;
        let optimized: BTreeMap<&str, &OptimizedRecord> = optimized.iter().map(|r| (r.query_id.as_str(), r)).collect();
        let schemas = self.config.schemas();
        let records: Vec<BenchmarkRecord> = test
            .par_iter()
            .map(|q| {
                let (prompt, query) = match optimized.get(q.id.as_str()) {
                    Some(r) => (r.prompt.as_str(), r.query.as_str()),
                    None => ("", q.text.as_str()),
                };
                match schemas.schema_for(&q.task) {
                    Ok(schema) => benchmark_query(&self.gateway, q, prompt, query, schema, &self.config.benchmark),
                    Err(e) => BenchmarkRecord {
                        query_id: q.id.clone(),
                        task: q.task.clone(),
                        gold_answer: q.gold_answer.clone(),
                        baseline_answer: None,
                        optimized_answer: None,
                        baseline_correct: false,
                        optimized_correct: false,
                        error: Some(e.to_string()),
                        backend_failure: false,
                    },
                }
            })
            .collect();
        write_jsonl(&self.path(BENCHMARK), &records)?;
        write_json(&self.path(BENCHMARK_SUMMARY), &accuracy_rows(&records))?;
        first_backend_failure(
            Stage::Benchmark,
            records.iter().filter_map(|r| r.error.as_deref().map(|e| (e, r.backend_failure))),
        )?;
        Ok(vec![BENCHMARK, BENCHMARK_SUMMARY])
    }

    fn report(&self) -> Result<Vec<&'static str>, HarnessError> {
        let mut usage = Vec::new();
        for &stage in Stage::Report.dependencies() {
            if let Some(m) = Manifest::load(&self.out, stage)? {
                usage.push(m.usage());
            }
        }
        let report = build_report(
            self.config.seed,
            &self.backend_id(),
            &read_jsonl(&self.path(BENCHMARK))?,
            &read_json(&self.path(SELECTION))?,
            &read_json(&self.path(TRAINING_SUMMARY))?,
            &read_jsonl(&self.path(TRAINING_HISTORY))?,
            &read_jsonl(&self.path(OPTIMIZED))?,
            usage,
        );
        write_json(&self.path(REPORT), &report)?;
        write_atomic(&self.path(REPORT_TABLE), super::render_table(&report).as_bytes())?;
        Ok(vec![REPORT, REPORT_TABLE])
    }
}
