use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::PoolConfig;
use crate::evaluator::{TrainConfig, DEFAULT_PREFIX};
use crate::gateway::{Backend, Gateway, OpenAiBackend, OpenAiConfig, ScoringMode, SimulatedBackend, Store};
use crate::metrics::{AnswerSchema, EstimatorSettings, MetricName, SchemaRegistry};
use crate::optimizer::OptimizerConfig;
use crate::selection::GbdtParams;

/// One JSONL file of queries belonging to a single task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub task: String,
}

/// How each dataset is divided into train and test queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SplitPolicy {
    /// 100/100 when the file has at least 200 records, otherwise a half split.
    #[default]
    Auto,
    /// Sample `train` and `test` records; the rest is unused.
    Fixed { train: usize, test: usize },
    /// First half (after shuffling) train, rest test.
    Half,
    /// Use the `split` field of each record.
    AsGiven,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub split: SplitPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendConfig {
    Simulated {
        #[serde(default = "default_embedding_dim")]
        embedding_dim: usize,
    },
    Openai {
        base_url: String,
        chat_model: String,
        embedding_model: String,
        #[serde(default)]
        scoring: ScoringMode,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
}

fn default_embedding_dim() -> usize {
    64
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_api_key_env() -> String {
    "PROMPTGAUGE_API_KEY".to_string()
}

impl BackendConfig {
    fn openai_config(&self) -> Option<OpenAiConfig> {
        match self {
            BackendConfig::Openai { base_url, chat_model, embedding_model, scoring, timeout_secs, .. } => {
                Some(OpenAiConfig {
                    base_url: base_url.clone(),
                    chat_model: chat_model.clone(),
                    embedding_model: embedding_model.clone(),
                    scoring: scoring.clone(),
                    timeout_secs: *timeout_secs,
                })
            }
            BackendConfig::Simulated { .. } => None,
        }
    }

    pub fn backend_id(&self) -> String {
        match self {
            BackendConfig::Simulated { .. } => SimulatedBackend::ID.to_string(),
            BackendConfig::Openai { .. } => self.openai_config().map(|c| c.backend_id()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub max_in_flight: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self { max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub threshold: f64,
    /// Metrics kept when none clears the threshold.
    pub fallback_k: usize,
    /// Feed prompt embeddings to the importance model next to the metrics.
    pub include_embeddings: bool,
    pub gbdt: GbdtParams,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { threshold: 0.10, fallback_k: 4, include_embeddings: true, gbdt: GbdtParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluatorConfig {
    pub prefix: String,
    pub reg_hidden: usize,
    pub fuse_hidden: usize,
    pub fused: usize,
    /// Overrides the metrics chosen by select-metrics.
    pub metrics: Option<Vec<MetricName>>,
    pub train: TrainConfig,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            prefix: DEFAULT_PREFIX.to_string(),
            reg_hidden: 64,
            fuse_hidden: 64,
            fused: 32,
            metrics: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    /// Static template that every test query starts from.
    pub initial_template: String,
    /// Literal starting prompt; takes precedence over `initial_template`.
    pub initial_prompt: Option<String>,
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { initial_template: "zero_shot_cot".to_string(), initial_prompt: None, optimizer: OptimizerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Executions per query; the modal canonical answer is scored.
    pub executions: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { executions: 1, temperature: 0.0, max_tokens: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Record-through cache for live runs.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Answer every call from this store; no backend is contacted.
    #[serde(default)]
    pub replay_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub tasks: BTreeMap<String, AnswerSchema>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub gateway: GatewaySettings,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replay_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory, apply
    /// overrides and validate.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.data.datasets {
            d.path = resolve(base, &d.path);
        }
        for p in [&mut self.out_dir, &mut self.cache_dir, &mut self.replay_dir].into_iter().flatten() {
            *p = resolve(base, p);
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(dir) = &overrides.replay_dir {
            self.replay_dir = Some(dir.clone());
        }
        if let Some(dir) = &overrides.out_dir {
            self.out_dir = Some(dir.clone());
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.data.datasets.is_empty() {
            return Err(HarnessError::Config("no datasets configured".into()));
        }
        for d in &self.data.datasets {
            if !d.path.is_file() {
                return Err(HarnessError::Config(format!("dataset {} does not exist", d.path.display())));
            }
            if !self.tasks.contains_key(&d.task) {
                return Err(HarnessError::Config(format!("task {:?} has no answer schema", d.task)));
            }
        }
        if let Some(dir) = &self.replay_dir {
            if !dir.is_dir() {
                return Err(HarnessError::Config(format!("replay store {} does not exist", dir.display())));
            }
        }
        if let SplitPolicy::Fixed { train, test } = self.data.split {
            if train == 0 || test == 0 {
                return Err(HarnessError::Config("fixed split needs non-zero train and test sizes".into()));
            }
        }
        if !(0.0..1.0).contains(&self.selection.threshold) {
            return Err(HarnessError::Config("selection threshold must lie in [0, 1)".into()));
        }
        if self.benchmark.executions == 0 || self.estimator.n_samples < 2 {
            return Err(HarnessError::Config("need at least 1 benchmark execution and 2 estimator samples".into()));
        }
        Ok(())
    }

    pub fn schemas(&self) -> SchemaRegistry {
        let mut reg = SchemaRegistry::new();
        for (task, schema) in &self.tasks {
            reg.insert(task.clone(), schema.clone());
        }
        reg
    }

    pub fn out_dir(&self) -> Result<&Path, HarnessError> {
        self.out_dir.as_deref().ok_or_else(|| HarnessError::Config("no output directory (use --out)".into()))
    }

    /// Replay gateway if a replay store is set, otherwise a live gateway that
    /// records into `cache_dir` (or memory).
    pub fn gateway(&self) -> Result<Gateway, HarnessError> {
        let gateway = if let Some(dir) = &self.replay_dir {
            Gateway::replay(self.backend.backend_id(), Arc::new(Store::open_read_only(dir)?))
        } else {
            let backend: Arc<dyn Backend> = match &self.backend {
                BackendConfig::Simulated { embedding_dim } => Arc::new(SimulatedBackend::new(*embedding_dim)),
                BackendConfig::Openai { api_key_env, .. } => {
                    let config = self.backend.openai_config().expect("openai variant");
                    Arc::new(
                        OpenAiBackend::from_env(config, api_key_env)
                            .map_err(|e| HarnessError::Config(e.to_string()))?,
                    )
                }
            };
            let store = match &self.cache_dir {
                Some(dir) => Store::open(dir)?,
                None => Store::in_memory(),
            };
            Gateway::new(backend, Arc::new(store))
        };
        Ok(gateway.with_max_in_flight(self.gateway.max_in_flight.max(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[data]
datasets = [{ path = "a.jsonl", task = "arith" }]
[tasks.arith]
kind = "numeric"
[backend]
kind = "simulated"
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.data.split, SplitPolicy::Auto);
        assert_eq!(c.selection.threshold, 0.10);
        assert_eq!(c.optimize.optimizer.max_iterations, 3);
        assert_eq!(c.benchmark.executions, 1);
        assert_eq!(c.backend, BackendConfig::Simulated { embedding_dim: 64 });
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 3", "");
        assert!(matches!(RunConfig::parse(&text), Err(HarnessError::Config(_))));
    }

    #[test]
    fn split_policies_parse() {
        let text = format!("{MINIMAL}\n[data.split]\npolicy = \"fixed\"\ntrain = 10\ntest = 5\n");
        // [data.split] after [backend] re-opens the data table
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.data.split, SplitPolicy::Fixed { train: 10, test: 5 });
    }

    #[test]
    fn missing_dataset_fails_validation() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.resolve_paths(Path::new("/nonexistent"));
        assert!(matches!(c.validate(), Err(HarnessError::Config(m)) if m.contains("does not exist")));
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.apply(&Overrides { seed: Some(9), replay_dir: None, out_dir: Some("x".into()) });
        assert_eq!(c.seed, 9);
        assert_eq!(c.out_dir.as_deref(), Some(Path::new("x")));
    }
}
