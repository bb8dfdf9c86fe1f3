//! Execution-free evaluator: predicts metric scores and prompt quality from
//! a frozen text embedding of (prefix, query, prompt).

mod network;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::io::sha256_hex;
use crate::metrics::MetricName;

pub use network::{Forward, Layer, LossParts, Network, Shape};
pub use train::{
    split_train_validation, train, update_metric_weights, BatchGradient, EpochRecord, TrainConfig, TrainOutcome,
    TrainingExample, WeightSignal,
};

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("prefix hash {got} does not match the model's {expected}")]
    PrefixMismatch { expected: String, got: String },
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("training needs at least {needed} examples, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Instruction text placed before every (query, prompt) pair at encoding time.
pub const DEFAULT_PREFIX: &str = "You are judging how well a system prompt will work for one user query. \
A good prompt makes a model answer the query correctly in most repeated runs. \
Four measurements describe a prompt. \
nll_score: the average negative log-probability the model assigns to the correct answer when forced to produce it; lower means the prompt steers toward the right answer. \
stability_score: one minus the average cosine distance between embeddings of repeated responses; higher means responses agree. \
mi_score: how much the prompt lowers the entropy of the answer distribution relative to asking the query alone. \
query_entropy: the entropy of answers to the query with no prompt, a measure of how hard or ambiguous the query is.";

/// The text fed to the frozen encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorInput {
    pub prefix: String,
    pub query: String,
    pub prompt: String,
}

impl EvaluatorInput {
    pub fn new(prefix: impl Into<String>, query: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self { prefix: prefix.into(), query: query.into(), prompt: prompt.into() }
    }

    pub fn text(&self) -> String {
        format!("{}\n\n### Query\n{}\n\n### Prompt\n{}", self.prefix, self.query, self.prompt)
    }

    pub fn prefix_hash(&self) -> String {
        sha256_hex(self.prefix.as_bytes())
    }
}

/// Embed the concatenated input with the gateway's embedding model.
pub fn encode(gateway: &Gateway, input: &EvaluatorInput) -> Result<Vec<f64>, EvaluatorError> {
    Ok(gateway.embed(&input.text())?.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(m: usize) -> Self {
        Self { mean: vec![0.0; m], std: vec![1.0; m] }
    }

    /// Per-column mean and population std; a zero std is replaced by 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let m = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..m)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, m: &[f64]) -> Vec<f64> {
        m.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (mu, s))| (v - mu) / s).collect()
    }

    pub fn denormalize(&self, m: &[f64]) -> Vec<f64> {
        m.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (mu, s))| v * s + mu).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y_hat: f64,
    /// Predicted metrics in metric units.
    pub m_hat: Vec<f64>,
    pub z: Vec<f64>,
}

impl Prediction {
    /// Strictly below 0.5 is low quality.
    pub fn is_good(&self) -> bool {
        self.y_hat >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorModel {
    pub encoder_backend_id: String,
    pub dimension: usize,
    pub metrics: Vec<MetricName>,
    pub network: Network,
    pub metric_weights: Vec<f64>,
    pub lambda: f64,
    pub eta: f64,
    pub normalization: Normalization,
    pub prefix_hash: String,
    #[serde(default)]
    pub training: Option<serde_json::Value>,
}

impl EvaluatorModel {
    /// Randomly initialized model with uniform metric weights.
    pub fn new(
        encoder_backend_id: impl Into<String>,
        shape: Shape,
        metrics: Vec<MetricName>,
        prefix: &str,
        seed: u64,
    ) -> Self {
        assert_eq!(shape.metrics, metrics.len(), "shape and metric list disagree");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = metrics.len();
        Self {
            encoder_backend_id: encoder_backend_id.into(),
            dimension: shape.input,
            metrics,
            network: Network::init(shape, &mut rng),
            metric_weights: vec![1.0 / m as f64; m],
            lambda: 1.0,
            eta: 0.1,
            normalization: Normalization::identity(m),
            prefix_hash: sha256_hex(prefix.as_bytes()),
            training: None,
        }
    }

    fn check_dimension(&self, h: &[f64]) -> Result<(), EvaluatorError> {
        if h.len() != self.dimension {
            return Err(EvaluatorError::DimensionMismatch { expected: self.dimension, got: h.len() });
        }
        Ok(())
    }

    fn prediction(&self, fwd: &Forward) -> Prediction {
        Prediction {
            y_hat: fwd.y_hat,
            m_hat: self.normalization.denormalize(&fwd.m_hat),
            z: fwd.z.clone(),
        }
    }

    pub fn forward(&self, h: &[f64]) -> Result<Prediction, EvaluatorError> {
        self.check_dimension(h)?;
        Ok(self.prediction(&self.network.forward(h)))
    }

    pub fn forward_batch(&self, hs: &[Vec<f64>]) -> Result<Vec<Prediction>, EvaluatorError> {
        hs.iter().map(|h| self.forward(h)).collect()
    }

    /// `∂L_cls/∂m̂` (normalized units) for the label `target_good`, with the
    /// prediction it was taken at.
    pub fn metric_gradient(&self, h: &[f64], target_good: bool) -> Result<(Prediction, Vec<f64>), EvaluatorError> {
        self.check_dimension(h)?;
        let fwd = self.network.forward(h);
        let g = self.network.cls_metric_gradient(&fwd, target_good);
        Ok((self.prediction(&fwd), g))
    }

    pub fn check_prefix(&self, input: &EvaluatorInput) -> Result<(), EvaluatorError> {
        let got = input.prefix_hash();
        if got != self.prefix_hash {
            return Err(EvaluatorError::PrefixMismatch { expected: self.prefix_hash.clone(), got });
        }
        Ok(())
    }

    /// Encode and predict. Performs embedding calls only.
    pub fn evaluate(&self, gateway: &Gateway, input: &EvaluatorInput) -> Result<Prediction, EvaluatorError> {
        self.check_prefix(input)?;
        let h = encode(gateway, input)?;
        self.forward(&h)
    }

    pub fn evaluate_batch(&self, gateway: &Gateway, inputs: &[EvaluatorInput]) -> Result<Vec<Prediction>, EvaluatorError> {
        inputs.iter().map(|i| self.evaluate(gateway, i)).collect()
    }
}
