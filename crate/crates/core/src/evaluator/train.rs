//! Bi-level training: gradient descent on the network with the metric
//! weights fixed (inner loop), and a periodic metric-weight update driven by
//! the validation batch's classification gradient w.r.t. predicted metrics
//! (outer loop).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvaluatorError, EvaluatorModel, Network, Normalization};

const WEIGHT_FLOOR: f64 = 1e-6;
const CHUNK: usize = 16;

/// One supervised example. `metrics` are in metric units; training
/// normalizes them with statistics of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub h: Vec<f64>,
    pub metrics: Vec<f64>,
    pub label: bool,
}

/// How the outer loop turns per-example `∂L_cls/∂m̂` into the update signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSignal {
    /// Batch mean of the signed partials.
    SignedMean,
    /// Negated batch mean of absolute partials, so metrics whose prediction
    /// moves the classification loss most gain weight.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub eta: f64,
    /// Inner epochs between metric-weight updates.
    pub weight_interval: usize,
    pub validation_fraction: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub signal: WeightSignal,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            lambda: 1.0,
            eta: 0.1,
            weight_interval: 5,
            validation_fraction: 0.2,
            batch_size: None,
            signal: WeightSignal::Magnitude,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cls: f64,
    pub val_loss: f64,
    pub val_cls: f64,
    pub val_accuracy: f64,
    pub weights: Vec<f64>,
    /// Signal used for the weight update at the end of this epoch, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_signal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub model: EvaluatorModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// `Normalize(max(w - eta * g, ε))`.
pub fn update_metric_weights(weights: &[f64], signal: &[f64], eta: f64) -> Vec<f64> {
    let v: Vec<f64> = weights.iter().zip(signal).map(|(w, g)| (w - eta * g).max(WEIGHT_FLOOR)).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

/// Seeded shuffle of `0..n`, with `round(n * fraction)` (at least one)
/// indices held out for validation.
pub fn split_train_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Mean loss terms, parameter gradient and `∂L_cls/∂m̂` statistics over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: Network,
    pub loss: f64,
    pub cls: f64,
    pub correct: usize,
    pub dm_mean: Vec<f64>,
    pub dm_abs_mean: Vec<f64>,
}

struct Prepared<'a> {
    h: &'a [f64],
    target: Vec<f64>,
    label: bool,
}

fn batch_gradient(net: &Network, batch: &[&Prepared<'_>], weights: &[f64], lambda: f64) -> BatchGradient {
    let n = batch.len() as f64;
    let m = weights.len();
    let partials: Vec<BatchGradient> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = BatchGradient {
                grads: net.zeros_like(),
                loss: 0.0,
                cls: 0.0,
                correct: 0,
                dm_mean: vec![0.0; m],
                dm_abs_mean: vec![0.0; m],
            };
            for ex in chunk {
                let fwd = net.forward(ex.h);
                let parts = Network::loss(&fwd, ex.label, &ex.target, weights, lambda);
                acc.loss += parts.total / n;
                acc.cls += parts.cls / n;
                acc.correct += usize::from((fwd.y_hat >= 0.5) == ex.label);
                let dm = net.backward(ex.h, &fwd, ex.label, &ex.target, weights, lambda, 1.0 / n, &mut acc.grads);
                for i in 0..m {
                    acc.dm_mean[i] += dm[i] / n;
                    acc.dm_abs_mean[i] += dm[i].abs() / n;
                }
            }
            acc
        })
        .collect();
    let mut it = partials.into_iter();
    let mut total = it.next().expect("batch is non-empty");
    for p in it {
        total.grads.add_scaled(&p.grads, 1.0);
        total.loss += p.loss;
        total.cls += p.cls;
        total.correct += p.correct;
        for i in 0..m {
            total.dm_mean[i] += p.dm_mean[i];
            total.dm_abs_mean[i] += p.dm_abs_mean[i];
        }
    }
    total
}

fn is_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

/// Train `init` on `examples`. Returns the best-validation checkpoint
/// (highest accuracy, ties broken by lower validation classification loss).
pub fn train(
    init: EvaluatorModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<TrainOutcome, EvaluatorError> {
    if examples.len() < 2 {
        return Err(EvaluatorError::NotEnoughData { needed: 2, got: examples.len() });
    }
    let m = init.metrics.len();
    if let Some(i) = examples.iter().position(|e| e.h.len() != init.dimension || e.metrics.len() != m) {
        return Err(EvaluatorError::InvalidData(format!("example {i} does not match the model shape")));
    }
    if examples.iter().any(|e| e.h.iter().chain(&e.metrics).any(|v| !v.is_finite())) {
        return Err(EvaluatorError::InvalidData("non-finite input".into()));
    }
    let (train_idx, val_idx) = split_train_validation(examples.len(), config.validation_fraction, config.seed);
    let normalization = Normalization::fit(&train_idx.iter().map(|&i| examples[i].metrics.clone()).collect::<Vec<_>>());
    let prepared: Vec<Prepared<'_>> = examples
        .iter()
        .map(|e| Prepared { h: &e.h, target: normalization.normalize(&e.metrics), label: e.label })
        .collect();
    let val_batch: Vec<&Prepared<'_>> = val_idx.iter().map(|&i| &prepared[i]).collect();

    let mut model = init;
    model.normalization = normalization;
    model.lambda = config.lambda;
    model.eta = config.eta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order = train_idx.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, EvaluatorModel)> = None;

    for epoch in 1..=config.epochs {
        let batch_size = config.batch_size.unwrap_or(order.len()).max(1);
        if config.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        let (mut train_loss, mut train_cls) = (0.0, 0.0);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Prepared<'_>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let g = batch_gradient(&model.network, &batch, &model.metric_weights, model.lambda);
            let share = chunk.len() as f64 / order.len() as f64;
            train_loss += g.loss * share;
            train_cls += g.cls * share;
            model.network.add_scaled(&g.grads, -config.learning_rate);
        }
        let val = batch_gradient(&model.network, &val_batch, &model.metric_weights, model.lambda);
        let val_accuracy = val.correct as f64 / val_batch.len() as f64;
        if !(train_loss.is_finite() && val.loss.is_finite() && model.network.is_finite()) {
            return Err(EvaluatorError::NonFiniteLoss {
                epoch,
                detail: format!("train loss {train_loss}, validation loss {}", val.loss),
            });
        }
        let better = match &best {
            None => true,
            Some((acc, cls, ..)) => val_accuracy > *acc || (val_accuracy == *acc && val.cls < *cls),
        };
        if better {
            best = Some((val_accuracy, val.cls, epoch, model.clone()));
        }
        let weight_signal = (config.weight_interval > 0 && epoch % config.weight_interval == 0).then(|| {
            let signal: Vec<f64> = match config.signal {
                WeightSignal::SignedMean => val.dm_mean.clone(),
                WeightSignal::Magnitude => val.dm_abs_mean.iter().map(|g| -g).collect(),
            };
            model.metric_weights = update_metric_weights(&model.metric_weights, &signal, model.eta);
            debug_assert!(is_simplex(&model.metric_weights));
            signal
        });
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_cls,
            val_loss: val.loss,
            val_cls: val.cls,
            val_accuracy,
            weights: model.metric_weights.clone(),
            weight_signal,
        });
    }

    let (best_epoch, mut best_model) = match best {
        Some((_, _, e, m)) => (e, m),
        None => (0, model),
    };
    best_model.training = Some(serde_json::json!({
        "config": config,
        "best_epoch": best_epoch,
        "train_examples": train_idx.len(),
        "validation_examples": val_idx.len(),
    }));
    Ok(TrainOutcome { model: best_model, best_epoch, history, train_indices: train_idx, validation_indices: val_idx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{Shape, DEFAULT_PREFIX};
    use crate::metrics::MetricName;
    use proptest::prelude::*;

    #[test]
    fn weight_update_examples() {
        let w = [0.25; 4];
        assert_eq!(update_metric_weights(&w, &[0.0; 4], 0.1), w.to_vec());
        let out = update_metric_weights(&w, &[-1.0, 0.0, 0.0, 0.0], 0.1);
        let expected = [0.3181818181818181, 0.22727272727272727, 0.22727272727272727, 0.22727272727272727];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn weights_stay_on_the_simplex(
            signals in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..20),
            eta in 0.0f64..2.0,
        ) {
            let mut w = vec![0.25; 4];
            for g in &signals {
                w = update_metric_weights(&w, g, eta);
                prop_assert!(is_simplex(&w));
                prop_assert!(w.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn split_is_eighty_twenty_and_disjoint() {
        let (t, v) = split_train_validation(500, 0.2, 9);
        assert_eq!((t.len(), v.len()), (400, 100));
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    fn toy(n: usize) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..n)
            .map(|_| {
                let h: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
                let metrics = vec![h[0] * 2.0, h[1], h[2], h[3]];
                TrainingExample { label: h[0] > 0.0, metrics, h }
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let data = toy(80);
        let init = EvaluatorModel::new("fixture", Shape { input: 6, metrics: 4, reg_hidden: 8, fuse_hidden: 8, fused: 4 }, MetricName::CORE.to_vec(), DEFAULT_PREFIX, 2);
        let config = TrainConfig { epochs: 30, learning_rate: 0.1, batch_size: Some(8), ..Default::default() };
        let a = train(init.clone(), &data, &config).unwrap();
        let b = train(init, &data, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        assert!(a.history.iter().all(|r| is_simplex(&r.weights)));
        assert_eq!(a.history.iter().filter(|r| r.weight_signal.is_some()).count(), 6);
    }
}
