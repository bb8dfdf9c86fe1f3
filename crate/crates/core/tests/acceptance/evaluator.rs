//! Evaluator gradients against central differences, and bi-level training
//! on a planted-metric dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use promptgauge::evaluator::{
    train, EvaluatorModel, Layer, Network, Shape, TrainConfig, TrainingExample, WeightSignal, DEFAULT_PREFIX,
};
use promptgauge::metrics::MetricName;

use crate::ensure;

const STEP: f64 = 1e-5;
const MAX_REL: f64 = 1e-4;
/// Denominator floor, so entries that are zero up to roundoff compare absolutely.
const FLOOR: f64 = 1e-8;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Classification loss recomputed from the fusion input onwards.
fn cls_from_fusion(net: &Network, fuse_input: &[f64], y: bool) -> f64 {
    let tanh = |v: Vec<f64>| v.into_iter().map(f64::tanh).collect::<Vec<_>>();
    let hidden = tanh(Layer::apply(&net.fuse_hidden, fuse_input));
    let z = tanh(net.fuse_out.apply(&hidden));
    let logit = net.classifier.apply(&z)[0];
    softplus(logit) - if y { logit } else { 0.0 }
}

pub fn gradient_suite() -> Result<String, String> {
    const MODELS: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for model in 0..MODELS {
        let shape = Shape {
            input: 8,
            metrics: 4,
            reg_hidden: rng.gen_range(2..=6),
            fuse_hidden: rng.gen_range(2..=6),
            fused: rng.gen_range(1..=4),
        };
        let net = Network::init(shape, &mut rng);
        let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
        let weights: Vec<f64> = raw.iter().map(|w| w / raw.iter().sum::<f64>()).collect();
        let lambda = rng.gen_range(0.0..2.0);
        let y = rng.gen_bool(0.5);

        let fwd = net.forward(&h);
        let mut grads = net.zeros_like();
        let dm = net.backward(&h, &fwd, y, &target, &weights, lambda, 1.0, &mut grads);
        let analytic = grads.to_flat();
        let base = net.to_flat();
        let loss_at = |flat: &[f64]| {
            let mut n = net.clone();
            n.set_flat(flat);
            Network::loss(&n.forward(&h), y, &target, &weights, lambda).total
        };
        for (i, a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[i] = base[i] + STEP;
            let plus = loss_at(&p);
            p[i] = base[i] - STEP;
            let minus = loss_at(&p);
            let e = rel_error(*a, (plus - minus) / (2.0 * STEP));
            ensure(e < MAX_REL, || format!("model {model}, parameter {i}: relative error {e:.2e}"))?;
            worst = worst.max(e);
            checked += 1;
        }

        let cls_metric = net.cls_metric_gradient(&fwd, y);
        ensure(cls_metric == dm, || format!("model {model}: attribution and training partials differ"))?;
        for j in 0..4 {
            let mut input = fwd.fuse_input.clone();
            input[8 + j] += STEP;
            let plus = cls_from_fusion(&net, &input, y);
            input[8 + j] -= 2.0 * STEP;
            let minus = cls_from_fusion(&net, &input, y);
            let e = rel_error(dm[j], (plus - minus) / (2.0 * STEP));
            ensure(e < MAX_REL, || format!("model {model}, dL_cls/dm_{j}: relative error {e:.2e}"))?;
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok(format!("{MODELS} models, {checked} partials, max relative error {worst:.2e}"))
}

const DIM: usize = 16;
const PLANTED: usize = 0;

/// Metric 0 is a noisy linear readout of h and decides the label; the other
/// three metrics are noise independent of h and the label.
fn planted_dataset(n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| {
        let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let direction: Vec<f64> = (0..DIM).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..n)
        .map(|_| {
            let h: Vec<f64> = (0..DIM).map(|_| normal(&mut rng)).collect();
            let signal = h.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>() / norm + 0.05 * normal(&mut rng);
            let mut metrics = vec![signal];
            metrics.extend((0..3).map(|_| normal(&mut rng)));
            TrainingExample { label: signal > 0.0, h, metrics }
        })
        .collect()
}

pub fn training_suite() -> Result<String, String> {
    const EPOCHS: usize = 200;
    let data = planted_dataset(500, 404);
    let init = EvaluatorModel::new("synthetic", Shape::new(DIM, 4), MetricName::CORE.to_vec(), DEFAULT_PREFIX, 405);
    let config = TrainConfig {
        epochs: EPOCHS,
        learning_rate: 0.05,
        batch_size: Some(32),
        signal: WeightSignal::Magnitude,
        seed: 406,
        ..TrainConfig::default()
    };
    let out = train(init, &data, &config).map_err(|e| e.to_string())?;
    ensure(out.history.len() == EPOCHS, || format!("{} epochs recorded", out.history.len()))?;

    let best = out.history.iter().map(|r| r.val_accuracy).fold(0.0, f64::max);
    ensure(best >= 0.95, || format!("best validation accuracy {best:.3}"))?;

    for r in &out.history {
        let sum: f64 = r.weights.iter().sum();
        ensure(r.weights.iter().all(|&w| w >= 0.0) && (sum - 1.0).abs() < 1e-9, || {
            format!("epoch {}: weights {:?} leave the simplex", r.epoch, r.weights)
        })?;
    }

    let last = &out.history.last().unwrap().weights;
    let strictly_largest = last.iter().enumerate().all(|(i, &w)| i == PLANTED || w < last[PLANTED]);
    ensure(strictly_largest, || format!("final weights {last:?}"))?;
    let epoch_95 = out.history.iter().find(|r| r.val_accuracy >= 0.95).map_or(0, |r| r.epoch);
    Ok(format!(
        "validation accuracy {best:.3} (first >= 0.95 at epoch {epoch_95}), final weights [{}]",
        last.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join(", ")
    ))
}
