//! Regression, fusion and classification heads with exact backpropagation.
//!
//! Shapes, with `D` the encoder dimension and `M` the metric count:
//! regression `D -> R (tanh) -> M`, fusion `[h; m̂] -> H (tanh) -> F (tanh)`,
//! classifier `F -> 1 (sigmoid)`. `m̂` is in normalized (z-scored) units.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense affine map, weights stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.gen_range(-a..a)).collect();
        Self { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// Accumulate `scale * dy xᵀ` and `scale * dy` into this (gradient) layer.
    fn accumulate(&mut self, dy: &[f64], x: &[f64], scale: f64) {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let s = d * scale;
            self.bias[o] += s;
            for (g, &xi) in self.weight[o * self.inputs..(o + 1) * self.inputs].iter_mut().zip(x) {
                *g += s * xi;
            }
        }
    }

    /// `Wᵀ dy`.
    fn back(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (row, &d) in self.weight.chunks_exact(self.inputs).zip(dy) {
            if d == 0.0 {
                continue;
            }
            for (g, w) in dx.iter_mut().zip(row) {
                *g += w * d;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub reg_hidden: Layer,
    pub reg_out: Layer,
    pub fuse_hidden: Layer,
    pub fuse_out: Layer,
    pub classifier: Layer,
}

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    pub metrics: usize,
    pub reg_hidden: usize,
    pub fuse_hidden: usize,
    pub fused: usize,
}

impl Shape {
    pub fn new(input: usize, metrics: usize) -> Self {
        Self { input, metrics, reg_hidden: 64, fuse_hidden: 64, fused: 32 }
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub reg_hidden: Vec<f64>,
    /// Predicted metrics, normalized units.
    pub m_hat: Vec<f64>,
    pub fuse_input: Vec<f64>,
    pub fuse_hidden: Vec<f64>,
    pub z: Vec<f64>,
    pub logit: f64,
    pub y_hat: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn tanh_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

/// Per-example loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub reg: Vec<f64>,
}

impl Network {
    pub fn init(shape: Shape, rng: &mut impl Rng) -> Self {
        Self {
            reg_hidden: Layer::init(shape.input, shape.reg_hidden, rng),
            reg_out: Layer::init(shape.reg_hidden, shape.metrics, rng),
            fuse_hidden: Layer::init(shape.input + shape.metrics, shape.fuse_hidden, rng),
            fuse_out: Layer::init(shape.fuse_hidden, shape.fused, rng),
            classifier: Layer::init(shape.fused, 1, rng),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            reg_hidden: Layer::zeros(shape.input, shape.reg_hidden),
            reg_out: Layer::zeros(shape.reg_hidden, shape.metrics),
            fuse_hidden: Layer::zeros(shape.input + shape.metrics, shape.fuse_hidden),
            fuse_out: Layer::zeros(shape.fuse_hidden, shape.fused),
            classifier: Layer::zeros(shape.fused, 1),
        }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            input: self.reg_hidden.inputs,
            metrics: self.reg_out.outputs,
            reg_hidden: self.reg_hidden.outputs,
            fuse_hidden: self.fuse_hidden.outputs,
            fused: self.fuse_out.outputs,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    pub fn layers(&self) -> [&Layer; 5] {
        [&self.reg_hidden, &self.reg_out, &self.fuse_hidden, &self.fuse_out, &self.classifier]
    }

    pub fn layers_mut(&mut self) -> [&mut Layer; 5] {
        [&mut self.reg_hidden, &mut self.reg_out, &mut self.fuse_hidden, &mut self.fuse_out, &mut self.classifier]
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for l in self.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("flat vector long enough");
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Network, scale: f64) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn forward(&self, h: &[f64]) -> Forward {
        let reg_hidden = tanh_all(self.reg_hidden.apply(h));
        let m_hat = self.reg_out.apply(&reg_hidden);
        let mut fuse_input = h.to_vec();
        fuse_input.extend_from_slice(&m_hat);
        let fuse_hidden = tanh_all(self.fuse_hidden.apply(&fuse_input));
        let z = tanh_all(self.fuse_out.apply(&fuse_hidden));
        let logit = self.classifier.apply(&z)[0];
        Forward { reg_hidden, m_hat, fuse_input, fuse_hidden, z, logit, y_hat: sigmoid(logit) }
    }

    /// Binary cross-entropy plus `lambda * Σ w_i (m̂_i - m_i)²`.
    pub fn loss(fwd: &Forward, y: bool, target: &[f64], weights: &[f64], lambda: f64) -> LossParts {
        let t = if y { 1.0 } else { 0.0 };
        let cls = softplus(fwd.logit) - t * fwd.logit;
        let reg: Vec<f64> = fwd.m_hat.iter().zip(target).map(|(p, m)| (p - m).powi(2)).collect();
        let total = cls + lambda * reg.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>();
        LossParts { total, cls, reg }
    }

    /// Gradient of the classification loss along the fusion path, down to
    /// the fusion input. Accumulates into `grads` when given.
    fn back_cls(&self, fwd: &Forward, y: bool, scale: f64, grads: Option<&mut Network>) -> Vec<f64> {
        let t = if y { 1.0 } else { 0.0 };
        let d_logit = [fwd.y_hat - t];
        let dz = self.classifier.back(&d_logit);
        let d_fuse_out: Vec<f64> = dz.iter().zip(&fwd.z).map(|(d, z)| d * (1.0 - z * z)).collect();
        let d_fh = self.fuse_out.back(&d_fuse_out);
        let d_fuse_hidden: Vec<f64> = d_fh.iter().zip(&fwd.fuse_hidden).map(|(d, a)| d * (1.0 - a * a)).collect();
        if let Some(g) = grads {
            g.classifier.accumulate(&d_logit, &fwd.z, scale);
            g.fuse_out.accumulate(&d_fuse_out, &fwd.fuse_hidden, scale);
            g.fuse_hidden.accumulate(&d_fuse_hidden, &fwd.fuse_input, scale);
        }
        self.fuse_hidden.back(&d_fuse_hidden)
    }

    /// `∂L_cls/∂m̂` for one example (normalized units), without touching
    /// any parameter gradient.
    pub fn cls_metric_gradient(&self, fwd: &Forward, y: bool) -> Vec<f64> {
        let d_input = self.back_cls(fwd, y, 0.0, None);
        d_input[self.reg_hidden.inputs..].to_vec()
    }

    /// Accumulate `scale * ∂L_total/∂θ` into `grads` and return `∂L_cls/∂m̂`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        h: &[f64],
        fwd: &Forward,
        y: bool,
        target: &[f64],
        weights: &[f64],
        lambda: f64,
        scale: f64,
        grads: &mut Network,
    ) -> Vec<f64> {
        let d_input = self.back_cls(fwd, y, scale, Some(grads));
        let dm_cls = d_input[h.len()..].to_vec();
        let dm: Vec<f64> = dm_cls
            .iter()
            .zip(fwd.m_hat.iter().zip(target).zip(weights))
            .map(|(c, ((p, m), w))| c + lambda * w * 2.0 * (p - m))
            .collect();
        grads.reg_out.accumulate(&dm, &fwd.reg_hidden, scale);
        let dr = self.reg_out.back(&dm);
        let d_reg_hidden: Vec<f64> = dr.iter().zip(&fwd.reg_hidden).map(|(d, a)| d * (1.0 - a * a)).collect();
        grads.reg_hidden.accumulate(&d_reg_hidden, h, scale);
        dm_cls
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (Network, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape { input: 5, metrics: 3, reg_hidden: 4, fuse_hidden: 4, fused: 3 };
        let net = Network::init(shape, &mut rng);
        let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (net, h, m, vec![0.5, 0.3, 0.2])
    }

    #[test]
    fn zero_network_predicts_one_half() {
        let net = Network::zeros(Shape::new(6, 4));
        let f = net.forward(&[0.3; 6]);
        assert_eq!(f.y_hat, 0.5);
        assert!(f.m_hat.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn loss_examples() {
        let net = Network::zeros(Shape::new(2, 2));
        let f = net.forward(&[1.0, 2.0]);
        let l = Network::loss(&f, true, &[0.0, 0.0], &[0.5, 0.5], 1.0);
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-15);
        let l = Network::loss(&f, true, &[1.0, 3.0], &[0.5, 0.5], 0.0);
        assert_eq!(l.total, l.cls);
    }

    #[test]
    fn flat_round_trip() {
        let (net, ..) = small();
        let mut other = net.zeros_like();
        other.set_flat(&net.to_flat());
        assert_eq!(other, net);
        assert_eq!(net.param_count(), net.to_flat().len());
    }

    #[test]
    fn central_differences_agree() {
        let (net, h, m, w) = small();
        let mut grads = net.zeros_like();
        let f = net.forward(&h);
        net.backward(&h, &f, true, &m, &w, 0.7, 1.0, &mut grads);
        let analytic = grads.to_flat();
        let base = net.to_flat();
        let eps = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += eps;
            let mut plus = net.clone();
            plus.set_flat(&p);
            p[i] -= 2.0 * eps;
            let mut minus = net.clone();
            minus.set_flat(&p);
            let lp = Network::loss(&plus.forward(&h), true, &m, &w, 0.7).total;
            let lm = Network::loss(&minus.forward(&h), true, &m, &w, 0.7).total;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!((numeric - analytic[i]).abs() < 1e-7, "param {i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn severed_fusion_columns_zero_the_metric_gradient() {
        let (mut net, h, ..) = small();
        let d = net.reg_hidden.inputs;
        let cols = net.fuse_hidden.inputs;
        for row in net.fuse_hidden.weight.chunks_exact_mut(cols) {
            row[d..].iter_mut().for_each(|v| *v = 0.0);
        }
        let f = net.forward(&h);
        assert!(net.cls_metric_gradient(&f, true).iter().all(|&g| g == 0.0));
    }
}
