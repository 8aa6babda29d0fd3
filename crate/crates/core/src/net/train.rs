use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SyntheticDataset;
use super::model::{argmax_rows, Network, ParamGroup};
use crate::error::{PsuError, Result};
use crate::grad::SurrogateConfig;
use crate::kernel::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam with decoupled weight decay (AdamW).
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerKind::AdamW,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            surrogate: SurrogateConfig::atan(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(PsuError::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(PsuError::Config("weight decay must be finite and >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(PsuError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PsuError::Config("batch size must be at least 1".into()));
        }
        SurrogateConfig::new(self.surrogate.kind, self.surrogate.width)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Mean loss over the batch and its gradient with respect to `scores`.
pub fn loss_and_grad<F: Real>(
    kind: LossKind,
    scores: ArrayView2<'_, F>,
    labels: &[usize],
) -> (f64, Array2<F>) {
    let (b, classes) = scores.dim();
    let mut grad = Array2::zeros((b, classes));
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = scores.row(r);
        match kind {
            LossKind::CrossEntropy => {
                let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                total += -(exps[label] / z).ln();
                for k in 0..classes {
                    let target = if k == label { 1.0 } else { 0.0 };
                    grad[[r, k]] = F::of((exps[k] / z - target) * inv_b);
                }
            }
            LossKind::MeanSquaredError => {
                for k in 0..classes {
                    let target = if k == label { 1.0 } else { 0.0 };
                    let diff = row[k].as_f64() - target;
                    total += diff * diff / classes as f64;
                    grad[[r, k]] = F::of(2.0 * diff / classes as f64 * inv_b);
                }
            }
        }
    }
    (total * inv_b, grad)
}

#[derive(Debug)]
struct Optimizer<F> {
    kind: OptimizerKind,
    lr: F,
    weight_decay: F,
    step: i32,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl<F: Real> Optimizer<F> {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: F::of(cfg.learning_rate),
            weight_decay: F::of(cfg.weight_decay),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    fn apply(&mut self, net: &mut Network<F>, grads: &super::model::Gradients<F>) {
        self.step += 1;
        let t = self.step;
        let (kind, lr, wd) = (self.kind, self.lr, self.weight_decay);
        let (b1, b2, eps) = (F::of(BETA1), F::of(BETA2), F::of(EPSILON));
        let bias1 = F::one() - b1.powi(t);
        let bias2 = F::one() - b2.powi(t);
        let first = &mut self.first;
        let second = &mut self.second;
        net.update_params(grads, |slot, group, params, g| {
            // Decay shrinks synaptic weights only; kernels start at the leak operator.
            let decay = if group == ParamGroup::Weight { wd } else { F::zero() };
            match kind {
                OptimizerKind::Sgd => {
                    for (p, &g) in params.iter_mut().zip(g) {
                        *p = *p - lr * (g + decay * *p);
                    }
                }
                OptimizerKind::AdamW => {
                    if first.len() <= slot {
                        first.resize(slot + 1, Vec::new());
                        second.resize(slot + 1, Vec::new());
                    }
                    let m = &mut first[slot];
                    let v = &mut second[slot];
                    if m.len() != params.len() {
                        *m = vec![F::zero(); params.len()];
                        *v = vec![F::zero(); params.len()];
                    }
                    for k in 0..params.len() {
                        let g = g[k];
                        m[k] = b1 * m[k] + (F::one() - b1) * g;
                        v[k] = b2 * v[k] + (F::one() - b2) * g * g;
                        let m_hat = m[k] / bias1;
                        let v_hat = v[k] / bias2;
                        params[k] =
                            params[k] - lr * (m_hat / (v_hat.sqrt() + eps) + decay * params[k]);
                    }
                }
            }
        });
    }
}

/// Fraction of samples classified correctly.
pub fn evaluate<F: Real>(net: &Network<F>, data: &SyntheticDataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<F>(chunk);
        let out = net.forward(x.view(), chunk.len())?;
        correct += argmax_rows(out.scores.view())
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_dataset<F: Real>(net: &Network<F>, data: &SyntheticDataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Ok(());
    }
    if data.horizon != net.config().horizon || data.width != net.input_width() {
        return Err(PsuError::Shape(format!(
            "{what} samples are [{}, {}], network expects [{}, {}]",
            data.horizon,
            data.width,
            net.config().horizon,
            net.input_width()
        )));
    }
    if data.num_classes > net.num_classes() {
        return Err(PsuError::Shape(format!(
            "{what} has {} classes, network outputs {}",
            data.num_classes,
            net.num_classes()
        )));
    }
    Ok(())
}

/// Mini-batch training. Deterministic given `cfg.seed`; after each optimizer
/// step every learnable kernel is re-masked to its lower triangle.
pub fn train<F: Real>(
    net: &mut Network<F>,
    data: &SyntheticDataset,
    test: Option<&SyntheticDataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_dataset(net, data, "training set")?;
    if let Some(t) = test {
        check_dataset(net, t, "test set")?;
    }
    if data.is_empty() {
        return Err(PsuError::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = data.batch::<F>(chunk);
            let out = net.forward(x.view(), chunk.len())?;
            let (loss, d_scores) = loss_and_grad(cfg.loss, out.scores.view(), &labels);
            if !loss.is_finite() {
                return Err(PsuError::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = net.backward(x.view(), &out, d_scores.view(), &cfg.surrogate)?;
            optimizer.apply(net, &grads);
        }
        let train_accuracy = evaluate(net, data, cfg.batch_size)?;
        let test_accuracy = test.map(|t| evaluate(net, t, cfg.batch_size)).transpose()?;
        history.push(EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_accuracy,
            test_accuracy,
        });
    }
    Ok(history)
}
