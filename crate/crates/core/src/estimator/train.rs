use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureVector};
use super::graph::{build_graph, EpochGraph, GraphBatch};
use super::network::{Gradients, ModelDims, ModelParams};
use super::scaler::{fit_scaler, ScalerParams};
use crate::error::{Error, Result};
use crate::types::Epoch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs (graphs) per batch.
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied every `lr_decay_every` iterations.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            iterations: 10_000,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            lr_decay: 0.8,
            lr_decay_every: 1500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            hidden: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.learning_rate,
            self.lr_decay,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.leaky_slope,
            self.bn_momentum,
        ];
        if self.batch_size == 0
            || self.iterations == 0
            || self.lr_decay_every == 0
            || self.hidden == 0
            || self.weight_decay < 0.0
            || positive.iter().any(|v| !(*v > 0.0))
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((iteration / self.lr_decay_every) as i32)
    }
}

/// Adam with the weight-decay term already folded into the gradients.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.first[k], &mut self.second[k], &grads.tensors[k]);
            for i in 0..tensor.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                tensor[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Graphs and labels of a training split with the scaler fitted on it.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub graphs: Vec<EpochGraph>,
    /// Scaled labels per graph.
    pub labels: Vec<Vec<f64>>,
    pub scaler: ScalerParams,
}

impl TrainingSet {
    pub fn from_epochs(epochs: &[Epoch]) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::NoLabels);
        }
        let mut graphs = Vec::with_capacity(epochs.len());
        let mut raw_labels = Vec::with_capacity(epochs.len());
        for epoch in epochs {
            let labels = epoch.truth_errors().ok_or(Error::NoLabels)?;
            graphs.push(build_graph(epoch, extract_features(epoch)?)?);
            raw_labels.push(labels);
        }
        let all_features: Vec<FeatureVector> =
            graphs.iter().flat_map(|g| g.node_features.iter().copied()).collect();
        let all_labels: Vec<f64> = raw_labels.iter().flatten().copied().collect();
        let scaler = fit_scaler(&all_features, &all_labels)?;
        let labels = raw_labels
            .into_iter()
            .map(|l| l.into_iter().map(|e| scaler.scale_label(e)).collect())
            .collect();
        Ok(Self {
            graphs,
            labels,
            scaler,
        })
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(GraphBatch, Vec<f64>)> {
        let graphs: Vec<&EpochGraph> = indices.iter().map(|&i| &self.graphs[i]).collect();
        let batch = GraphBatch::new(&graphs, &self.scaler)?;
        let targets = indices.iter().flat_map(|&i| self.labels[i].iter().copied()).collect();
        Ok((batch, targets))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Regularized batch loss at every iteration.
    pub losses: Vec<f64>,
}

/// Fixed-order mini-batch schedule: a seeded shuffle per pass, full batches only.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    size: usize,
}

impl BatchOrder {
    fn new(n: usize, size: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            rng,
            order: (0..n).collect(),
            cursor: n,
            size: size.min(n),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.reshuffle();
        }
        let start = self.cursor;
        self.cursor += self.size;
        &self.order[start..start + self.size]
    }
}

pub fn train(epochs: &[Epoch], config: &TrainConfig) -> Result<TrainOutcome> {
    let set = TrainingSet::from_epochs(epochs)?;
    train_on(&set, config)
}

pub fn train_on(set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if set.graphs.is_empty() {
        return Err(Error::NoLabels);
    }
    let dims = ModelDims {
        hidden: config.hidden,
        ..ModelDims::default()
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(dims, config.leaky_slope, set.scaler.clone(), &mut init_rng)?;
    let mut adam = Adam::new(&params, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0fda_7a0d_e5a1);
    let mut order = BatchOrder::new(set.graphs.len(), config.batch_size, order_rng);

    let mut losses = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let (batch, targets) = set.batch(order.next_batch())?;
        let (loss, grads, cache) = params.compute_gradients(&batch, &targets, config.weight_decay)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!("training diverged at iteration {iteration}")));
        }
        params.update_running_stats(&cache, config.bn_momentum);
        adam.update(&mut params, &grads, config.learning_rate_at(iteration));
        losses.push(loss);
        if (iteration + 1) % 1000 == 0 {
            let recent = &losses[iteration + 1 - 1000..];
            log::info!(
                "iteration {}: mean loss {:.5}",
                iteration + 1,
                recent.iter().sum::<f64>() / recent.len() as f64
            );
        }
    }
    Ok(TrainOutcome { params, losses })
}
