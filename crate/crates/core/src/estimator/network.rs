//! Error-estimation network: a per-node MLP encoder, GraphSAGE layers with a
//! weighted-mean neighbor aggregation, and a per-node MLP head. Every hidden
//! layer is affine, then batch normalization, then a leaky rectifier.
//!
//! Gradients are derived by hand; [`ModelParams::compute_gradients`] is the
//! single entry point used by the trainer and checked against finite
//! differences in the tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FEATURE_DIM};
use super::graph::{build_graph, EpochGraph, GraphBatch};
use super::scaler::ScalerParams;
use crate::error::{Error, Result};
use crate::types::Epoch;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub gnn_layers: usize,
    pub head_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            input: FEATURE_DIM,
            hidden: 64,
            encoder_layers: 5,
            gnn_layers: 2,
            head_layers: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; activations are cached for the backward pass.
    Train,
    /// Running statistics; no cache.
    Inference,
}

/// `y = x W + b` with `x` holding one node per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn init(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: DMatrix::from_fn(input, output, |_, _| dist.sample(rng)),
            bias: DVector::from_fn(output, |_, _| dist.sample(rng)),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        add_row_bias(&mut y, &self.bias);
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: DVector::from_element(width, 1.0),
            beta: DVector::zeros(width),
            running_mean: DVector::zeros(width),
            running_var: DVector::from_element(width, 1.0),
        }
    }
}

/// Affine map followed by batch normalization and the leaky rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub dense: Dense,
    pub norm: BatchNorm,
}

/// GraphSAGE layer: `W_self x_i + b + W_nbr mean_j(a_ij x_j)`, then norm and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    pub self_map: Dense,
    pub neighbor_weight: DMatrix<f64>,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub leaky_slope: f64,
    pub encoder: Vec<DenseBlock>,
    pub gnn: Vec<SageLayer>,
    pub head: Vec<DenseBlock>,
    pub output: Dense,
    pub scaler: ScalerParams,
}

/// Gradients with the same layout as [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

struct NormCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    mean: DVector<f64>,
    var: DVector<f64>,
}

struct BlockCache {
    input: DMatrix<f64>,
    aggregated: Option<DMatrix<f64>>,
    norm: NormCache,
    /// Normalized pre-activation values.
    normalized: DMatrix<f64>,
}

/// Activations recorded by a training-mode forward pass.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    head_input: DMatrix<f64>,
}

impl ForwardCache {
    /// Sign pattern of every rectifier input; finite-difference checks use it
    /// to detect a stencil that straddles a kink.
    pub fn activation_signs(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.normalized.iter().map(|v| *v > 0.0))
            .collect()
    }
}

pub struct Forward {
    /// One prediction per node, in scaled label space.
    pub output: Vec<f64>,
    pub cache: Option<ForwardCache>,
}

fn add_row_bias(y: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for (mut col, b) in y.column_iter_mut().zip(bias.iter()) {
        col.add_scalar_mut(*b);
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

fn leaky(x: &DMatrix<f64>, slope: f64) -> DMatrix<f64> {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

fn normalize_train(z: &DMatrix<f64>, norm: &BatchNorm) -> (DMatrix<f64>, NormCache) {
    let n = z.nrows() as f64;
    let width = z.ncols();
    let mut xhat = DMatrix::zeros(z.nrows(), width);
    let mut out = DMatrix::zeros(z.nrows(), width);
    let mut inv_std = DVector::zeros(width);
    let mut mean = DVector::zeros(width);
    let mut var = DVector::zeros(width);
    for j in 0..width {
        let col = z.column(j);
        let m = col.sum() / n;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        let s = 1.0 / (v + BN_EPS).sqrt();
        for i in 0..z.nrows() {
            let h = (z[(i, j)] - m) * s;
            xhat[(i, j)] = h;
            out[(i, j)] = norm.gamma[j] * h + norm.beta[j];
        }
        inv_std[j] = s;
        mean[j] = m;
        var[j] = v;
    }
    (
        out,
        NormCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

fn normalize_inference(z: &DMatrix<f64>, norm: &BatchNorm) -> DMatrix<f64> {
    let mut out = z.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s = 1.0 / (norm.running_var[j] + BN_EPS).sqrt();
        let (m, g, b) = (norm.running_mean[j], norm.gamma[j], norm.beta[j]);
        col.apply(|v| *v = g * (*v - m) * s + b);
    }
    out
}

/// Returns the gradient with respect to the normalization input and pushes
/// `dgamma`, `dbeta`.
fn normalize_backward(
    dy: &DMatrix<f64>,
    cache: &NormCache,
    norm: &BatchNorm,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let rows = dy.nrows();
    let n = rows as f64;
    let width = dy.ncols();
    let mut dz = DMatrix::zeros(rows, width);
    let mut dgamma = DVector::zeros(width);
    let mut dbeta = DVector::zeros(width);
    for j in 0..width {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        let mut g = 0.0;
        let mut b = 0.0;
        for i in 0..rows {
            let d = dy[(i, j)];
            let h = cache.xhat[(i, j)];
            g += d * h;
            b += d;
            let dh = d * norm.gamma[j];
            sum_d += dh;
            sum_dx += dh * h;
        }
        dgamma[j] = g;
        dbeta[j] = b;
        let s = cache.inv_std[j] / n;
        for i in 0..rows {
            let dh = dy[(i, j)] * norm.gamma[j];
            dz[(i, j)] = s * (n * dh - sum_d - cache.xhat[(i, j)] * sum_dx);
        }
    }
    (dz, dgamma, dbeta)
}

impl ModelParams {
    pub fn init(dims: ModelDims, leaky_slope: f64, scaler: ScalerParams, rng: &mut impl Rng) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.encoder_layers == 0 || dims.head_layers == 0 {
            return Err(Error::ShapeMismatch(format!("invalid model dims {dims:?}")));
        }
        scaler.validate(dims.input)?;
        let h = dims.hidden;
        let encoder = (0..dims.encoder_layers)
            .map(|k| DenseBlock {
                dense: Dense::init(rng, if k == 0 { dims.input } else { h }, h),
                norm: BatchNorm::new(h),
            })
            .collect();
        let gnn = (0..dims.gnn_layers)
            .map(|_| {
                let self_map = Dense::init(rng, h, h);
                let neighbor_weight = Dense::init(rng, h, h).weight;
                SageLayer {
                    self_map,
                    neighbor_weight,
                    norm: BatchNorm::new(h),
                }
            })
            .collect();
        let head = (0..dims.head_layers - 1)
            .map(|_| DenseBlock {
                dense: Dense::init(rng, h, h),
                norm: BatchNorm::new(h),
            })
            .collect();
        let output = Dense::init(rng, h, 1);
        Ok(Self {
            dims,
            leaky_slope,
            encoder,
            gnn,
            head,
            output,
            scaler,
        })
    }

    /// Every trainable tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.encoder {
            out.extend([b.dense.weight.as_slice(), b.dense.bias.as_slice(), b.norm.gamma.as_slice(), b.norm.beta.as_slice()]);
        }
        for l in &self.gnn {
            out.extend([
                l.self_map.weight.as_slice(),
                l.self_map.bias.as_slice(),
                l.neighbor_weight.as_slice(),
                l.norm.gamma.as_slice(),
                l.norm.beta.as_slice(),
            ]);
        }
        for b in &self.head {
            out.extend([b.dense.weight.as_slice(), b.dense.bias.as_slice(), b.norm.gamma.as_slice(), b.norm.beta.as_slice()]);
        }
        out.extend([self.output.weight.as_slice(), self.output.bias.as_slice()]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.encoder {
            out.push(b.dense.weight.as_mut_slice());
            out.push(b.dense.bias.as_mut_slice());
            out.push(b.norm.gamma.as_mut_slice());
            out.push(b.norm.beta.as_mut_slice());
        }
        for l in &mut self.gnn {
            out.push(l.self_map.weight.as_mut_slice());
            out.push(l.self_map.bias.as_mut_slice());
            out.push(l.neighbor_weight.as_mut_slice());
            out.push(l.norm.gamma.as_mut_slice());
            out.push(l.norm.beta.as_mut_slice());
        }
        for b in &mut self.head {
            out.push(b.dense.weight.as_mut_slice());
            out.push(b.dense.bias.as_mut_slice());
            out.push(b.norm.gamma.as_mut_slice());
            out.push(b.norm.beta.as_mut_slice());
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(self.output.bias.as_mut_slice());
        out
    }

    /// Human-readable name of each tensor, aligned with [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..self.encoder.len() {
            for t in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("encoder.{k}.{t}"));
            }
        }
        for k in 0..self.gnn.len() {
            for t in ["self_weight", "bias", "neighbor_weight", "gamma", "beta"] {
                names.push(format!("gnn.{k}.{t}"));
            }
        }
        for k in 0..self.head.len() {
            for t in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("head.{k}.{t}"));
            }
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn norms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.encoder
            .iter()
            .map(|b| &b.norm)
            .chain(self.gnn.iter().map(|l| &l.norm))
            .chain(self.head.iter().map(|b| &b.norm))
    }

    fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        self.encoder
            .iter_mut()
            .map(|b| &mut b.norm)
            .chain(self.gnn.iter_mut().map(|l| &mut l.norm))
            .chain(self.head.iter_mut().map(|b| &mut b.norm))
    }

    pub fn forward(&self, batch: &GraphBatch, mode: Mode) -> Result<Forward> {
        if batch.features.ncols() != self.dims.input {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, model expects {}",
                batch.features.ncols(),
                self.dims.input
            )));
        }
        let slope = self.leaky_slope;
        let train = mode == Mode::Train;
        let mut caches = Vec::new();
        let mut x = batch.features.clone();

        let mut block = |x: DMatrix<f64>, z: DMatrix<f64>, aggregated: Option<DMatrix<f64>>, norm: &BatchNorm| {
            if train {
                let (normalized, cache) = normalize_train(&z, norm);
                let a = leaky(&normalized, slope);
                caches.push(BlockCache {
                    input: x,
                    aggregated,
                    norm: cache,
                    normalized,
                });
                a
            } else {
                leaky(&normalize_inference(&z, norm), slope)
            }
        };

        for b in &self.encoder {
            let z = b.dense.apply(&x);
            x = block(x, z, None, &b.norm);
        }
        for l in &self.gnn {
            let agg = batch.aggregate(&x);
            let mut z = l.self_map.apply(&x);
            z += &agg * &l.neighbor_weight;
            x = block(x, z, Some(agg), &l.norm);
        }
        for b in &self.head {
            let z = b.dense.apply(&x);
            x = block(x, z, None, &b.norm);
        }
        let y = self.output.apply(&x);
        Ok(Forward {
            output: y.column(0).iter().copied().collect(),
            cache: train.then_some(ForwardCache {
                blocks: caches,
                head_input: x,
            }),
        })
    }

    /// Reverse pass given the derivative of the loss with respect to each
    /// node output.
    pub fn backward(&self, batch: &GraphBatch, cache: &ForwardCache, d_output: &[f64]) -> Result<Gradients> {
        if d_output.len() != batch.nodes() || cache.head_input.nrows() != batch.nodes() {
            return Err(Error::ShapeMismatch("output gradient does not match batch".into()));
        }
        let slope = self.leaky_slope;
        let dy = DMatrix::from_column_slice(d_output.len(), 1, d_output);
        let mut grads: Vec<Vec<f64>> = Vec::new();

        // output layer, pushed in reverse and flipped at the end
        let d_w = cache.head_input.tr_mul(&dy);
        let d_b = column_sums(&dy);
        let mut dx = &dy * self.output.weight.transpose();
        grads.push(d_b.as_slice().to_vec());
        grads.push(d_w.as_slice().to_vec());

        let mut blocks = cache.blocks.iter().rev();
        let step_back = |dx: &DMatrix<f64>, c: &BlockCache, norm: &BatchNorm| {
            let mut d_norm = dx.clone();
            d_norm.zip_apply(&c.normalized, |g, v| {
                if v <= 0.0 {
                    *g *= slope
                }
            });
            normalize_backward(&d_norm, &c.norm, norm)
        };

        for b in self.head.iter().rev() {
            let c = blocks.next().expect("cache per head block");
            let (dz, dgamma, dbeta) = step_back(&dx, c, &b.norm);
            grads.push(dbeta.as_slice().to_vec());
            grads.push(dgamma.as_slice().to_vec());
            grads.push(column_sums(&dz).as_slice().to_vec());
            grads.push(c.input.tr_mul(&dz).as_slice().to_vec());
            dx = &dz * b.dense.weight.transpose();
        }
        for l in self.gnn.iter().rev() {
            let c = blocks.next().expect("cache per gnn block");
            let (dz, dgamma, dbeta) = step_back(&dx, c, &l.norm);
            let agg = c.aggregated.as_ref().expect("aggregation cached");
            grads.push(dbeta.as_slice().to_vec());
            grads.push(dgamma.as_slice().to_vec());
            grads.push(agg.tr_mul(&dz).as_slice().to_vec());
            grads.push(column_sums(&dz).as_slice().to_vec());
            grads.push(c.input.tr_mul(&dz).as_slice().to_vec());
            let through_neighbors = &dz * l.neighbor_weight.transpose();
            dx = &dz * l.self_map.weight.transpose() + batch.aggregate_transpose(&through_neighbors);
        }
        for b in self.encoder.iter().rev() {
            let c = blocks.next().expect("cache per encoder block");
            let (dz, dgamma, dbeta) = step_back(&dx, c, &b.norm);
            grads.push(dbeta.as_slice().to_vec());
            grads.push(dgamma.as_slice().to_vec());
            grads.push(column_sums(&dz).as_slice().to_vec());
            grads.push(c.input.tr_mul(&dz).as_slice().to_vec());
            dx = &dz * b.dense.weight.transpose();
        }
        grads.reverse();
        Ok(Gradients { tensors: grads })
    }

    /// Data loss plus `weight_decay / 2 * |theta|^2`, with exact gradients.
    pub fn compute_gradients(
        &self,
        batch: &GraphBatch,
        targets: &[f64],
        weight_decay: f64,
    ) -> Result<(f64, Gradients, ForwardCache)> {
        let fwd = self.forward(batch, Mode::Train)?;
        let (loss, d_output) = batch_loss(batch, &fwd.output, targets)?;
        let cache = fwd.cache.expect("train mode caches");
        let mut grads = self.backward(batch, &cache, &d_output)?;
        let mut total = loss;
        if weight_decay != 0.0 {
            for (g, p) in grads.tensors.iter_mut().zip(self.tensors()) {
                for (g, p) in g.iter_mut().zip(p) {
                    *g += weight_decay * p;
                    total += 0.5 * weight_decay * p * p;
                }
            }
        }
        Ok((total, grads, cache))
    }

    /// Exponential moving average of the batch statistics recorded in `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        for (norm, block) in self.norms_mut().zip(&cache.blocks) {
            let n = block.input.nrows() as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for j in 0..norm.running_mean.len() {
                norm.running_mean[j] = (1.0 - momentum) * norm.running_mean[j] + momentum * block.norm.mean[j];
                norm.running_var[j] = (1.0 - momentum) * norm.running_var[j] + momentum * block.norm.var[j] * unbias;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self
                .norms()
                .all(|n| n.running_mean.iter().chain(n.running_var.iter()).all(|v| v.is_finite()))
    }

    /// Scaled predictions for a prebuilt graph, inference mode.
    pub fn predict_graph(&self, graph: &EpochGraph) -> Result<Vec<f64>> {
        if graph.is_empty() {
            return Err(Error::EmptyInput);
        }
        let batch = GraphBatch::new(&[graph], &self.scaler)?;
        Ok(self.forward(&batch, Mode::Inference)?.output)
    }

    /// Estimated measurement errors in meters: features, graph, network, unscaling.
    pub fn predict(&self, epoch: &Epoch) -> Result<Vec<f64>> {
        let graph = build_graph(epoch, extract_features(epoch)?)?;
        Ok(self
            .predict_graph(&graph)?
            .into_iter()
            .map(|v| self.scaler.unscale_label(v))
            .collect())
    }
}

/// Squared error summed over the nodes of one epoch.
pub fn loss_l2(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: predicted.len(),
            found: target.len(),
        });
    }
    Ok(predicted.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// Per-epoch squared error averaged over the graphs of the batch, and its
/// derivative with respect to every node output.
pub fn batch_loss(batch: &GraphBatch, predicted: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != batch.nodes() || target.len() != batch.nodes() {
        return Err(Error::LengthMismatch {
            expected: batch.nodes(),
            found: target.len().min(predicted.len()),
        });
    }
    let scale = 1.0 / batch.graphs() as f64;
    let mut loss = 0.0;
    for b in &batch.blocks {
        let r = b.offset..b.offset + b.len;
        loss += loss_l2(&predicted[r.clone()], &target[r])?;
    }
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) * scale)
        .collect();
    Ok((loss * scale, grad))
}
