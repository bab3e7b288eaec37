//! JSON model documents: architecture, every tensor, batch-norm running
//! statistics, the feature/label scaler and training provenance.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::heuristics::ElevationFit;
use super::network::{BatchNorm, Dense, DenseBlock, ModelDims, ModelParams, SageLayer};
use super::scaler::ScalerParams;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "gnss-regulator-model";
pub const MODEL_VERSION: u32 = 1;

/// Where a model's training data came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub train_regions: Vec<String>,
    pub holdout: Option<String>,
    pub seed: u64,
    pub iterations: usize,
    pub train_epochs: usize,
}

/// A trained estimator plus the artifacts fitted alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub elevation_fit: Option<ElevationFit>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct NormDoc {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseBlockDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    norm: NormDoc,
}

#[derive(Serialize, Deserialize)]
struct SageDoc {
    self_weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    neighbor_weight: Vec<Vec<f64>>,
    norm: NormDoc,
}

#[derive(Serialize, Deserialize)]
struct DenseDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    dims: ModelDims,
    leaky_slope: f64,
    scaler: ScalerParams,
    encoder: Vec<DenseBlockDoc>,
    gnn: Vec<SageDoc>,
    head: Vec<DenseBlockDoc>,
    output: DenseDoc,
    elevation_fit: Option<ElevationFit>,
    provenance: Provenance,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {}x{} matrix",
            shape.0, shape.1
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected length {len}, found {}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl NormDoc {
    fn from_norm(n: &BatchNorm) -> Self {
        Self {
            gamma: n.gamma.as_slice().to_vec(),
            beta: n.beta.as_slice().to_vec(),
            running_mean: n.running_mean.as_slice().to_vec(),
            running_var: n.running_var.as_slice().to_vec(),
        }
    }

    fn to_norm(&self, width: usize, what: &str) -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: vector(&self.gamma, width, what)?,
            beta: vector(&self.beta, width, what)?,
            running_mean: vector(&self.running_mean, width, what)?,
            running_var: vector(&self.running_var, width, what)?,
        })
    }
}

impl DenseBlockDoc {
    fn from_block(b: &DenseBlock) -> Self {
        Self {
            weight: rows_of(&b.dense.weight),
            bias: b.dense.bias.as_slice().to_vec(),
            norm: NormDoc::from_norm(&b.norm),
        }
    }

    fn to_block(&self, input: usize, width: usize, what: &str) -> Result<DenseBlock> {
        Ok(DenseBlock {
            dense: Dense {
                weight: matrix(&self.weight, (input, width), what)?,
                bias: vector(&self.bias, width, what)?,
            },
            norm: self.norm.to_norm(width, what)?,
        })
    }
}

impl TrainedModel {
    fn to_doc(&self) -> ModelDoc {
        let p = &self.params;
        ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            dims: p.dims,
            leaky_slope: p.leaky_slope,
            scaler: p.scaler.clone(),
            encoder: p.encoder.iter().map(DenseBlockDoc::from_block).collect(),
            gnn: p
                .gnn
                .iter()
                .map(|l| SageDoc {
                    self_weight: rows_of(&l.self_map.weight),
                    bias: l.self_map.bias.as_slice().to_vec(),
                    neighbor_weight: rows_of(&l.neighbor_weight),
                    norm: NormDoc::from_norm(&l.norm),
                })
                .collect(),
            head: p.head.iter().map(DenseBlockDoc::from_block).collect(),
            output: DenseDoc {
                weight: rows_of(&p.output.weight),
                bias: p.output.bias.as_slice().to_vec(),
            },
            elevation_fit: self.elevation_fit,
            provenance: self.provenance.clone(),
        }
    }

    fn from_doc(doc: ModelDoc) -> Result<Self> {
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        let d = doc.dims;
        let h = d.hidden;
        if doc.encoder.len() != d.encoder_layers
            || doc.gnn.len() != d.gnn_layers
            || doc.head.len() + 1 != d.head_layers
        {
            return Err(Error::ShapeMismatch("layer counts do not match dims".into()));
        }
        doc.scaler.validate(d.input)?;
        let encoder = doc
            .encoder
            .iter()
            .enumerate()
            .map(|(k, b)| b.to_block(if k == 0 { d.input } else { h }, h, &format!("encoder.{k}")))
            .collect::<Result<_>>()?;
        let gnn = doc
            .gnn
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let what = format!("gnn.{k}");
                Ok(SageLayer {
                    self_map: Dense {
                        weight: matrix(&l.self_weight, (h, h), &what)?,
                        bias: vector(&l.bias, h, &what)?,
                    },
                    neighbor_weight: matrix(&l.neighbor_weight, (h, h), &what)?,
                    norm: l.norm.to_norm(h, &what)?,
                })
            })
            .collect::<Result<_>>()?;
        let head = doc
            .head
            .iter()
            .enumerate()
            .map(|(k, b)| b.to_block(h, h, &format!("head.{k}")))
            .collect::<Result<_>>()?;
        let output = Dense {
            weight: matrix(&doc.output.weight, (h, 1), "output")?,
            bias: vector(&doc.output.bias, 1, "output")?,
        };
        let params = ModelParams {
            dims: d,
            leaky_slope: doc.leaky_slope,
            encoder,
            gnn,
            head,
            output,
            scaler: doc.scaler,
        };
        if !params.is_finite() {
            return Err(Error::Data("model contains non-finite parameters".into()));
        }
        Ok(Self {
            params,
            elevation_fit: doc.elevation_fit,
            provenance: doc.provenance,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&self.to_doc()).map_err(|e| Error::json("serializing model", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::json("parsing model", e))?;
        Self::from_doc(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
