use nalgebra::DMatrix;

use super::features::FeatureVector;
use super::scaler::ScalerParams;
use crate::error::{Error, Result};
use crate::geodesy::los_unit_vector;
use crate::types::Epoch;

/// Denominator floor of the weighted-mean aggregation.
pub const AGGREGATION_FLOOR: f64 = 1e-8;

/// Complete weighted graph over the measurements of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochGraph {
    pub node_features: Vec<FeatureVector>,
    /// Angular proximity between satellites, zero on the diagonal.
    pub adjacency: DMatrix<f64>,
}

impl EpochGraph {
    pub fn len(&self) -> usize {
        self.node_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_features.is_empty()
    }

    /// Graph with nodes reordered so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> EpochGraph {
        let n = self.len();
        EpochGraph {
            node_features: perm.iter().map(|&p| self.node_features[p]).collect(),
            adjacency: DMatrix::from_fn(n, n, |i, j| self.adjacency[(perm[i], perm[j])]),
        }
    }
}

pub fn build_graph(epoch: &Epoch, features: Vec<FeatureVector>) -> Result<EpochGraph> {
    if features.len() != epoch.len() {
        return Err(Error::LengthMismatch {
            expected: epoch.len(),
            found: features.len(),
        });
    }
    let dirs = epoch
        .observations
        .iter()
        .map(|o| los_unit_vector(epoch.initial_guess, o.sat.pos))
        .collect::<Result<Vec<_>>>()?;
    let n = dirs.len();
    let mut adjacency = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let a = dirs[i].dot(&dirs[j]).clamp(0.0, 1.0);
            adjacency[(i, j)] = a;
            adjacency[(j, i)] = a;
        }
    }
    Ok(EpochGraph {
        node_features: features,
        adjacency,
    })
}

/// One epoch's slice of a batch.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub offset: usize,
    pub len: usize,
    /// Row-normalized adjacency.
    pub mean_adjacency: DMatrix<f64>,
}

/// Several graphs stacked into one node matrix with block-diagonal edges.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub(crate) features: DMatrix<f64>,
    pub(crate) blocks: Vec<Block>,
}

impl GraphBatch {
    pub fn new(graphs: &[&EpochGraph], scaler: &ScalerParams) -> Result<Self> {
        let total: usize = graphs.iter().map(|g| g.len()).sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        let dim = scaler.dim();
        let mut features = DMatrix::zeros(total, dim);
        let mut blocks = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            let n = g.len();
            if g.adjacency.shape() != (n, n) {
                return Err(Error::ShapeMismatch("adjacency does not match node count".into()));
            }
            for (i, f) in g.node_features.iter().enumerate() {
                if f.len() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "feature width {} but model expects {dim}",
                        f.len()
                    )));
                }
                let scaled = scaler.scale_features(f);
                for k in 0..dim {
                    features[(offset + i, k)] = scaled[k];
                }
            }
            let mut mean_adjacency = g.adjacency.clone();
            for i in 0..n {
                let total = mean_adjacency.row(i).sum().max(AGGREGATION_FLOOR);
                mean_adjacency.row_mut(i).unscale_mut(total);
            }
            blocks.push(Block {
                offset,
                len: n,
                mean_adjacency,
            });
            offset += n;
        }
        Ok(Self { features, blocks })
    }

    pub fn nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn graphs(&self) -> usize {
        self.blocks.len()
    }

    /// Weighted neighbor mean of `x` within each graph.
    pub(crate) fn aggregate(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for b in &self.blocks {
            let part = &b.mean_adjacency * x.rows(b.offset, b.len);
            out.rows_mut(b.offset, b.len).copy_from(&part);
        }
        out
    }

    /// Adjoint of [`GraphBatch::aggregate`].
    pub(crate) fn aggregate_transpose(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for b in &self.blocks {
            let part = b.mean_adjacency.tr_mul(&g.rows(b.offset, b.len));
            out.rows_mut(b.offset, b.len).copy_from(&part);
        }
        out
    }
}
