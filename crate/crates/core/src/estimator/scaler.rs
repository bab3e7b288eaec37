use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, FEATURE_DIM, PASSTHROUGH};
use crate::error::{Error, Result};

/// Standard deviations are floored here.
pub const STD_FLOOR: f64 = 1e-8;

/// Standard-scaling statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl ScalerParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            label_mean: 0.0,
            label_std: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn scale_features(&self, f: &FeatureVector) -> FeatureVector {
        let mut out = *f;
        for (k, v) in out.iter_mut().enumerate() {
            *v = (*v - self.feature_mean[k]) / self.feature_std[k];
        }
        out
    }

    pub fn scale_label(&self, e: f64) -> f64 {
        (e - self.label_mean) / self.label_std
    }

    pub fn unscale_label(&self, scaled: f64) -> f64 {
        scaled * self.label_std + self.label_mean
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        let ok = self.feature_mean.len() == dim
            && self.feature_std.len() == dim
            && self.feature_std.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.label_std > 0.0;
        if !ok {
            return Err(Error::ShapeMismatch(format!("scaler does not fit {dim} features")));
        }
        Ok(())
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits per-feature and label statistics. One-hot and constant slots keep
/// mean 0 / std 1; degenerate columns get a floored std and a warning.
pub fn fit_scaler(features: &[FeatureVector], labels: &[f64]) -> Result<ScalerParams> {
    if features.len() < 2 || labels.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let mut scaler = ScalerParams::identity(FEATURE_DIM);
    for k in 0..FEATURE_DIM {
        if PASSTHROUGH.contains(&k) {
            continue;
        }
        let (mean, std) = mean_std(features.iter().map(|f| f[k]));
        if std < STD_FLOOR {
            log::warn!("feature {k} is constant on the training split; std floored");
        }
        scaler.feature_mean[k] = mean;
        scaler.feature_std[k] = std.max(STD_FLOOR);
    }
    let (mean, std) = mean_std(labels.iter().copied());
    if std < STD_FLOOR {
        log::warn!("training labels are constant; std floored");
    }
    scaler.label_mean = mean;
    scaler.label_std = std.max(STD_FLOOR);
    Ok(scaler)
}
