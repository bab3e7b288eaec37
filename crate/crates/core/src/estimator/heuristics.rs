//! Classical weighting baselines: uniform, C/N0-based and elevation-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::elevation_azimuth;
use crate::types::Epoch;

/// `E[ln X]` for `X ~ chi-squared(1)`: `-(euler_gamma + ln 2)`.
const LOG_CHI2_1_MEAN: f64 = -1.270_362_845_461_478;

/// Squared errors are floored before taking logarithms.
const SQUARED_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicMethod {
    Unit,
    Cn0,
    Elevation,
}

/// Error variance model `sigma^2(el) = a * exp(-el / b)`, elevation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElevationFit {
    pub a: f64,
    pub b: f64,
}

impl ElevationFit {
    pub fn variance(&self, elevation: f64) -> f64 {
        self.a * (-elevation / self.b).exp()
    }
}

/// Least-squares fit of `ln(e^2) = ln a - el / b` over `(elevation, error)`
/// pairs. The intercept is shifted by the mean of a log chi-squared(1)
/// variable so that Gaussian errors recover the variance scale unbiased.
pub fn fit_elevation_model(samples: &[(f64, f64)]) -> Result<ElevationFit> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = samples.len() as f64;
    let ys: Vec<f64> = samples
        .iter()
        .map(|(_, e)| (e * e).max(SQUARED_ERROR_FLOOR).ln())
        .collect();
    let mean_x = samples.iter().map(|(el, _)| el).sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((x, _), y) in samples.iter().zip(&ys) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    if !(sxx > 0.0) {
        return Err(Error::Data("elevation fit needs distinct elevations".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x - LOG_CHI2_1_MEAN;
    Ok(ElevationFit {
        a: intercept.exp(),
        b: -1.0 / slope,
    })
}

/// `(elevation at the initial guess, truth error)` for every labeled observation.
pub fn elevation_samples(epochs: &[Epoch]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for epoch in epochs {
        for obs in &epoch.observations {
            if let Some(e) = obs.truth_error {
                let (el, _) = elevation_azimuth(epoch.initial_guess, obs.sat.pos)?;
                out.push((el, e));
            }
        }
    }
    Ok(out)
}

pub fn heuristic_weights(
    method: HeuristicMethod,
    epoch: &Epoch,
    fit: Option<&ElevationFit>,
) -> Result<Vec<f64>> {
    if epoch.is_empty() {
        return Err(Error::EmptyInput);
    }
    match method {
        HeuristicMethod::Unit => Ok(vec![1.0; epoch.len()]),
        HeuristicMethod::Cn0 => {
            // variance taken proportional to 10^(-cn0/10)
            let raw: Vec<f64> = epoch
                .observations
                .iter()
                .map(|o| 10f64.powf(o.cn0 / 10.0))
                .collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            Ok(raw.into_iter().map(|w| w / mean).collect())
        }
        HeuristicMethod::Elevation => {
            let fit = fit.ok_or(Error::MissingFit)?;
            epoch
                .observations
                .iter()
                .map(|o| {
                    let (el, _) = elevation_azimuth(epoch.initial_guess, o.sat.pos)?;
                    Ok(1.0 / fit.variance(el))
                })
                .collect()
        }
    }
}
