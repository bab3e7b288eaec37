use crate::error::Result;
use crate::eval::percentile;
use crate::geodesy::elevation_azimuth;
use crate::solver::residuals;
use crate::types::{Epoch, SolutionState};

/// Per-measurement feature width.
pub const FEATURE_DIM: usize = 13;

pub const SIN_AZIMUTH: usize = 6;
pub const COS_AZIMUTH: usize = 7;
pub const ELEVATION: usize = 8;
pub const CN0: usize = 9;
pub const AVG_POWER: usize = 10;
pub const INITIAL_RESIDUAL: usize = 11;
pub const BIAS: usize = 12;

/// Slots that are passed through the scaler untouched.
pub const PASSTHROUGH: [usize; 7] = [0, 1, 2, 3, 4, 5, BIAS];

pub type FeatureVector = [f64; FEATURE_DIM];

/// Clock bias at the initial guess that puts the 10th percentile of the
/// residuals at zero.
pub fn initial_clock_bias(epoch: &Epoch) -> Result<f64> {
    let geometric = residuals(epoch, &SolutionState::new(epoch.initial_guess, 0.0))?;
    Ok(-percentile(&geometric, 10.0)?)
}

/// Initial guess paired with its percentile-based clock bias.
pub fn initial_state(epoch: &Epoch) -> Result<SolutionState> {
    Ok(SolutionState::new(epoch.initial_guess, initial_clock_bias(epoch)?))
}

/// Layout: constellation one-hot (4), band one-hot (2), sin/cos azimuth,
/// elevation, C/N0, average power, residual at the initial state, constant 1.
pub fn extract_features(epoch: &Epoch) -> Result<Vec<FeatureVector>> {
    let state = initial_state(epoch)?;
    let r = residuals(epoch, &state)?;
    epoch
        .observations
        .iter()
        .zip(r)
        .map(|(obs, r)| {
            let (el, az) = elevation_azimuth(epoch.initial_guess, obs.sat.pos)?;
            let mut f = [0.0; FEATURE_DIM];
            f[obs.sat.constellation.index()] = 1.0;
            f[4 + obs.sat.band.index()] = 1.0;
            f[SIN_AZIMUTH] = az.sin();
            f[COS_AZIMUTH] = az.cos();
            f[ELEVATION] = el;
            f[CN0] = obs.cn0;
            f[AVG_POWER] = obs.avg_power;
            f[INITIAL_RESIDUAL] = r;
            f[BIAS] = 1.0;
            Ok(f)
        })
        .collect()
}
