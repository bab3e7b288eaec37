//! Adaptive measurement selection on estimated errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    /// Minimum number of measurements kept.
    pub n_req: usize,
    /// Initial lower bound on accepted estimated errors, meters.
    pub lower: f64,
    /// Initial upper bound, meters.
    pub upper: f64,
    /// Bound relaxation step, meters.
    pub step: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            n_req: 10,
            lower: -15.0,
            upper: 15.0,
            step: 5.0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_req < 4 || !(self.step > 0.0) || !(self.lower <= self.upper) {
            return Err(Error::Config(format!("invalid selector config {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of a selection pass: the keep-mask and the bounds it was cut with.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: Vec<bool>,
    pub lower: f64,
    pub upper: f64,
}

impl Selection {
    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&k| k).count()
    }
}

/// Keeps the measurements whose estimated error lies within `[lower, upper]`,
/// widening the upper bound first and then the lower bound until at least
/// `n_req` are accepted. Epochs with at most `n_req` measurements pass through.
pub fn select_measurements(e_hat: &[f64], config: &SelectorConfig) -> Selection {
    let (mut lower, mut upper) = (config.lower, config.upper);
    let n = e_hat.len();
    if n <= config.n_req {
        return Selection {
            mask: vec![true; n],
            lower,
            upper,
        };
    }
    let inside = |lo: f64, hi: f64| e_hat.iter().filter(|&&e| lo <= e && e <= hi).count();
    let (min, max) = e_hat
        .iter()
        .filter(|e| e.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    while inside(lower, upper) < config.n_req {
        // Non-finite estimates can never be accepted; stop once every finite one is.
        if lower <= min && upper >= max {
            break;
        }
        upper += config.step;
        if upper >= max {
            lower -= config.step;
        }
    }
    Selection {
        mask: e_hat.iter().map(|&e| lower <= e && e <= upper).collect(),
        lower,
        upper,
    }
}
