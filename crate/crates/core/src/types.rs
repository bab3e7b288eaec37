//! Domain types shared by every stage of the pipeline.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earth-centered Earth-fixed position, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn distance(self, other: EcefPosition) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Receiver position plus clock bias: the unknowns of a fix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolutionState {
    pub pos: EcefPosition,
    /// Receiver clock bias expressed in meters.
    pub clock_bias: f64,
}

impl SolutionState {
    pub const fn new(pos: EcefPosition, clock_bias: f64) -> Self {
        Self { pos, clock_bias }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.clock_bias.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constellation {
    #[serde(rename = "GPS")]
    Gps,
    #[serde(rename = "GLO")]
    Glonass,
    #[serde(rename = "GAL")]
    Galileo,
    #[serde(rename = "BDS")]
    Beidou,
}

impl Constellation {
    pub const ALL: [Constellation; 4] = [
        Constellation::Gps,
        Constellation::Glonass,
        Constellation::Galileo,
        Constellation::Beidou,
    ];

    pub fn index(self) -> usize {
        match self {
            Constellation::Gps => 0,
            Constellation::Glonass => 1,
            Constellation::Galileo => 2,
            Constellation::Beidou => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    L1,
    L5,
}

impl Band {
    pub fn index(self) -> usize {
        match self {
            Band::L1 => 0,
            Band::L5 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteState {
    pub sat_id: u32,
    pub constellation: Constellation,
    pub band: Band,
    pub pos: EcefPosition,
}

/// Minimum geocentric radius accepted for a satellite position.
pub const MIN_SATELLITE_RADIUS: f64 = 6_400_000.0;

/// One pseudo-range measurement, already corrected for atmosphere and clocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub sat: SatelliteState,
    /// Measured pseudo-range, meters.
    pub pseudorange: f64,
    /// Carrier-to-noise density, dB-Hz.
    pub cn0: f64,
    /// Average signal power, dB.
    pub avg_power: f64,
    /// Remaining measurement error `m - rho_truth`, known only for training data.
    pub truth_error: Option<f64>,
}

/// The set of simultaneous measurements used for one fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub epoch_id: u64,
    pub region_id: String,
    pub observations: Vec<Observation>,
    pub initial_guess: EcefPosition,
    pub truth: Option<SolutionState>,
}

impl Epoch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Truth errors of every observation, if all are present.
    pub fn truth_errors(&self) -> Option<Vec<f64>> {
        self.observations.iter().map(|o| o.truth_error).collect()
    }

    /// Copy of the epoch holding only the observations flagged in `mask`.
    pub fn subset(&self, mask: &[bool]) -> Result<Epoch> {
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: mask.len(),
            });
        }
        let observations = self
            .observations
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(o, _)| *o)
            .collect();
        Ok(Epoch {
            observations,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Epoch {
        Epoch {
            epoch_id: self.epoch_id,
            region_id: self.region_id.clone(),
            observations: Vec::new(),
            initial_guess: self.initial_guess,
            truth: self.truth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Data(format!("epoch {}: {msg}", self.epoch_id)));
        if self.observations.is_empty() {
            return bad("no observations".into());
        }
        if !self.initial_guess.is_finite() {
            return bad("non-finite initial guess".into());
        }
        if let Some(truth) = &self.truth {
            if !truth.is_finite() {
                return bad("non-finite truth state".into());
            }
        }
        let mut seen = HashSet::with_capacity(self.observations.len());
        for obs in &self.observations {
            if !seen.insert(obs.sat.sat_id) {
                return bad(format!("duplicate sat_id {}", obs.sat.sat_id));
            }
            if !obs.sat.pos.is_finite() || obs.sat.pos.norm() <= MIN_SATELLITE_RADIUS {
                return bad(format!("satellite {} below Earth surface", obs.sat.sat_id));
            }
            if !(obs.pseudorange.is_finite() && obs.pseudorange > 0.0) {
                return bad(format!("satellite {} has non-positive pseudo-range", obs.sat.sat_id));
            }
            if !(0.0..=70.0).contains(&obs.cn0) || !obs.avg_power.is_finite() {
                return bad(format!("satellite {} has out-of-range C/N0", obs.sat.sat_id));
            }
            if obs.truth_error.is_some_and(|e| !e.is_finite()) {
                return bad(format!("satellite {} has non-finite truth error", obs.sat.sat_id));
            }
        }
        Ok(())
    }
}

/// Position-solving strategy evaluated by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WlsUnit,
    WlsCn0,
    WlsElevation,
    RegulateWeights,
    RegulateMeasurements,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::WlsUnit,
        Method::WlsCn0,
        Method::WlsElevation,
        Method::RegulateWeights,
        Method::RegulateMeasurements,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::WlsUnit => "wls_unit",
            Method::WlsCn0 => "wls_cn0",
            Method::WlsElevation => "wls_elevation",
            Method::RegulateWeights => "regulate_weights",
            Method::RegulateMeasurements => "regulate_measurements",
        }
    }

    pub fn needs_error_estimates(self) -> bool {
        matches!(self, Method::RegulateWeights | Method::RegulateMeasurements)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}
