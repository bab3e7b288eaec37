//! Synthetic urban-canyon scenes: satellite geometry, line-of-sight masking,
//! error injection and fold-structured dataset generation.
//!
//! Pseudo-ranges are emitted after all atmospheric and clock corrections, so
//! the only remaining error is the injected one: `m = rho_truth + e`.

mod dataset;

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{
    epoch_rng, epoch_to_json_line, generate_dataset, load_dataset, parse_epoch_line, read_epochs, write_epochs,
    Dataset, DatasetManifest, DatasetSpec, RegionEntry, SceneSpec, FORMAT_VERSION,
};

use crate::error::{Error, Result};
use crate::geodesy::{enu_rotation, enu_to_ecef};
use crate::solver::computed_pseudorange;
use crate::types::{
    Band, Constellation, EcefPosition, Epoch, Observation, SatelliteState, SolutionState,
};

pub const MASK_BINS: usize = 36;

/// Lowest satellite elevation generated, degrees.
pub const MIN_ELEVATION_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkyStyle {
    OpenSky,
    Urban,
    DenseUrban,
}

impl SkyStyle {
    /// Range of per-bin mask elevations, degrees.
    pub fn mask_range_deg(self) -> (f64, f64) {
        match self {
            SkyStyle::OpenSky => (0.0, 5.0),
            SkyStyle::Urban => (10.0, 40.0),
            SkyStyle::DenseUrban => (30.0, 70.0),
        }
    }
}

/// Elevation below which a satellite is blocked, per 10 degree azimuth bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyMask {
    /// Mask elevations in radians, bin `k` covering azimuths `[10k, 10k+10)` degrees.
    pub bins: Vec<f64>,
}

impl SkyMask {
    pub fn open() -> Self {
        Self {
            bins: vec![0.0; MASK_BINS],
        }
    }

    pub fn elevation_at(&self, azimuth: f64) -> f64 {
        let n = self.bins.len();
        let k = ((azimuth.rem_euclid(TAU) / TAU) * n as f64) as usize;
        self.bins[k.min(n - 1)]
    }

    pub fn mean(&self) -> f64 {
        self.bins.iter().sum::<f64>() / self.bins.len() as f64
    }
}

pub fn sample_sky_mask(style: SkyStyle, rng: &mut impl Rng) -> SkyMask {
    let (lo, hi) = style.mask_range_deg();
    SkyMask {
        bins: (0..MASK_BINS)
            .map(|_| rng.random_range(lo..=hi).to_radians())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub region_id: String,
    pub style: SkyStyle,
    pub receiver_origin: EcefPosition,
    pub sky_mask: SkyMask,
    /// Inclusive satellite count range per epoch.
    pub n_sats_range: [usize; 2],
    pub los_sigma_base: f64,
    pub nlos_mean_extra: f64,
    pub nlos_sigma: f64,
    pub cn0_los_mean: f64,
    pub cn0_los_std: f64,
    pub cn0_nlos_mean: f64,
    pub cn0_nlos_std: f64,
    /// Per-axis horizontal offset of the initial guess, meters.
    pub guess_offset_sigma: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene {}: {m}", self.region_id)));
        if self.sky_mask.bins.len() != MASK_BINS
            || self
                .sky_mask
                .bins
                .iter()
                .any(|m| !(0.0..std::f64::consts::FRAC_PI_2).contains(m))
        {
            return bad("mask needs 36 bins with elevations in [0, 90) degrees");
        }
        let [lo, hi] = self.n_sats_range;
        if lo < 5 || hi < lo {
            return bad("satellite count range must satisfy 5 <= min <= max");
        }
        let sigmas = [
            self.los_sigma_base,
            self.nlos_mean_extra,
            self.nlos_sigma,
            self.cn0_los_std,
            self.cn0_nlos_std,
            self.guess_offset_sigma,
        ];
        // zero disables a noise source
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise parameters must be finite and non-negative");
        }
        let r = self.receiver_origin.norm();
        if !(6.2e6..=6.6e6).contains(&r) {
            return bad("receiver origin is not near the Earth surface");
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng, mean: f64, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sigma * z
}

const CONSTELLATION_BANDS: [(Constellation, u32, bool); 4] = [
    (Constellation::Gps, 0, true),
    (Constellation::Glonass, 100, false),
    (Constellation::Galileo, 200, true),
    (Constellation::Beidou, 300, true),
];

/// Builds one epoch. The result depends only on `scene`, `epoch_id` and the
/// state of `rng`.
pub fn generate_epoch(scene: &SceneConfig, epoch_id: u64, rng: &mut ChaCha8Rng) -> Epoch {
    let origin = scene.receiver_origin;

    // truth: within 100 m of the scene origin, on the local horizontal plane
    let radius = 100.0 * rng.random::<f64>().sqrt();
    let bearing = rng.random_range(0.0..TAU);
    let truth_pos = enu_to_ecef(
        origin,
        &Vector3::new(radius * bearing.sin(), radius * bearing.cos(), 0.0),
    );
    let truth = SolutionState::new(truth_pos, rng.random_range(-300.0..300.0));
    let to_ecef = enu_rotation(truth_pos).transpose();

    let [lo, hi] = scene.n_sats_range;
    let count = rng.random_range(lo..=hi);
    let sin_min = MIN_ELEVATION_DEG.to_radians().sin();
    let mut observations = Vec::with_capacity(count);
    let mut next_prn = [1u32; 4];
    for _ in 0..count {
        let el = rng.random_range(sin_min..=1.0f64).asin();
        let az = rng.random_range(0.0..TAU);
        let range = rng.random_range(25_000_000.0..27_000_000.0);
        let dir = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
        let sat_pos = EcefPosition::from_vector(&(truth_pos.to_vector() + to_ecef * dir * range));

        let slot = rng.random_range(0..CONSTELLATION_BANDS.len());
        let (constellation, id_base, dual) = CONSTELLATION_BANDS[slot];
        let band = if dual && rng.random_bool(0.3) { Band::L5 } else { Band::L1 };
        let sat_id = id_base + next_prn[slot];
        next_prn[slot] += 1;

        let los = el > scene.sky_mask.elevation_at(az);
        let raw_error = if los {
            let mut sigma = scene.los_sigma_base * (1.0 + el.cos());
            if scene.los_sigma_base > 0.0 {
                sigma = sigma.max(0.5);
            }
            normal(rng, 0.0, sigma)
        } else {
            let excess: f64 = Exp1.sample(rng);
            scene.nlos_mean_extra * excess + normal(rng, 0.0, scene.nlos_sigma)
        };
        let (cn0_mean, cn0_std) = if los {
            (scene.cn0_los_mean, scene.cn0_los_std)
        } else {
            (scene.cn0_nlos_mean, scene.cn0_nlos_std)
        };
        let cn0 = normal(rng, cn0_mean, cn0_std).clamp(10.0, 55.0);
        let avg_power = cn0 - 30.0 + normal(rng, 0.0, 1.0);

        let sat = SatelliteState {
            sat_id,
            constellation,
            band,
            pos: sat_pos,
        };
        let modeled = computed_pseudorange(&truth, &sat).expect("satellites are far from the receiver");
        let pseudorange = modeled + raw_error;
        observations.push(Observation {
            sat,
            pseudorange,
            cn0,
            avg_power,
            // recomputed so that m - rho_truth = e holds exactly in floating point
            truth_error: Some(pseudorange - modeled),
        });
    }

    let offset = Normal::new(0.0, scene.guess_offset_sigma.max(0.0)).expect("finite sigma");
    let guess = enu_to_ecef(
        truth_pos,
        &Vector3::new(offset.sample(rng), offset.sample(rng), 0.0),
    );
    Epoch {
        epoch_id,
        region_id: scene.region_id.clone(),
        observations,
        initial_guess: guess,
        truth: Some(truth),
    }
}

/// Whether each observation of a generated epoch was in line of sight under
/// the scene mask, judged from the truth position.
pub fn line_of_sight_flags(scene: &SceneConfig, epoch: &Epoch) -> Result<Vec<bool>> {
    let truth = epoch
        .truth
        .ok_or_else(|| Error::Data("line-of-sight needs the truth position".into()))?;
    epoch
        .observations
        .iter()
        .map(|o| {
            let (el, az) = crate::geodesy::elevation_azimuth(truth.pos, o.sat.pos)?;
            Ok(el > scene.sky_mask.elevation_at(az))
        })
        .collect()
}
