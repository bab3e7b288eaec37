//! Small deterministic epoch builders shared by unit and integration tests.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geodesy::{enu_rotation, enu_to_ecef, surface_point};
use crate::types::{
    Band, Constellation, EcefPosition, Epoch, Observation, SatelliteState, SolutionState,
};

/// Epoch with satellites in random directions above 10 degrees elevation and
/// the given truth errors planted into the measurements.
pub fn random_epoch(seed: u64, n: usize, errors: &[f64]) -> Epoch {
    assert_eq!(errors.len(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = surface_point(rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
    let truth = SolutionState::new(origin, rng.random_range(-300.0..300.0));
    let frame = enu_rotation(origin).transpose();
    let observations = errors
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let el: f64 = rng.random_range(10f64.to_radians()..89f64.to_radians());
            let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = frame * Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            let range = rng.random_range(2.0e7..2.6e7);
            let pos = EcefPosition::from_vector(&(origin.to_vector() + dir * range));
            Observation {
                sat: SatelliteState {
                    sat_id: i as u32 + 1,
                    constellation: Constellation::ALL[i % 4],
                    band: if i % 3 == 0 { Band::L5 } else { Band::L1 },
                    pos,
                },
                pseudorange: pos.distance(origin) + truth.clock_bias + e,
                cn0: rng.random_range(20.0..50.0),
                avg_power: rng.random_range(-10.0..20.0),
                truth_error: Some(e),
            }
        })
        .collect();
    Epoch {
        epoch_id: seed,
        region_id: "test".into(),
        observations,
        initial_guess: enu_to_ecef(origin, &Vector3::new(40.0, -25.0, 0.0)),
        truth: Some(truth),
    }
}

/// Error-free epoch with satellites at `range` along each ECEF direction.
pub fn epoch_from_directions(receiver: EcefPosition, dirs: &[Vector3<f64>], range: f64) -> Epoch {
    let observations = dirs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let pos = EcefPosition::from_vector(&(receiver.to_vector() + d.normalize() * range));
            Observation {
                sat: SatelliteState {
                    sat_id: i as u32 + 1,
                    constellation: Constellation::Gps,
                    band: Band::L1,
                    pos,
                },
                pseudorange: range,
                cn0: 40.0,
                avg_power: 10.0,
                truth_error: Some(0.0),
            }
        })
        .collect();
    Epoch {
        epoch_id: 0,
        region_id: "test".into(),
        observations,
        initial_guess: receiver,
        truth: Some(SolutionState::new(receiver, 0.0)),
    }
}
