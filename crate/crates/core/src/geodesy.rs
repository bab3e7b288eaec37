//! Line-of-sight and local tangent-plane geometry.
//!
//! The local frame is built on a spherical Earth: "up" is the geocentric radial
//! direction at the origin. The simulator, the features and the metrics all use
//! the same frame, so no ellipsoid model is needed.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::EcefPosition;

/// Mean Earth radius used for synthetic scenes, meters.
pub const EARTH_RADIUS: f64 = 6_371_000.0;

/// Closest receiver/satellite separation accepted by geometry routines.
pub const MIN_SEPARATION: f64 = 1.0;

/// Horizontal magnitude below which azimuth is reported as zero.
const ZENITH_EPS: f64 = 1e-9;

/// Unit vector pointing from `receiver` to `sat`.
pub fn los_unit_vector(receiver: EcefPosition, sat: EcefPosition) -> Result<Vector3<f64>> {
    let d = sat.to_vector() - receiver.to_vector();
    let distance = d.norm();
    if !(distance >= MIN_SEPARATION) {
        return Err(Error::DegenerateGeometry { distance });
    }
    Ok(d / distance)
}

/// Rotation whose rows are the east, north and up axes at `origin`.
pub fn enu_rotation(origin: EcefPosition) -> Matrix3<f64> {
    let up = origin.to_vector().normalize();
    let lon = origin.y.atan2(origin.x);
    let east = Vector3::new(-lon.sin(), lon.cos(), 0.0);
    let north = up.cross(&east);
    Matrix3::from_rows(&[east.transpose(), north.transpose(), up.transpose()])
}

/// East/north/up coordinates of `point` relative to `origin`.
pub fn ecef_to_enu(origin: EcefPosition, point: EcefPosition) -> Vector3<f64> {
    enu_rotation(origin) * (point.to_vector() - origin.to_vector())
}

/// Inverse of [`ecef_to_enu`].
pub fn enu_to_ecef(origin: EcefPosition, enu: &Vector3<f64>) -> EcefPosition {
    let ecef = origin.to_vector() + enu_rotation(origin).transpose() * enu;
    EcefPosition::from_vector(&ecef)
}

/// Split a local vector into elevation above the horizon and azimuth
/// clockwise from north, both in radians.
pub fn enu_to_elevation_azimuth(enu: &Vector3<f64>) -> (f64, f64) {
    let norm = enu.norm();
    let elevation = (enu.z / norm).clamp(-1.0, 1.0).asin();
    let horizontal = enu.x.hypot(enu.y);
    let azimuth = if horizontal < ZENITH_EPS * norm.max(1.0) {
        0.0
    } else {
        enu.x.atan2(enu.y).rem_euclid(TAU)
    };
    // rem_euclid can round up to exactly TAU for tiny negative angles
    (elevation, if azimuth >= TAU { 0.0 } else { azimuth })
}

/// Elevation and azimuth of `sat` as seen from `receiver`, radians.
pub fn elevation_azimuth(receiver: EcefPosition, sat: EcefPosition) -> Result<(f64, f64)> {
    let los = los_unit_vector(receiver, sat)?;
    Ok(enu_to_elevation_azimuth(&(enu_rotation(receiver) * los)))
}

/// Edge weight between two satellites: cosine of the angle between their
/// line-of-sight directions, clamped at zero.
pub fn angular_proximity(
    receiver: EcefPosition,
    sat_i: EcefPosition,
    sat_j: EcefPosition,
) -> Result<f64> {
    let u_i = los_unit_vector(receiver, sat_i)?;
    let u_j = los_unit_vector(receiver, sat_j)?;
    Ok(u_i.dot(&u_j).clamp(0.0, 1.0))
}

/// Point on the spherical Earth at the given latitude and longitude (degrees).
pub fn surface_point(lat_deg: f64, lon_deg: f64) -> EcefPosition {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    EcefPosition::new(
        EARTH_RADIUS * lat.cos() * lon.cos(),
        EARTH_RADIUS * lat.cos() * lon.sin(),
        EARTH_RADIUS * lat.sin(),
    )
}
