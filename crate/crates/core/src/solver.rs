//! Pseudo-range model and the iterative weighted-least-squares position solver.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{ecef_to_enu, los_unit_vector, MIN_SEPARATION};
use crate::types::{EcefPosition, Epoch, SatelliteState, SolutionState};

/// Largest condition number accepted for the 4x4 normal matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Jacobian of the computed pseudo-ranges; row `i` is `(-u_i, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMatrix(DMatrix<f64>);

impl GeometryMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "geometry matrix needs 4 columns, got {}",
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsConfig {
    pub max_iterations: usize,
    /// Stop once the update norm drops below this many meters.
    pub convergence_tol: f64,
}

impl Default for WlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_tol: 1e-4,
        }
    }
}

impl WlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.convergence_tol > 0.0) {
            return Err(Error::Config(format!("invalid WLS config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WlsStatus {
    Converged,
    /// The iteration cap was hit with the last update still at least ten
    /// times the tolerance. The state is the last iterate.
    NonConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsSolution {
    pub state: SolutionState,
    pub iterations: usize,
    pub last_step: f64,
    pub status: WlsStatus,
}

impl WlsSolution {
    pub fn converged(&self) -> bool {
        self.status == WlsStatus::Converged
    }
}

pub fn computed_pseudorange(state: &SolutionState, sat: &SatelliteState) -> Result<f64> {
    let distance = state.pos.distance(sat.pos);
    if !(distance >= MIN_SEPARATION) {
        return Err(Error::DegenerateGeometry { distance });
    }
    Ok(distance + state.clock_bias)
}

/// Computed-minus-measured pseudo-range for every observation.
pub fn residuals(epoch: &Epoch, state: &SolutionState) -> Result<Vec<f64>> {
    epoch
        .observations
        .iter()
        .map(|o| Ok(computed_pseudorange(state, &o.sat)? - o.pseudorange))
        .collect()
}

/// Weighted sum of squared residuals.
pub fn cost(epoch: &Epoch, state: &SolutionState, weights: &[f64]) -> Result<f64> {
    check_len(epoch.len(), weights.len())?;
    let r = residuals(epoch, state)?;
    Ok(r.iter().zip(weights).map(|(r, w)| w * r * r).sum())
}

pub fn geometry_matrix(epoch: &Epoch, state: &SolutionState) -> Result<GeometryMatrix> {
    let n = epoch.len();
    let mut h = DMatrix::zeros(n, 4);
    for (i, obs) in epoch.observations.iter().enumerate() {
        let u = los_unit_vector(state.pos, obs.sat.pos)?;
        h[(i, 0)] = -u.x;
        h[(i, 1)] = -u.y;
        h[(i, 2)] = -u.z;
        h[(i, 3)] = 1.0;
    }
    Ok(GeometryMatrix(h))
}

/// Gauss-Newton iterations on the weighted cost, recomputing the geometry and
/// residuals at every iterate.
pub fn wls_solve(
    epoch: &Epoch,
    weights: &[f64],
    initial: SolutionState,
    config: &WlsConfig,
) -> Result<WlsSolution> {
    if epoch.len() < 4 {
        return Err(Error::InsufficientMeasurements { found: epoch.len() });
    }
    check_len(epoch.len(), weights.len())?;
    config.validate()?;

    let w = DVector::from_column_slice(weights);
    let mut state = initial;
    let mut last_step = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let h = geometry_matrix(epoch, &state)?;
        let r = DVector::from_vec(residuals(epoch, &state)?);
        let step = gauss_newton_step(h.matrix(), &w, &r)?;
        state = SolutionState::new(
            EcefPosition::new(
                state.pos.x + step[0],
                state.pos.y + step[1],
                state.pos.z + step[2],
            ),
            state.clock_bias + step[3],
        );
        last_step = step.norm();
        if last_step < config.convergence_tol {
            return Ok(WlsSolution {
                state,
                iterations: iteration,
                last_step,
                status: WlsStatus::Converged,
            });
        }
    }
    let status = if last_step >= 10.0 * config.convergence_tol {
        WlsStatus::NonConvergence
    } else {
        WlsStatus::Converged
    };
    Ok(WlsSolution {
        state,
        iterations: config.max_iterations,
        last_step,
        status,
    })
}

/// Solves `(H^T W H) dx = -H^T W r`.
fn gauss_newton_step(h: &DMatrix<f64>, w: &DVector<f64>, r: &DVector<f64>) -> Result<Vector4<f64>> {
    let mut normal = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for i in 0..h.nrows() {
        let row = Vector4::new(h[(i, 0)], h[(i, 1)], h[(i, 2)], h[(i, 3)]);
        normal += row * row.transpose() * w[i];
        rhs -= row * (w[i] * r[i]);
    }
    let sv = normal.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = max / min;
    if !(min > 0.0) || !(condition <= MAX_CONDITION) {
        return Err(Error::SingularNormalMatrix { condition });
    }
    normal
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularNormalMatrix { condition })
}

/// Gradient of the weighted cost up to a factor of two, `H^T W r`.
pub fn cost_gradient(epoch: &Epoch, state: &SolutionState, weights: &[f64]) -> Result<Vector4<f64>> {
    check_len(epoch.len(), weights.len())?;
    let h = geometry_matrix(epoch, state)?;
    let r = residuals(epoch, state)?;
    let mut g = Vector4::zeros();
    for i in 0..epoch.len() {
        for j in 0..4 {
            g[j] += h.matrix()[(i, j)] * weights[i] * r[i];
        }
    }
    Ok(g)
}

/// East-north distance between a fix and the truth, in the truth's local frame.
pub fn horizontal_error(predicted: &SolutionState, truth: &SolutionState) -> f64 {
    let enu = ecef_to_enu(truth.pos, predicted.pos);
    enu.x.hypot(enu.y)
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch { expected, found });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::geodesy::{enu_to_ecef, surface_point};
    use crate::test_support::{epoch_from_directions, random_epoch};

    fn sat(pos: EcefPosition) -> SatelliteState {
        SatelliteState {
            sat_id: 1,
            constellation: crate::types::Constellation::Gps,
            band: crate::types::Band::L1,
            pos,
        }
    }

    #[test]
    fn pseudorange_is_distance_plus_bias() {
        let s = sat(EcefPosition::new(26_560_000.0, 0.0, 0.0));
        let mut state = SolutionState::default();
        assert_eq!(computed_pseudorange(&state, &s).unwrap(), 26_560_000.0);
        state.clock_bias = 100.0;
        assert_eq!(computed_pseudorange(&state, &s).unwrap(), 26_560_100.0);
    }

    #[test]
    fn pseudorange_matches_compensated_distance() {
        // Split each coordinate difference into high and low parts before squaring.
        for seed in 0..50u64 {
            let epoch = random_epoch(seed, 8, &[0.0; 8]);
            let truth = epoch.truth.unwrap();
            for obs in &epoch.observations {
                let parts = [
                    (obs.sat.pos.x, truth.pos.x),
                    (obs.sat.pos.y, truth.pos.y),
                    (obs.sat.pos.z, truth.pos.z),
                ];
                let mut hi_sum = 0.0f64;
                let mut lo_sum = 0.0f64;
                for (a, b) in parts {
                    let d = a - b;
                    let sq = d * d;
                    let err = d.mul_add(d, -sq);
                    hi_sum += sq;
                    lo_sum += err;
                }
                let approx = (hi_sum + lo_sum).sqrt() + truth.clock_bias;
                let got = computed_pseudorange(&truth, &obs.sat).unwrap();
                assert!((got - approx).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn residual_sign_convention() {
        let epoch = random_epoch(3, 2, &[5.0, -3.0]);
        let r = residuals(&epoch, &epoch.truth.unwrap()).unwrap();
        assert!((r[0] + 5.0).abs() < 1e-6 && (r[1] - 3.0).abs() < 1e-6);

        let clean = random_epoch(3, 6, &[0.0; 6]);
        let r = residuals(&clean, &clean.truth.unwrap()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn cost_values() {
        let epoch = random_epoch(4, 1, &[-3.0]);
        let c = cost(&epoch, &epoch.truth.unwrap(), &[1.0]).unwrap();
        assert!((c - 9.0).abs() < 1e-6);
        assert!(matches!(
            cost(&epoch, &epoch.truth.unwrap(), &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn cost_matches_naive_sum() {
        for seed in 0..20 {
            let errors: Vec<f64> = (0..7).map(|i| (i as f64 - 3.0) * 4.5).collect();
            let epoch = random_epoch(seed, 7, &errors);
            let mut state = epoch.truth.unwrap();
            state.pos.x += 12.0;
            state.clock_bias -= 7.0;
            let weights: Vec<f64> = (0..7).map(|i| 0.5 + i as f64).collect();
            let mut naive = 0.0;
            for (obs, w) in epoch.observations.iter().zip(&weights) {
                let d = ((obs.sat.pos.x - state.pos.x).powi(2)
                    + (obs.sat.pos.y - state.pos.y).powi(2)
                    + (obs.sat.pos.z - state.pos.z).powi(2))
                .sqrt();
                naive += w * (d + state.clock_bias - obs.pseudorange).powi(2);
            }
            let got = cost(&epoch, &state, &weights).unwrap();
            assert!((got - naive).abs() <= 1e-9 * naive.max(1.0));
        }
    }

    #[test]
    fn geometry_matches_finite_differences() {
        let epoch = random_epoch(11, 9, &[0.0; 9]);
        let state = epoch.truth.unwrap();
        let h = geometry_matrix(&epoch, &state).unwrap();
        let step = 0.1;
        for (i, obs) in epoch.observations.iter().enumerate() {
            for j in 0..4 {
                let shifted = |delta: f64| {
                    let mut s = state;
                    match j {
                        0 => s.pos.x += delta,
                        1 => s.pos.y += delta,
                        2 => s.pos.z += delta,
                        _ => s.clock_bias += delta,
                    }
                    computed_pseudorange(&s, &obs.sat).unwrap()
                };
                let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
                assert!((h.matrix()[(i, j)] - fd).abs() < 1e-6, "H[{i},{j}]");
            }
            assert_eq!(h.matrix()[(i, 3)], 1.0);
            let dir = Vector3::new(h.matrix()[(i, 0)], h.matrix()[(i, 1)], h.matrix()[(i, 2)]);
            assert!((dir.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_geometry_row() {
        let epoch = epoch_from_directions(
            EcefPosition::default(),
            &[Vector3::new(1.0, 0.0, 0.0)],
            2.0e7,
        );
        let h = geometry_matrix(&epoch, &SolutionState::default()).unwrap();
        assert_eq!(h.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn noiseless_fix_recovers_truth() {
        let epoch = random_epoch(21, 8, &[0.0; 8]);
        let truth = epoch.truth.unwrap();
        let mut guess = truth;
        guess.pos = enu_to_ecef(truth.pos, &Vector3::new(600.0, -700.0, 400.0));
        guess.clock_bias = 0.0;
        let sol = wls_solve(&epoch, &[1.0; 8], guess, &WlsConfig::default()).unwrap();
        assert!(sol.converged());
        assert!(sol.state.pos.distance(truth.pos) < 1e-6);
        assert!((sol.state.clock_bias - truth.clock_bias).abs() < 1e-6);
    }

    #[test]
    fn collinear_satellites_are_singular() {
        let origin = surface_point(10.0, 20.0);
        let up = origin.to_vector().normalize();
        let dirs = vec![up; 6];
        let epoch = epoch_from_directions(origin, &dirs, 2.0e7);
        let res = wls_solve(
            &epoch,
            &[1.0; 6],
            SolutionState::new(origin, 0.0),
            &WlsConfig::default(),
        );
        assert!(matches!(res, Err(Error::SingularNormalMatrix { .. })));
    }

    #[test]
    fn too_few_measurements() {
        let epoch = random_epoch(1, 3, &[0.0; 3]);
        let res = wls_solve(&epoch, &[1.0; 3], epoch.truth.unwrap(), &WlsConfig::default());
        assert!(matches!(res, Err(Error::InsufficientMeasurements { found: 3 })));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let epoch = random_epoch(5, 8, &[30.0, -20.0, 10.0, 0.0, 5.0, 60.0, -4.0, 1.0]);
        let truth = epoch.truth.unwrap();
        let mut guess = truth;
        guess.pos = enu_to_ecef(truth.pos, &Vector3::new(5.0e5, 0.0, 0.0));
        let config = WlsConfig {
            max_iterations: 1,
            convergence_tol: 1e-4,
        };
        let sol = wls_solve(&epoch, &[1.0; 8], guess, &config).unwrap();
        assert_eq!(sol.status, WlsStatus::NonConvergence);
        assert!(sol.state.pos.distance(guess.pos) > 1.0);
    }

    #[test]
    fn horizontal_error_ignores_vertical() {
        let truth = SolutionState::new(surface_point(45.0, 7.0), 12.0);
        assert_eq!(horizontal_error(&truth, &truth), 0.0);
        let up = SolutionState::new(enu_to_ecef(truth.pos, &Vector3::new(0.0, 0.0, 25.0)), 0.0);
        assert!(horizontal_error(&up, &truth) < 1e-9);
        let off = SolutionState::new(enu_to_ecef(truth.pos, &Vector3::new(3.0, 4.0, 0.0)), 0.0);
        assert!((horizontal_error(&off, &truth) - 5.0).abs() < 1e-9);
    }
}
