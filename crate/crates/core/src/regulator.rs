//! Cost-function regulation: make the true location a stationary point of the
//! weighted cost, either by choosing weights in the kernel of the
//! error-scaled geometry or by subtracting the errors from the measurements.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::solver::{check_len, GeometryMatrix};
use crate::types::Epoch;

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// `4 x n` matrix whose column `i` is `e_i` times row `i` of the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledGeometry(DMatrix<f64>);

impl ScaledGeometry {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_scaled_geometry(h: &GeometryMatrix, errors: &[f64]) -> Result<ScaledGeometry> {
    check_len(h.rows(), errors.len())?;
    let mut m = h.matrix().transpose();
    for (i, e) in errors.iter().enumerate() {
        m.column_mut(i).scale_mut(*e);
    }
    Ok(ScaledGeometry(m))
}

/// Orthonormal basis of the kernel of `scaled`, one vector per column.
pub fn kernel_basis(scaled: &ScaledGeometry) -> DMatrix<f64> {
    let a = scaled.matrix();
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to n x n so the decomposition returns a complete right basis.
    let mut padded = DMatrix::zeros(n.max(a.nrows()), n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let threshold = RANK_TOL * sigma_max;
    let kernel_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| sigma_max == 0.0 || svd.singular_values[k] <= threshold)
        .collect();
    let mut basis = DMatrix::zeros(n, kernel_rows.len());
    for (col, &k) in kernel_rows.iter().enumerate() {
        basis.set_column(col, &v_t.row(k).transpose());
    }
    basis
}

/// Weights in the kernel of the scaled geometry, taken as the orthogonal
/// projection of the all-ones vector and rescaled to norm `sqrt(n)`.
pub fn regulate_weights(h: &GeometryMatrix, errors: &[f64]) -> Result<Vec<f64>> {
    let n = h.rows();
    project_onto_kernel(h, errors, &DVector::from_element(n, 1.0))
}

/// Like [`regulate_weights`] but projects an arbitrary seed vector.
pub fn project_onto_kernel(h: &GeometryMatrix, errors: &[f64], seed: &DVector<f64>) -> Result<Vec<f64>> {
    let scaled = build_scaled_geometry(h, errors)?;
    let n = h.rows();
    check_len(n, seed.len())?;
    let basis = kernel_basis(&scaled);
    if basis.ncols() == 0 {
        return Err(Error::InsufficientRedundancy);
    }
    let projection = &basis * (basis.transpose() * seed);
    let norm = projection.norm();
    let target = (n as f64).sqrt();
    if !(norm >= 1e-8 * target.max(seed.norm())) {
        return Err(Error::DegenerateProjection { norm });
    }
    Ok((projection * (target / norm)).iter().copied().collect())
}

/// Corrects every pseudo-range by the estimated error (`m' = m - e_hat`).
pub fn regulate_measurements(epoch: &Epoch, e_hat: &[f64]) -> Result<Epoch> {
    check_len(epoch.len(), e_hat.len())?;
    let mut corrected = epoch.clone();
    for (obs, e) in corrected.observations.iter_mut().zip(e_hat) {
        obs.pseudorange -= e;
    }
    Ok(corrected)
}
