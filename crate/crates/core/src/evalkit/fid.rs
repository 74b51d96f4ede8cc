use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Ridge added to covariances before the square root.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
const DB_MAX_ITERS: usize = 100;
const DB_TOL: f64 = 1e-14;

/// Principal square root by the Denman–Beavers iteration. Converges for
/// matrices with no eigenvalues on the closed negative real axis, which
/// includes products of SPD matrices.
pub fn sqrtm_denman_beavers(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Numerical("square root of a non-square matrix".into()));
    }
    let mut y = m.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..DB_MAX_ITERS {
        let yi = y.clone().try_inverse().ok_or_else(|| Error::Numerical("singular iterate in matrix square root".into()))?;
        let zi = z.clone().try_inverse().ok_or_else(|| Error::Numerical("singular iterate in matrix square root".into()))?;
        let y_next = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("matrix square root diverged".into()));
        }
        if delta <= DB_TOL * y.norm().max(1.0) {
            break;
        }
    }
    Ok(y)
}

/// Square root of a symmetric PSD matrix via its eigendecomposition.
pub fn sqrtm_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Row-wise mean and unbiased covariance of `(n, e)` features.
pub fn moments(features: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Numerical("FID needs at least two samples per set".into()));
    }
    let mean = features.row_mean().transpose();
    let centered = DMatrix::from_fn(n, features.ncols(), |r, c| features[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½)`.
pub fn fid_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    let e = mu_a.len();
    if mu_b.len() != e || cov_a.shape() != (e, e) || cov_b.shape() != (e, e) {
        return Err(Error::Numerical("FID moments have inconsistent sizes".into()));
    }
    for cov in [cov_a, cov_b] {
        let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min < -1e-9 * cov.norm().max(1.0) {
            return Err(Error::Numerical(format!("covariance is not PSD (min eigenvalue {min})")));
        }
    }
    let diff = (mu_a - mu_b).norm_squared();
    let product = cov_a * cov_b;
    let root = sqrtm_denman_beavers(&product)?;
    let value = diff + cov_a.trace() + cov_b.trace() - 2.0 * root.trace();
    if !value.is_finite() {
        return Err(Error::Numerical("FID is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// FID between two feature sets; both covariances get a small ridge so
/// sets smaller than the embedding width stay well-posed.
pub fn fid(features_a: &DMatrix<f64>, features_b: &DMatrix<f64>) -> Result<f64> {
    if features_a.ncols() != features_b.ncols() {
        return Err(Error::Numerical("feature sets have different widths".into()));
    }
    let (ma, ca) = moments(features_a)?;
    let (mb, cb) = moments(features_b)?;
    let ridge = DMatrix::<f64>::identity(ca.nrows(), ca.nrows()) * COVARIANCE_RIDGE;
    fid_from_moments(&ma, &(ca + &ridge), &mb, &(cb + ridge))
}
