//! Small dense linear-algebra helpers shared by the identification and
//! training code.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("normal matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("system is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> Result<(f64, f64), LinalgError> {
    let asym = (m - m.transpose()).amax();
    let scale = m.amax().max(1.0);
    if asym > 1e-9 * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let eig = m.clone().symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Symmetric positive semi-definite up to `-tol` on the smallest eigenvalue.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    matches!(symmetric_eigen_range(m), Ok((lo, _)) if lo >= -tol)
}

/// Symmetric positive definite.
pub fn is_pd(m: &DMatrix<f64>) -> bool {
    matches!(symmetric_eigen_range(m), Ok((lo, _)) if lo > 0.0)
}

/// Result of a ridge-regularized multi-output regression.
#[derive(Clone, Debug)]
pub struct RidgeFit {
    /// Coefficients, one column per output.
    pub coefficients: DMatrix<f64>,
    /// RMS of the residual over all samples and outputs.
    pub rms_residual: f64,
    /// Condition number of the regularized normal matrix.
    pub condition: f64,
}

/// Solves `min_W ||Phi W - T||^2 + ridge ||W||^2` through the normal equations.
///
/// Fails when the regularized normal matrix has condition number above
/// `max_condition`.
pub fn ridge_regression(
    phi: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    ridge: f64,
    max_condition: f64,
) -> Result<RidgeFit, LinalgError> {
    if phi.nrows() != targets.nrows() {
        return Err(LinalgError::Dimension(format!(
            "{} regressor rows vs {} target rows",
            phi.nrows(),
            targets.nrows()
        )));
    }
    let m = phi.ncols();
    let mut normal = phi.tr_mul(phi);
    for i in 0..m {
        normal[(i, i)] += ridge;
    }
    // Symmetrize exactly; tr_mul is symmetric up to rounding.
    let normal = (&normal + normal.transpose()) * 0.5;
    let (lo, hi) = symmetric_eigen_range(&normal)?;
    let condition = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
    if !(condition <= max_condition) {
        return Err(LinalgError::IllConditioned(condition));
    }
    let rhs = phi.tr_mul(targets);
    let chol = normal.cholesky().ok_or(LinalgError::Singular)?;
    let coefficients = chol.solve(&rhs);
    let resid = phi * &coefficients - targets;
    let count = (resid.nrows() * resid.ncols()).max(1) as f64;
    let rms_residual = (resid.norm_squared() / count).sqrt();
    Ok(RidgeFit {
        coefficients,
        rms_residual,
        condition,
    })
}

/// Central finite-difference gradient of a scalar function.
pub fn central_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_checks() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 2.0]));
        assert!(is_psd(&a, 1e-10));
        assert!(!is_pd(&a));
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!is_psd(&b, 1e-10));
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(symmetric_eigen_range(&c), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn square_system_interpolates() {
        let phi = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 4.0]);
        let w = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 2.0, 0.5, -3.0, 0.25]);
        let t = &phi * &w;
        let fit = ridge_regression(&phi, &t, 1e-12, 1e12).unwrap();
        assert!(fit.rms_residual < 1e-8);
        assert_relative_eq!(fit.coefficients, w, epsilon = 1e-8);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let t = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            ridge_regression(&phi, &t, 0.0, 1e12),
            Err(LinalgError::IllConditioned(_))
        ));
    }

    #[test]
    fn gradient_of_quadratic() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let g = central_gradient(|v| v[0] * v[0] + 3.0 * v[0] * v[1], &x, 1e-6);
        assert_relative_eq!(g[0], 2.0 - 6.0, epsilon = 1e-6);
        assert_relative_eq!(g[1], 3.0, epsilon = 1e-6);
    }
}
