//! Small dense helpers shared by the capacity evaluators and the optimizers.

use nalgebra::DMatrix;

/// Ridge added to a near-singular Gram matrix before taking its determinant.
pub const GRAM_RIDGE: f64 = 1e-12;

/// Log-determinant of a Gram matrix, with a flag telling whether the
/// ridge had to be added to make it positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub value: f64,
    pub degenerate: bool,
}

/// `ln det(x)` for a symmetric positive definite `x`, `None` otherwise.
pub fn logdet_spd(x: &DMatrix<f64>) -> Option<f64> {
    let chol = x.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..x.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Smallest accepted ratio between a squared Cholesky pivot and the largest
/// diagonal entry before a Gram matrix counts as rank deficient.
pub const PIVOT_RATIO: f64 = 1e-13;

/// `ln det(x)` of a symmetric positive semi-definite Gram matrix. Falls back
/// to `ln det(x + GRAM_RIDGE * max_diag * I)` when the factorization fails or
/// a pivot is negligible.
pub fn gram_logdet(x: &DMatrix<f64>) -> LogDet {
    let n = x.nrows();
    let scale = x.diagonal().amax();
    if let Some(chol) = x.clone().cholesky() {
        let l = chol.l_dirty();
        let pivots: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
        if pivots.iter().all(|&d| d.is_finite() && d * d > PIVOT_RATIO * scale) {
            return LogDet {
                value: 2.0 * pivots.iter().map(|d| d.ln()).sum::<f64>(),
                degenerate: false,
            };
        }
    }
    let ridge = GRAM_RIDGE * if scale > 0.0 { scale } else { 1.0 };
    let ridged = x + DMatrix::identity(n, n) * ridge;
    LogDet {
        value: logdet_spd(&ridged).unwrap_or(f64::NEG_INFINITY),
        degenerate: true,
    }
}

/// `ln det(b^T b)` from a QR factorization of `b`, which avoids squaring the
/// condition number. Degenerate cases go through [`gram_logdet`].
pub fn factor_logdet(b: &DMatrix<f64>) -> LogDet {
    let (m, n) = b.shape();
    if m < n || n == 0 {
        return gram_logdet(&(b.transpose() * b));
    }
    let scale = b.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
    let r = b.clone().qr().r();
    let pivots: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
    if pivots.iter().all(|&d| d.is_finite() && d * d > PIVOT_RATIO * scale) {
        LogDet {
            value: 2.0 * pivots.iter().map(|d| d.ln()).sum::<f64>(),
            degenerate: false,
        }
    } else {
        gram_logdet(&(b.transpose() * b))
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = x.clone().cholesky()?;
    let inv = chol.inverse();
    Some(symmetrize(&inv))
}

/// Symmetric inverse square root `x^{-1/2}` via eigendecomposition.
pub fn inv_sqrt_spd(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = symmetrize(x).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let q = &eig.eigenvectors;
    Some(symmetrize(&(q * d * q.transpose())))
}

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logdet_of_diagonal() {
        let x = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert_relative_eq!(logdet_spd(&x).unwrap(), (3.0f64).ln(), epsilon = 1e-14);
    }

    #[test]
    fn singular_gram_is_flagged() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ld = gram_logdet(&x);
        assert!(ld.degenerate);
        assert!(ld.value.is_finite());
    }

    #[test]
    fn inverse_square_root_squares_to_inverse() {
        let x = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = inv_sqrt_spd(&x).unwrap();
        let prod = &r * &x * &r;
        assert_relative_eq!(prod, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(softplus(800.0), 800.0, epsilon = 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
