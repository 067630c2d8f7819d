//! Dense linear-algebra helpers shared by the filter, learner and simulator modules.

use nalgebra::linalg::{Cholesky, SymmetricEigen};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entries below this magnitude never decide an eigenvector's sign.
pub const SIGN_EPS: f64 = 1e-12;

const EIGEN_MAX_ITERS: usize = 100_000;

/// Flip `v` so its first coordinate with |value| > 1e-12 is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > SIGN_EPS) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues in nonincreasing
/// order, eigenvectors as sign-normalized columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix passed to eigensolver".into()));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or_else(|| Error::NoConvergence(format!("symmetric QR on {n}x{n} matrix")))?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in solver order, so the result is deterministic.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        normalize_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

/// Solve `X (gram + ridge I) = cross` for `X` (cross is m x p, gram is p x p SPD).
pub fn ridge_solve(gram: &DMatrix<f64>, cross: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let p = gram.nrows();
    if cross.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "ridge_solve cross-covariance columns",
            expected: p,
            got: cross.ncols(),
        });
    }
    let mut system = gram.clone();
    for i in 0..p {
        system[(i, i)] += ridge;
    }
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::Singular(format!("normal equations (ridge = {ridge:e}) not positive definite")))?;
    let solved = chol.solve(&cross.transpose());
    Ok(solved.transpose())
}

/// Minimum-norm least-squares solution `cross * gram^+` via the eigendecomposition of `gram`.
pub fn pinv_solve(gram: &DMatrix<f64>, cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen(gram)?;
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return Err(Error::Singular("feature matrix is identically zero".into()));
    }
    let cutoff = top * gram.nrows() as f64 * f64::EPSILON;
    let projected = cross * &vectors;
    let mut scaled = projected.clone();
    for (j, &s) in values.iter().enumerate() {
        let inv = if s > cutoff { 1.0 / s } else { 0.0 };
        scaled.column_mut(j).scale_mut(inv);
    }
    Ok(scaled * vectors.transpose())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Rescale `m` onto the Frobenius ball of radius `radius` when it lies outside.
pub fn project_frobenius(m: &mut DMatrix<f64>, radius: f64) {
    let norm = m.norm();
    if norm > radius {
        if radius == 0.0 {
            m.fill(0.0);
        } else {
            m.scale_mut(radius / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_orders_and_normalizes() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert_eq!(vals.as_slice(), &[5.0, 2.0, -1.0]);
        for j in 0..3 {
            let col = vecs.column(j);
            let first = col.iter().find(|x| x.abs() > SIGN_EPS).unwrap();
            assert!(*first > 0.0);
        }
        assert!((vecs[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sign_rule_skips_tiny_leading_entries() {
        let mut v = DVector::from_vec(vec![1e-14, -0.5, 0.3]);
        normalize_sign(&mut v);
        assert!(v[1] > 0.0);
        let mut zero = DVector::zeros(2);
        normalize_sign(&mut zero);
        assert_eq!(zero, DVector::zeros(2));
    }

    #[test]
    fn non_square_rejected() {
        assert!(symmetric_eigen(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn ridge_and_pinv_agree_on_well_posed_system() {
        let gram = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let cross = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let a = ridge_solve(&gram, &cross, 0.0).unwrap();
        let b = pinv_solve(&gram, &cross).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn pinv_handles_rank_deficiency() {
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let cross = DMatrix::from_row_slice(1, 2, &[3.0, 0.0]);
        let x = pinv_solve(&gram, &cross).unwrap();
        assert!((x[(0, 0)] - 3.0).abs() < 1e-12);
        assert_eq!(x[(0, 1)], 0.0);
        assert!(ridge_solve(&gram, &cross, 0.0).is_err());
        assert!(pinv_solve(&DMatrix::zeros(2, 2), &cross).is_err());
    }

    #[test]
    fn projection_onto_ball() {
        let mut m = DMatrix::from_element(2, 2, 1.0);
        project_frobenius(&mut m, 1.0);
        assert!((m.norm() - 1.0).abs() < 1e-15);
        let mut inside = DMatrix::from_element(1, 1, 0.5);
        project_frobenius(&mut inside, 1.0);
        assert_eq!(inside[(0, 0)], 0.5);
        project_frobenius(&mut inside, 0.0);
        assert_eq!(inside[(0, 0)], 0.0);
    }
}
