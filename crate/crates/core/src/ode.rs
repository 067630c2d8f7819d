//! Filters from the Sturm-Liouville operator
//! D = d/dx((1 - x^2) x^2 d/dx) - 2x^2, discretized on x_i = i/T, i = 1..T.
//!
//! The self-adjoint form is differenced at half-grid points, giving a
//! symmetric tridiagonal matrix; p(x) = (1 - x^2) x^2 is clamped at zero past
//! x = 1 and the ghost values beyond both ends are zero (Dirichlet). Its
//! eigenpairs are computed by Sturm-sequence bisection and inverse iteration,
//! which stays accurate far below the point where dense Hankel eigenvectors
//! dissolve into rounding noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterBank, FilterMethod, MAX_EIGEN_FILTERS};
use crate::hankel::{self, NOISE_FLOOR};
use crate::linalg;

const BISECTION_MAX_ITERS: usize = 200;
const INVERSE_ITERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeFilterSpec {
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct OdeFilter {
    /// The discrete eigenvalue actually used (nearest to the requested one).
    pub lambda: f64,
    pub vector: DVector<f64>,
}

/// Symmetric tridiagonal discretization of D: (diagonal, off-diagonal).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag));
        for (i, &b) in self.off.iter().enumerate() {
            m[(i, i + 1)] = b;
            m[(i + 1, i)] = b;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.size();
        DVector::from_fn(n, |i, _| {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            s
        })
    }

    /// Number of eigenvalues strictly below `x` (Sturm count via LDL^T).
    fn count_below(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut d = self.diag[0] - x;
        for i in 0..self.size() {
            if i > 0 {
                d = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / d;
            }
            if d.abs() < pivmin {
                d = -pivmin;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.size();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    fn pivmin(&self) -> f64 {
        let scale = self.off.iter().map(|b| b * b).fold(1.0_f64, f64::max);
        f64::MIN_POSITIVE * scale
    }

    /// The eigenvalue with ascending 0-based index `idx`, by bisection.
    pub fn eigenvalue(&self, idx: usize) -> Result<f64> {
        let n = self.size();
        if idx >= n {
            return Err(Error::InvalidArgument(format!("eigenvalue index {idx} out of range for size {n}")));
        }
        let (mut lo, mut hi) = self.gershgorin();
        let pivmin = self.pivmin();
        let width = (hi - lo).abs().max(f64::MIN_POSITIVE);
        lo -= 1e-12 * width;
        hi += 1e-12 * width;
        for _ in 0..BISECTION_MAX_ITERS {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pivmin || mid == lo || mid == hi {
                return Ok(mid);
            }
            if self.count_below(mid, pivmin) > idx {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Err(Error::NoConvergence(format!("bisection for eigenvalue {idx}")))
    }

    /// Eigenvector for a converged eigenvalue by inverse iteration, kept
    /// orthogonal to `against` (previously found vectors of nearby eigenvalues).
    pub fn eigenvector(&self, lambda: f64, against: &[DVector<f64>]) -> Result<DVector<f64>> {
        let n = self.size();
        let scale = self.diag.iter().chain(&self.off).fold(0.0_f64, |a, b| a.max(b.abs()));
        let shift = lambda + f64::EPSILON * scale.max(1.0) * 4.0;
        // Deterministic start with no special symmetry.
        let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
        for _ in 0..INVERSE_ITERS {
            v = self.shifted_solve(shift, &v)?;
            for u in against {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
            let norm = v.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::NoConvergence(format!("inverse iteration at lambda = {lambda}")));
            }
            v /= norm;
        }
        linalg::normalize_sign(&mut v);
        Ok(v)
    }

    /// Solve (A - shift I) y = rhs by Gaussian elimination with partial pivoting.
    fn shifted_solve(&self, shift: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.size();
        let (glo, ghi) = self.gershgorin();
        let tiny = f64::EPSILON * glo.abs().max(ghi.abs()).max(1.0);
        // Row i after elimination: u0[i] x_i + u1[i] x_{i+1} + u2[i] x_{i+2}.
        let mut u0: Vec<f64> = self.diag.iter().map(|d| d - shift).collect();
        let mut u1: Vec<f64> = self.off.clone();
        u1.push(0.0);
        let mut u2 = vec![0.0; n];
        let mut lower: Vec<f64> = self.off.clone();
        let mut b = rhs.clone();
        for i in 0..n.saturating_sub(1) {
            if lower[i].abs() > u0[i].abs() {
                let (r0, r1, r2) = (u0[i], u1[i], u2[i]);
                let (s0, s1, s2) = (lower[i], u0[i + 1], u1[i + 1]);
                u0[i] = s0;
                u1[i] = s1;
                u2[i] = s2;
                let f = r0 / s0;
                u0[i + 1] = r1 - f * s1;
                u1[i + 1] = r2 - f * s2;
                b.swap_rows(i, i + 1);
                let bi = b[i];
                b[i + 1] -= f * bi;
            } else {
                if u0[i] == 0.0 {
                    u0[i] = tiny;
                }
                let f = lower[i] / u0[i];
                u0[i + 1] -= f * u1[i];
                u1[i + 1] -= f * u2[i];
                let bi = b[i];
                b[i + 1] -= f * bi;
            }
            lower[i] = 0.0;
        }
        if u0[n - 1] == 0.0 {
            u0[n - 1] = tiny;
        }
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= u1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= u2[i] * x[i + 2];
            }
            x[i] = s / u0[i];
        }
        Ok(x)
    }
}

/// The discretized operator on a grid of `size` points.
pub fn ode_operator(size: usize) -> Result<Tridiagonal> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!("ODE grid needs T >= 2, got {size}")));
    }
    let h = 1.0 / size as f64;
    let p = |x: f64| ((1.0 - x * x) * x * x).max(0.0);
    // p at x_{i -+ 1/2} for 1-based i; index 0 is p(x_{1/2}).
    let half: Vec<f64> = (0..=size).map(|i| p((i as f64 + 0.5) * h)).collect();
    let inv_h2 = 1.0 / (h * h);
    let diag = (1..=size)
        .map(|i| {
            let x = i as f64 * h;
            -(half[i - 1] + half[i]) * inv_h2 - 2.0 * x * x
        })
        .collect();
    let off = (1..size).map(|i| half[i] * inv_h2).collect();
    Ok(Tridiagonal { diag, off })
}

/// The `count` largest (least negative) eigenpairs, in descending order.
pub fn ode_spectrum(size: usize, count: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let op = ode_operator(size)?;
    if count == 0 || count > size {
        return Err(Error::InvalidArgument(format!("need 1 <= count <= T = {size}, got {count}")));
    }
    let mut lambdas = Vec::with_capacity(count);
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(count);
    for r in 0..count {
        let lambda = op.eigenvalue(size - 1 - r)?;
        let vec = op.eigenvector(lambda, &vectors)?;
        lambdas.push(lambda);
        vectors.push(vec);
    }
    Ok((lambdas, vectors))
}

/// Unit, sign-normalized eigenvector of the discretized operator whose
/// eigenvalue is nearest `spec.lambda`.
pub fn solve_ode_filter(spec: &OdeFilterSpec) -> Result<OdeFilter> {
    if !spec.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite, got {}", spec.lambda)));
    }
    let op = ode_operator(spec.size)?;
    let below = op.count_below(spec.lambda, op.pivmin());
    let mut best: Option<f64> = None;
    for idx in [below.checked_sub(1), Some(below)].into_iter().flatten() {
        if idx >= spec.size {
            continue;
        }
        let lam = op.eigenvalue(idx)?;
        if best.is_none_or(|b| (lam - spec.lambda).abs() < (b - spec.lambda).abs()) {
            best = Some(lam);
        }
    }
    let lambda = best.ok_or_else(|| Error::NoConvergence("no eigenvalue located".into()))?;
    let vector = op.eigenvector(lambda, &[])?;
    Ok(OdeFilter { lambda, vector })
}

/// Total variation sum |v_{i+1} - v_i|.
pub fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Bank of the top `k` ODE eigenfunctions.
///
/// Filters are placed in Hankel order where a Hankel eigenvalue sits above
/// the noise floor (each Hankel filter claims the unused ODE filter of
/// largest overlap, taking its sigma); the rest follow in operator order with
/// sigma extrapolated from a log-linear fit of the reliable Hankel spectrum.
pub fn ode_filter_bank(size: usize, k: usize) -> Result<FilterBank> {
    if k == 0 || k > size {
        return Err(Error::InvalidArgument(format!("ODE banks need 1 <= k <= T = {size}, got {k}")));
    }
    let (lambdas, vectors) = ode_spectrum(size, k)?;
    let reference = hankel::top_eigenpairs(&hankel::build_hankel(size)?, size.min(MAX_EIGEN_FILTERS))?;
    let usable = reference.usable();

    let mut taken = vec![false; k];
    let mut order = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for j in 0..usable.min(k) {
        let phi = reference.phi(j);
        let best = (0..k)
            .filter(|&c| !taken[c])
            .max_by(|&a, &b| phi.dot(&vectors[a]).abs().total_cmp(&phi.dot(&vectors[b]).abs()))
            .expect("k > j leaves a free ODE filter");
        taken[best] = true;
        order.push(best);
        sigmas.push(reference.sigmas()[j]);
    }
    let (intercept, slope) = log_linear_fit(&reference.sigmas()[..usable]);
    let mut extrapolated = vec![false; order.len()];
    for c in (0..k).filter(|&c| !taken[c]) {
        let pos = order.len();
        order.push(c);
        sigmas.push((intercept + slope * pos as f64).exp());
        extrapolated.push(true);
    }

    let mut phis = DMatrix::zeros(size, k);
    for (pos, &c) in order.iter().enumerate() {
        phis.set_column(pos, &vectors[c]);
    }
    let ordered_lambdas = order.iter().map(|&c| lambdas[c]).collect();
    FilterBank::from_parts(FilterMethod::Ode, sigmas, phis)?
        .with_lambdas(ordered_lambdas)?
        .with_extrapolated(extrapolated)
}

/// Least-squares fit log sigma_j = a + b j over the given (positive) values.
fn log_linear_fit(sigmas: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = sigmas
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > NOISE_FLOOR)
        .map(|(j, &s)| (j as f64, s.ln()))
        .collect();
    if pts.len() < 2 {
        let a = pts.first().map(|p| p.1).unwrap_or(NOISE_FLOOR.ln());
        return (a, -1.0);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_is_symmetric_and_nonpositive() {
        let op = ode_operator(40).unwrap();
        let dense = op.to_dense();
        assert_eq!(dense, dense.transpose());
        let (vals, _) = linalg::symmetric_eigen(&dense).unwrap();
        assert!(vals.iter().all(|&v| v <= 1e-9));
        assert!(ode_operator(1).is_err());
    }

    #[test]
    fn bisection_matches_dense_eigenvalues() {
        let op = ode_operator(60).unwrap();
        let (vals, vecs) = linalg::symmetric_eigen(&op.to_dense()).unwrap();
        let (lams, ours) = ode_spectrum(60, 8).unwrap();
        let scale = vals.amax();
        for r in 0..8 {
            assert!((lams[r] - vals[r]).abs() <= 1e-12 * scale, "r={r}");
            let cos = vecs.column(r).dot(&ours[r]);
            assert!((cos - 1.0).abs() < 1e-9, "r={r} cos={cos}");
        }
    }

    #[test]
    fn eigen_residual_small() {
        let op = ode_operator(500).unwrap();
        let (lams, vecs) = ode_spectrum(500, 10).unwrap();
        let scale = op.diag.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for (l, v) in lams.iter().zip(&vecs) {
            assert!((op.apply(v) - v * *l).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn solve_returns_nearest_unit_vector() {
        let (lams, _) = ode_spectrum(200, 5).unwrap();
        let target = lams[2] + 0.1 * (lams[1] - lams[2]);
        let f = solve_ode_filter(&OdeFilterSpec { lambda: target, size: 200 }).unwrap();
        assert!((f.lambda - lams[2]).abs() < 1e-9 * lams[2].abs().max(1.0));
        assert!((f.vector.norm() - 1.0).abs() < 1e-12);
        let first = f.vector.iter().find(|x| x.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
        assert!(solve_ode_filter(&OdeFilterSpec { lambda: f64::NAN, size: 200 }).is_err());
        // Far outside the spectrum still resolves to an end eigenvalue.
        assert!(solve_ode_filter(&OdeFilterSpec { lambda: 1e9, size: 50 }).is_ok());
    }

    #[test]
    fn bank_is_orthonormal_and_flags_extrapolation() {
        let bank = ode_filter_bank(300, 30).unwrap();
        let g = bank.phis().transpose() * bank.phis();
        assert!((g - DMatrix::identity(30, 30)).amax() < 1e-8);
        assert_eq!(bank.lambdas().unwrap().len(), 30);
        let usable = hankel::top_eigenpairs(&hankel::build_hankel(300).unwrap(), 30).unwrap().usable();
        assert!(bank.extrapolated()[..usable].iter().all(|&e| !e));
        assert!(bank.extrapolated()[usable..].iter().all(|&e| e));
        assert!(bank.sigmas()[usable..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn total_variation_basics() {
        assert_eq!(total_variation(&[0.0, 1.0, -1.0]), 3.0);
        assert_eq!(total_variation(&[2.0]), 0.0);
    }
}
