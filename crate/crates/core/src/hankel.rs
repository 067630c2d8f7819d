//! The Hankel matrix Z_T, the curve mu(alpha) whose second moment it is, and
//! the spectral quantities built on its eigendecomposition.
//!
//! Public functions take and return 0-based indices; filter `j` in the
//! docs below is column `j - 1` of [`Spectrum::phis`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fft::{FftPlan, C64};
use crate::linalg;
use crate::rng;

/// Eigenvalues at or below this are treated as double-precision noise.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Above this size `top_eigenpairs` switches from the dense solver to subspace iteration.
pub const DENSE_LIMIT: usize = 600;

/// Which Hankel family a matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HankelKind {
    /// Z_T, entries 2 / ((i+j)^3 - (i+j)).
    Wave,
    /// H_{T,theta}, entries 1 / (i + j + theta), theta in {-1, 0, 1}.
    Hilbert(i32),
}

#[derive(Debug, Clone)]
pub struct HankelMatrix {
    kind: HankelKind,
    entries: DMatrix<f64>,
}

impl HankelMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn kind(&self) -> HankelKind {
        self.kind
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Generating sequence h with entry (r, c) = h[r + c], length 2T - 1.
    pub fn sequence(&self) -> Vec<f64> {
        let t = self.size();
        (0..2 * t - 1)
            .map(|s| {
                let r = s.min(t - 1);
                self.entries[(r, s - r)]
            })
            .collect()
    }
}

/// Matrix-free product with a T x T Hankel matrix via FFT correlation.
pub struct HankelOperator {
    size: usize,
    plan: FftPlan,
    spectrum: Vec<C64>,
}

impl HankelOperator {
    pub fn new(h: &HankelMatrix) -> Self {
        let size = h.size();
        let seq = h.sequence();
        let plan = FftPlan::for_convolution(seq.len(), size);
        let spectrum = plan.forward_real(&seq);
        Self { size, plan, spectrum }
    }

    /// (H v)_i = sum_j h[i + j] v_j = (h * reverse(v))[i + T - 1].
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let t = self.size;
        let rev: Vec<f64> = v.iter().rev().copied().collect();
        let mut buf = self.plan.forward_real(&rev);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.plan.inverse(&mut buf);
        buf[t - 1..2 * t - 1].iter().map(|c| c.re).collect()
    }
}

/// Z_T with 1-based entry (i, j) equal to 2 / ((i+j)^3 - (i+j)).
pub fn build_hankel(size: usize) -> Result<HankelMatrix> {
    if size == 0 {
        return Err(Error::InvalidArgument("Hankel size T must be >= 1".into()));
    }
    let entries = DMatrix::from_fn(size, size, |r, c| {
        let s = (r + c + 2) as u64;
        2.0 / (s * s * s - s) as f64
    });
    Ok(HankelMatrix {
        kind: HankelKind::Wave,
        entries,
    })
}

/// Hilbert matrix H_{T,theta} with entries 1 / (i + j + theta).
pub fn build_hilbert(size: usize, theta: i32) -> Result<HankelMatrix> {
    if size == 0 {
        return Err(Error::InvalidArgument("Hilbert size T must be >= 1".into()));
    }
    if !(-1..=1).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "Hilbert shift theta must be -1, 0 or 1, got {theta}"
        )));
    }
    let entries = DMatrix::from_fn(size, size, |r, c| {
        1.0 / ((r + c + 2) as i64 + theta as i64) as f64
    });
    Ok(HankelMatrix {
        kind: HankelKind::Hilbert(theta),
        entries,
    })
}

/// The vector mu(alpha) with 1-based entry i equal to (alpha - 1) alpha^(i-1).
#[derive(Debug, Clone)]
pub struct MuVector {
    pub alpha: f64,
    pub entries: DVector<f64>,
}

pub fn mu_curve(alpha: f64, size: usize) -> Result<MuVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("mu length T must be >= 1".into()));
    }
    // powi(0) == 1 for alpha == 0, which is the 0^0 = 1 convention.
    let entries = DVector::from_fn(size, |i, _| (alpha - 1.0) * alpha.powi(i as i32));
    Ok(MuVector { alpha, entries })
}

/// Leading eigenpairs of a Hankel matrix, sign-normalized.
#[derive(Debug, Clone)]
pub struct Spectrum {
    sigmas: Vec<f64>,
    phis: DMatrix<f64>,
    source_size: usize,
}

impl Spectrum {
    pub fn from_parts(sigmas: Vec<f64>, phis: DMatrix<f64>) -> Result<Self> {
        check_dim("spectrum eigenvector count", sigmas.len(), phis.ncols())?;
        let source_size = phis.nrows();
        Ok(Self {
            sigmas,
            phis,
            source_size,
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Eigenvectors as columns (T x k).
    pub fn phis(&self) -> &DMatrix<f64> {
        &self.phis
    }

    pub fn phi(&self, j: usize) -> DVector<f64> {
        self.phis.column(j).into_owned()
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.source_size
    }

    /// Number of leading eigenvalues strictly above [`NOISE_FLOOR`].
    pub fn usable(&self) -> usize {
        self.sigmas.iter().take_while(|&&s| s > NOISE_FLOOR).count()
    }

    pub fn truncated(&self, k: usize) -> Spectrum {
        let k = k.min(self.len());
        Spectrum {
            sigmas: self.sigmas[..k].to_vec(),
            phis: self.phis.columns(0, k).into_owned(),
            source_size: self.source_size,
        }
    }
}

/// All T eigenpairs.
pub fn full_spectrum(h: &HankelMatrix) -> Result<Spectrum> {
    let (values, vectors) = linalg::symmetric_eigen(h.entries())?;
    Spectrum::from_parts(values.iter().copied().collect(), vectors)
}

/// Top `k` eigenpairs in nonincreasing eigenvalue order.
///
/// Small or wide requests use the dense solver; otherwise block subspace
/// iteration with FFT matrix products, which agrees with the dense path on
/// every eigenpair above [`NOISE_FLOOR`].
pub fn top_eigenpairs(h: &HankelMatrix, k: usize) -> Result<Spectrum> {
    if k == 0 || k > h.size() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= T = {}, got k = {k}",
            h.size()
        )));
    }
    if h.size() <= DENSE_LIMIT || 4 * k > h.size() {
        Ok(full_spectrum(h)?.truncated(k))
    } else {
        top_eigenpairs_iterative(h, k)
    }
}

const SUBSPACE_PAD: usize = 10;
const SUBSPACE_MAX_ITERS: usize = 200;
const SUBSPACE_SEED: u64 = 0x5a17_c0de;

/// Block subspace iteration with Rayleigh-Ritz extraction.
///
/// Converged when every Ritz pair above the noise floor has residual at most
/// 1e-13 relative to the top eigenvalue. Pairs at the floor are not iterated
/// to convergence; they are orthonormal but otherwise arbitrary, exactly as
/// with the dense solver.
pub fn top_eigenpairs_iterative(h: &HankelMatrix, k: usize) -> Result<Spectrum> {
    let t = h.size();
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= T = {t}, got k = {k}")));
    }
    let p = (k + SUBSPACE_PAD).min(t);
    let op = HankelOperator::new(h);
    let apply_block = |q: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(t, q.ncols());
        for c in 0..q.ncols() {
            let col = op.apply(q.column(c).as_slice());
            out.set_column(c, &DVector::from_vec(col));
        }
        out
    };
    let mut stream = rng::stream(SUBSPACE_SEED, t as u64);
    let mut q = rng::gaussian_matrix(&mut stream, t, p, 1.0).qr().q();
    for _ in 0..SUBSPACE_MAX_ITERS {
        let w = apply_block(&q);
        let small = q.transpose() * &w;
        let small = (&small + small.transpose()) * 0.5;
        let (theta, s) = linalg::symmetric_eigen(&small)?;
        let ritz = &q * &s;
        let zw = &w * &s;
        let scale = theta[0].abs().max(f64::MIN_POSITIVE);
        let converged = (0..k)
            .filter(|&j| theta[j] > NOISE_FLOOR)
            .all(|j| (zw.column(j) - ritz.column(j) * theta[j]).norm() <= 1e-13 * scale);
        if converged {
            let mut phis = ritz.columns(0, k).into_owned();
            for j in 0..k {
                let mut col = phis.column(j).into_owned();
                col /= col.norm();
                linalg::normalize_sign(&mut col);
                phis.set_column(j, &col);
            }
            return Spectrum::from_parts(theta.iter().take(k).copied().collect(), phis);
        }
        q = zw.qr().q();
    }
    Err(Error::NoConvergence(format!(
        "subspace iteration for top {k} eigenpairs of a {t}x{t} Hankel matrix"
    )))
}

/// Sum of eigenvalues beyond the first `k`, negative numerical values clamped to 0.
pub fn spectral_tail_sum(full: &Spectrum, k: usize) -> Result<f64> {
    if !full.is_full() {
        return Err(Error::InvalidArgument(format!(
            "tail sum needs the full spectrum ({} of {} eigenpairs given)",
            full.len(),
            full.source_size()
        )));
    }
    if k > full.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds T = {}", full.len())));
    }
    Ok(full.sigmas[k..].iter().map(|s| s.max(0.0)).sum())
}

/// Orthogonal projection of `v` onto span{phi_1, ..., phi_k}.
pub fn project_onto_filters(v: &DVector<f64>, spec: &Spectrum, k: usize) -> Result<DVector<f64>> {
    check_dim("projection vector length", spec.source_size(), v.len())?;
    if k > spec.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} available eigenpairs",
            spec.len()
        )));
    }
    let basis = spec.phis.columns(0, k);
    let coeffs = basis.transpose() * v;
    Ok(basis * coeffs)
}

/// Z^{1/4} v evaluated from the full spectrum.
pub fn quarter_power_apply(spec: &Spectrum, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("quarter-power vector length", spec.source_size(), v.len())?;
    if !spec.is_full() {
        return Err(Error::InvalidArgument("Z^(1/4) needs the full spectrum".into()));
    }
    if (v.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "Z^(1/4) input must be a unit vector, norm is {}",
            v.norm()
        )));
    }
    let coeffs = spec.phis.transpose() * v;
    let scaled = DVector::from_fn(spec.len(), |j, _| spec.sigmas[j].max(0.0).powf(0.25) * coeffs[j]);
    Ok(&spec.phis * scaled)
}
