//! Filter banks and convolutional featurization.
//!
//! Features at time t (1-based) are laid out as k blocks of n convolution
//! entries, block j holding sigma_j^{1/4} sum_{u=1}^{T-1} phi_j(u) x_{t-u},
//! followed by x_{t-1}, x_t and, online only, y_{t-1}. Inputs before time 1
//! are zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fft::FftPlan;
use crate::hankel::{self, Spectrum};

/// Largest eigen/Hilbert bank the builder accepts; deeper filters are noise.
pub const MAX_EIGEN_FILTERS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMethod {
    Eigen,
    Ode,
    Hilbert,
}

impl std::str::FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" => Ok(Self::Eigen),
            "ode" => Ok(Self::Ode),
            "hilbert" => Ok(Self::Hilbert),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter method {other:?} (expected eigen, ode or hilbert)"
            ))),
        }
    }
}

impl std::fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Eigen => "eigen",
            Self::Ode => "ode",
            Self::Hilbert => "hilbert",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FilterBank {
    method: FilterMethod,
    sigmas: Vec<f64>,
    phis: DMatrix<f64>,
    scaled: DMatrix<f64>,
    lambdas: Option<Vec<f64>>,
    extrapolated: Vec<bool>,
}

impl FilterBank {
    /// Assemble a bank from unit filters (columns of `phis`, T x k) and their
    /// eigenvalues. Negative eigenvalues scale to zero.
    pub fn from_parts(method: FilterMethod, sigmas: Vec<f64>, phis: DMatrix<f64>) -> Result<Self> {
        check_dim("filter bank eigenvalue count", phis.ncols(), sigmas.len())?;
        if phis.nrows() == 0 || phis.ncols() == 0 {
            return Err(Error::InvalidArgument("filter bank needs T >= 1 and k >= 1".into()));
        }
        if phis.iter().chain(&sigmas).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("filter bank entries".into()));
        }
        let mut scaled = phis.clone();
        for (j, s) in sigmas.iter().enumerate() {
            scaled.column_mut(j).scale_mut(s.max(0.0).powf(0.25));
        }
        let extrapolated = vec![false; sigmas.len()];
        Ok(Self {
            method,
            sigmas,
            phis,
            scaled,
            lambdas: None,
            extrapolated,
        })
    }

    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Result<Self> {
        check_dim("filter bank lambda count", self.k(), lambdas.len())?;
        self.lambdas = Some(lambdas);
        Ok(self)
    }

    pub fn with_extrapolated(mut self, flags: Vec<bool>) -> Result<Self> {
        check_dim("filter bank extrapolation flags", self.k(), flags.len())?;
        self.extrapolated = flags;
        Ok(self)
    }

    pub fn method(&self) -> FilterMethod {
        self.method
    }

    /// Horizon T (filter length).
    pub fn horizon(&self) -> usize {
        self.phis.nrows()
    }

    pub fn k(&self) -> usize {
        self.phis.ncols()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Unit filters phi_j as columns.
    pub fn phis(&self) -> &DMatrix<f64> {
        &self.phis
    }

    /// sigma_j^{1/4} phi_j as columns.
    pub fn scaled(&self) -> &DMatrix<f64> {
        &self.scaled
    }

    pub fn lambdas(&self) -> Option<&[f64]> {
        self.lambdas.as_deref()
    }

    /// True where sigma_j was extrapolated rather than measured.
    pub fn extrapolated(&self) -> &[bool] {
        &self.extrapolated
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::from_parts(self.sigmas.clone(), self.phis.clone())
    }

    /// Same bank restricted to its first `k` filters.
    pub fn truncated(&self, k: usize) -> Result<FilterBank> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-filter bank to {k}",
                self.k()
            )));
        }
        Ok(FilterBank {
            method: self.method,
            sigmas: self.sigmas[..k].to_vec(),
            phis: self.phis.columns(0, k).into_owned(),
            scaled: self.scaled.columns(0, k).into_owned(),
            lambdas: self.lambdas.as_ref().map(|l| l[..k].to_vec()),
            extrapolated: self.extrapolated[..k].to_vec(),
        })
    }

    /// Replace one filter's unit vector, keeping its eigenvalue. Used to
    /// build deliberately broken banks for the verification suite.
    pub fn with_filter_replaced(&self, j: usize, phi: DVector<f64>) -> Result<FilterBank> {
        check_dim("replacement filter length", self.horizon(), phi.len())?;
        let mut phis = self.phis.clone();
        phis.set_column(j, &phi);
        let mut out = FilterBank::from_parts(self.method, self.sigmas.clone(), phis)?;
        out.lambdas = self.lambdas.clone();
        out.extrapolated = self.extrapolated.clone();
        Ok(out)
    }
}

/// Build a bank of `k` filters of length `horizon`.
pub fn build_filter_bank(horizon: usize, k: usize, method: FilterMethod) -> Result<FilterBank> {
    if horizon == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "need T >= 1 and k >= 1, got T = {horizon}, k = {k}"
        )));
    }
    match method {
        FilterMethod::Eigen | FilterMethod::Hilbert => {
            let limit = horizon.min(MAX_EIGEN_FILTERS);
            if k > limit {
                return Err(Error::InvalidArgument(format!(
                    "{method} banks support 1 <= k <= min(T, {MAX_EIGEN_FILTERS}) = {limit}, got {k}"
                )));
            }
            let h = match method {
                FilterMethod::Eigen => hankel::build_hankel(horizon)?,
                _ => hankel::build_hilbert(horizon, -1)?,
            };
            let spec = hankel::top_eigenpairs(&h, k)?;
            FilterBank::from_parts(method, spec.sigmas().to_vec(), spec.phis().clone())
        }
        FilterMethod::Ode => crate::ode::ode_filter_bank(horizon, k),
    }
}

/// Column layout of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub online: bool,
}

impl FeatureLayout {
    pub fn online(n: usize, m: usize, k: usize) -> Self {
        Self { n, m, k, online: true }
    }

    pub fn batch(n: usize, k: usize) -> Self {
        Self { n, m: 0, k, online: false }
    }

    /// nk + 2n (+ m online).
    pub fn width(&self) -> usize {
        self.n * self.k + 2 * self.n + if self.online { self.m } else { 0 }
    }

    /// Index of convolution entry (coordinate i, filter j), both 0-based.
    pub fn conv_index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn prev_x_offset(&self) -> usize {
        self.n * self.k
    }

    pub fn x_offset(&self) -> usize {
        self.n * self.k + self.n
    }

    pub fn y_offset(&self) -> usize {
        self.n * self.k + 2 * self.n
    }
}

fn check_inputs(inputs: &[DVector<f64>]) -> Result<usize> {
    let n = inputs.first().map(|x| x.len()).unwrap_or(0);
    for x in inputs {
        check_dim("input vector width", n, x.len())?;
    }
    Ok(n)
}

/// Features at time t = x_history.len() by direct summation.
pub fn featurize_online(
    x_history: &[DVector<f64>],
    y_prev: &DVector<f64>,
    bank: &FilterBank,
) -> Result<DVector<f64>> {
    let t = x_history.len();
    if t == 0 {
        return Err(Error::InvalidArgument("featurization needs t >= 1".into()));
    }
    let n = check_inputs(x_history)?;
    let layout = FeatureLayout::online(n, y_prev.len(), bank.k());
    let mut out = DVector::zeros(layout.width());
    fill_direct(x_history, bank, &layout, &mut out);
    out.rows_mut(layout.y_offset(), layout.m).copy_from(y_prev);
    Ok(out)
}

fn fill_direct(x_history: &[DVector<f64>], bank: &FilterBank, layout: &FeatureLayout, out: &mut DVector<f64>) {
    let t = x_history.len();
    let n = layout.n;
    let max_u = (bank.horizon() - 1).min(t - 1);
    for j in 0..bank.k() {
        for u in 1..=max_u {
            let w = bank.scaled[(u - 1, j)];
            let x = &x_history[t - 1 - u];
            for i in 0..n {
                out[layout.conv_index(i, j)] += w * x[i];
            }
        }
    }
    if t >= 2 {
        out.rows_mut(layout.prev_x_offset(), n).copy_from(&x_history[t - 2]);
    }
    out.rows_mut(layout.x_offset(), n).copy_from(&x_history[t - 1]);
}

/// Batch features for every t = 1..L as the columns of a (nk + 2n) x L matrix,
/// convolutions computed by FFT.
pub fn featurize_batch(inputs: &[DVector<f64>], bank: &FilterBank) -> Result<DMatrix<f64>> {
    let n = check_inputs(inputs)?;
    let len = inputs.len();
    let layout = FeatureLayout::batch(n, bank.k());
    let mut out = DMatrix::zeros(layout.width(), len);
    if len == 0 {
        return Ok(out);
    }
    let taps = bank.horizon() - 1;
    let plan = FftPlan::for_convolution(taps + 1, len);
    // a0[0] = 0, a0[u] = scaled_j(u), so (a0 * x)[t-1] is the feature at time t.
    let filter_spectra: Vec<_> = (0..bank.k())
        .map(|j| {
            let mut a0 = vec![0.0; taps + 1];
            for u in 1..=taps {
                a0[u] = bank.scaled[(u - 1, j)];
            }
            plan.forward_real(&a0)
        })
        .collect();
    for i in 0..n {
        let series: Vec<f64> = inputs.iter().map(|x| x[i]).collect();
        let input_spectrum = plan.forward_real(&series);
        for (j, fs) in filter_spectra.iter().enumerate() {
            let mut buf: Vec<_> = input_spectrum.iter().zip(fs).map(|(a, b)| a * b).collect();
            plan.inverse(&mut buf);
            let row = layout.conv_index(i, j);
            for t in 0..len {
                out[(row, t)] = buf[t].re;
            }
        }
    }
    for t in 0..len {
        if t >= 1 {
            out.view_mut((layout.prev_x_offset(), t), (n, 1)).copy_from(&inputs[t - 1]);
        }
        out.view_mut((layout.x_offset(), t), (n, 1)).copy_from(&inputs[t]);
    }
    Ok(out)
}

/// Batch features by direct O(T^2) summation; the oracle for [`featurize_batch`].
pub fn featurize_batch_naive(inputs: &[DVector<f64>], bank: &FilterBank) -> Result<DMatrix<f64>> {
    let n = check_inputs(inputs)?;
    let layout = FeatureLayout::batch(n, bank.k());
    let mut out = DMatrix::zeros(layout.width(), inputs.len());
    for t in 1..=inputs.len() {
        let mut col = DVector::zeros(layout.width());
        fill_direct(&inputs[..t], bank, &layout, &mut col);
        out.set_column(t - 1, &col);
    }
    Ok(out)
}

/// Online features for every t: batch features with y_{t-1} appended (y_0 = 0).
pub fn featurize_online_all(
    inputs: &[DVector<f64>],
    outputs: &[DVector<f64>],
    bank: &FilterBank,
) -> Result<DMatrix<f64>> {
    check_dim("output sequence length", inputs.len(), outputs.len())?;
    let m = outputs.first().map(|y| y.len()).unwrap_or(0);
    for y in outputs {
        check_dim("output vector width", m, y.len())?;
    }
    let batch = featurize_batch(inputs, bank)?;
    let width = batch.nrows();
    let mut out = batch.resize_vertically(width + m, 0.0);
    for t in 1..outputs.len() {
        out.view_mut((width, t), (m, 1)).copy_from(&outputs[t - 1]);
    }
    Ok(out)
}

/// x'_t = (x_t, (-1)^t x_t) with 1-based t.
pub fn augment_alternating(inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    inputs
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let sign = if (idx + 1) % 2 == 0 { 1.0 } else { -1.0 };
            let n = x.len();
            DVector::from_fn(2 * n, |r, _| if r < n { x[r] } else { sign * x[r - n] })
        })
        .collect()
}

/// Prepend a time-0 step carrying `hint` in d' extra dummy coordinates.
/// The result has length T + 1 and width n + d'.
pub fn augment_hint(inputs: &[DVector<f64>], hint: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = inputs.first().map(|x| x.len()).unwrap_or(0);
    let dp = hint.len();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(DVector::from_fn(n + dp, |r, _| if r < n { 0.0 } else { hint[r - n] }));
    for x in inputs {
        out.push(x.clone().resize_vertically(n + dp, 0.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_inputs(seed: u64, len: usize, n: usize) -> Vec<DVector<f64>> {
        let mut r = rng::stream(seed, 0);
        (0..len).map(|_| rng::gaussian_vector(&mut r, n, 1.0)).collect()
    }

    #[test]
    fn two_by_two_bank() {
        let bank = build_filter_bank(2, 1, FilterMethod::Eigen).unwrap();
        let (a, b, c): (f64, f64, f64) = (1.0 / 3.0, 1.0 / 12.0, 1.0 / 30.0);
        let s1 = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let v = DVector::from_row_slice(&[b, s1 - a]).normalize();
        assert!((bank.sigmas()[0] - s1).abs() < 1e-14);
        assert!((bank.scaled().column(0) - v * s1.powf(0.25)).norm() < 1e-12);
    }

    #[test]
    fn bank_limits() {
        assert!(build_filter_bank(100, 0, FilterMethod::Eigen).is_err());
        assert!(build_filter_bank(100, 41, FilterMethod::Eigen).is_err());
        assert!(build_filter_bank(5, 6, FilterMethod::Hilbert).is_err());
        let bank = build_filter_bank(64, 12, FilterMethod::Hilbert).unwrap();
        assert_eq!((bank.horizon(), bank.k()), (64, 12));
        assert!(bank.sigmas().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn method_parse_roundtrip() {
        for m in [FilterMethod::Eigen, FilterMethod::Ode, FilterMethod::Hilbert] {
            assert_eq!(m.to_string().parse::<FilterMethod>().unwrap(), m);
        }
        assert!("wave".parse::<FilterMethod>().is_err());
    }

    #[test]
    fn widths() {
        assert_eq!(FeatureLayout::online(3, 2, 5).width(), 3 * 5 + 6 + 2);
        assert_eq!(FeatureLayout::batch(3, 5).width(), 21);
        let bank = build_filter_bank(16, 4, FilterMethod::Eigen).unwrap();
        let xs = random_inputs(1, 7, 3);
        let f = featurize_online(&xs, &DVector::zeros(2), &bank).unwrap();
        assert_eq!(f.len(), 3 * 4 + 6 + 2);
    }

    #[test]
    fn zero_inputs_leave_only_y_block() {
        let bank = build_filter_bank(16, 4, FilterMethod::Eigen).unwrap();
        let xs = vec![DVector::zeros(2); 9];
        let y = DVector::from_row_slice(&[0.3, -1.0]);
        let f = featurize_online(&xs, &y, &bank).unwrap();
        let layout = FeatureLayout::online(2, 2, 4);
        assert!(f.rows(0, layout.y_offset()).iter().all(|&v| v == 0.0));
        assert_eq!(f.rows(layout.y_offset(), 2), y);
    }

    #[test]
    fn impulse_selects_filter_coordinate() {
        let horizon = 20;
        let bank = build_filter_bank(horizon, 5, FilterMethod::Eigen).unwrap();
        let n = 3;
        let mut xs = vec![DVector::zeros(n); horizon];
        xs[0][1] = 1.0;
        let batch = featurize_batch(&xs, &bank).unwrap();
        let layout = FeatureLayout::batch(n, 5);
        for t in 2..=horizon {
            let online = featurize_online(&xs[..t], &DVector::zeros(1), &bank).unwrap();
            for j in 0..5 {
                let expected = bank.scaled()[(t - 2, j)];
                assert!((online[layout.conv_index(1, j)] - expected).abs() < 1e-15);
                assert!((batch[(layout.conv_index(1, j), t - 1)] - expected).abs() < 1e-12);
                assert_eq!(online[layout.conv_index(0, j)], 0.0);
            }
        }
    }

    #[test]
    fn fft_matches_naive() {
        for (horizon, len, n, k) in [(1usize, 5usize, 1usize, 1usize), (50, 50, 2, 7), (64, 90, 3, 10), (300, 200, 1, 25)] {
            let bank = build_filter_bank(horizon, k, FilterMethod::Eigen).unwrap();
            let xs = random_inputs(horizon as u64, len, n);
            let fast = featurize_batch(&xs, &bank).unwrap();
            let slow = featurize_batch_naive(&xs, &bank).unwrap();
            assert!((fast - slow).amax() <= 1e-10);
        }
    }

    #[test]
    fn online_all_matches_stepwise() {
        let bank = build_filter_bank(30, 6, FilterMethod::Eigen).unwrap();
        let xs = random_inputs(4, 30, 2);
        let ys = random_inputs(5, 30, 3);
        let all = featurize_online_all(&xs, &ys, &bank).unwrap();
        for t in 1..=30 {
            let y_prev = if t == 1 { DVector::zeros(3) } else { ys[t - 2].clone() };
            let step = featurize_online(&xs[..t], &y_prev, &bank).unwrap();
            assert!((all.column(t - 1) - step).amax() < 1e-12);
        }
    }

    #[test]
    fn conv_entries_respect_l1_bound() {
        let horizon = 256;
        let bank = build_filter_bank(horizon, 20, FilterMethod::Eigen).unwrap();
        let mut r = rng::stream(9, 0);
        let xs: Vec<_> = (0..horizon)
            .map(|_| DVector::from_fn(2, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0)))
            .collect();
        let f = featurize_batch(&xs, &bank).unwrap();
        let bound = 2.0 + 2.0 * (horizon as f64).log2();
        assert!(f.rows(0, 40).amax() <= bound);
    }

    #[test]
    fn alternating_augmentation() {
        let xs = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)];
        let aug = augment_alternating(&xs);
        assert_eq!(aug[0].as_slice(), &[1.0, -1.0]);
        assert_eq!(aug[1].as_slice(), &[1.0, 1.0]);
        assert!(augment_alternating(&[DVector::zeros(3)])[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hint_augmentation() {
        let xs = random_inputs(2, 5, 3);
        let hint = DVector::from_row_slice(&[1.0, 0.0]);
        let aug = augment_hint(&xs, &hint);
        assert_eq!(aug.len(), 6);
        assert_eq!(aug[0].as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        for (a, x) in aug[1..].iter().zip(&xs) {
            assert_eq!(a.rows(0, 3), *x);
            assert_eq!(a.rows(3, 2).amax(), 0.0);
        }
        let zero = augment_hint(&xs, &DVector::zeros(2));
        assert!(zero.iter().all(|a| a.rows(3, 2).amax() == 0.0));
    }
}
