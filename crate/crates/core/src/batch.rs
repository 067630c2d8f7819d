//! Batch least squares on output differences, and the cumulative pure-batch
//! predictor built on it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::filters::{augment_hint, build_filter_bank, featurize_batch, FeatureLayout, FilterBank, FilterMethod};
use crate::linalg;
use crate::lds::Trajectory;

/// Default ridge: a numerical stabilizer only.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// One training sequence. `targets[i]` belongs to `inputs[offset + i]`;
/// steps before `offset` (a hint impulse) contribute features but no rows.
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub offset: usize,
}

impl BatchSample {
    pub fn new(inputs: Vec<DVector<f64>>, targets: Vec<DVector<f64>>, offset: usize) -> Result<Self> {
        check_dim("batch target count", inputs.len().saturating_sub(offset), targets.len())?;
        if offset > inputs.len() {
            return Err(Error::InvalidArgument(format!("offset {offset} exceeds sample length")));
        }
        let m = targets.first().map(|y| y.len()).unwrap_or(0);
        for y in &targets {
            check_dim("batch target width", m, y.len())?;
        }
        Ok(Self { inputs, targets, offset })
    }

    /// Inputs with targets y_t - y_{t-1} (y_0 = 0).
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            inputs: traj.inputs().to_vec(),
            targets: traj.output_differences(),
            offset: 0,
        }
    }

    /// Inputs augmented with a time-0 hint impulse in extra coordinates.
    pub fn with_hint(traj: &Trajectory, hint: &DVector<f64>) -> Self {
        Self {
            inputs: augment_hint(traj.inputs(), hint),
            targets: traj.output_differences(),
            offset: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.inputs.first().map(|x| x.len()).unwrap_or(0)
    }

    pub fn m(&self) -> usize {
        self.targets.first().map(|y| y.len()).unwrap_or(0)
    }

    /// Feature columns for the rows that carry targets.
    pub fn features(&self, bank: &FilterBank) -> Result<DMatrix<f64>> {
        let all = featurize_batch(&self.inputs, bank)?;
        Ok(all.columns(self.offset, self.targets.len()).into_owned())
    }

    pub fn target_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), self.targets.len(), |r, c| self.targets[c][r])
    }
}

#[derive(Debug, Clone)]
pub struct BatchModel {
    matrix: DMatrix<f64>,
    bank: FilterBank,
    ridge: f64,
    layout: FeatureLayout,
}

impl BatchModel {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    /// Mean over rows of |M X_t - Y'_t|^2.
    pub fn mse(&self, samples: &[BatchSample]) -> Result<f64> {
        let mut total = 0.0;
        let mut rows = 0usize;
        for s in samples {
            let f = s.features(&self.bank)?;
            check_dim("batch feature width", self.matrix.ncols(), f.nrows())?;
            total += (&self.matrix * f - s.target_matrix()).norm_squared();
            rows += s.targets.len();
        }
        if rows == 0 {
            return Err(Error::InvalidArgument("MSE over zero rows".into()));
        }
        Ok(total / rows as f64)
    }
}

/// M = Y' F^T (F F^T + ridge I)^{-1} over all samples; the pseudoinverse when ridge = 0.
pub fn fit_batch(samples: &[BatchSample], bank: &FilterBank, ridge: f64) -> Result<BatchModel> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("batch fit needs N >= 1 samples".into()))?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let (n, m) = (first.n(), first.m());
    for s in samples {
        check_dim("batch sample input width", n, s.n())?;
        check_dim("batch sample target width", m, s.m())?;
    }
    let layout = FeatureLayout::batch(n, bank.k());
    let p = layout.width();
    // Per-sample statistics in parallel, reduced in sample order.
    let stats: Vec<(DMatrix<f64>, DMatrix<f64>)> = samples
        .par_iter()
        .map(|s| {
            let f = s.features(bank)?;
            let y = s.target_matrix();
            Ok((&f * f.transpose(), y * f.transpose()))
        })
        .collect::<Result<_>>()?;
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(m, p);
    for (g, c) in &stats {
        gram += g;
        cross += c;
    }
    let matrix = if ridge > 0.0 {
        linalg::ridge_solve(&gram, &cross, ridge)?
    } else {
        linalg::pinv_solve(&gram, &cross)?
    };
    Ok(BatchModel {
        matrix,
        bank: bank.clone(),
        ridge,
        layout,
    })
}

/// Predicted difference y_t - y_{t-1}.
pub fn predict_derivative(model: &BatchModel, features: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("batch feature width", model.matrix.ncols(), features.len())?;
    Ok(&model.matrix * features)
}

/// Cumulative predictions y_hat_t = sum_{u <= t} M X_u over feature columns.
pub fn predict_pure_batch(model: &BatchModel, features: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    check_dim("batch feature width", model.matrix.ncols(), features.nrows())?;
    let diffs = &model.matrix * features;
    let mut acc = DVector::zeros(model.matrix.nrows());
    Ok(diffs
        .column_iter()
        .map(|d| {
            acc += d;
            acc.clone()
        })
        .collect())
}

/// Eigenvectors of the Hilbert matrix H_{T,-1}, scaled by sigma^{1/4}.
pub fn build_hilbert_filters(horizon: usize, k: usize) -> Result<FilterBank> {
    build_filter_bank(horizon, k, FilterMethod::Hilbert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::{random_system, simulate, InputGenerator, NoiseConfig};
    use crate::rng;

    fn samples(seed: u64, count: usize, len: usize, n: usize, m: usize) -> Vec<BatchSample> {
        let mut r = rng::stream(seed, 0);
        (0..count)
            .map(|_| {
                let xs = InputGenerator::Gaussian { std: 1.0 }.generate(n, len, &mut r).unwrap();
                let ys = InputGenerator::Gaussian { std: 1.0 }.generate(m, len, &mut r).unwrap();
                BatchSample::new(xs, ys, 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn planted_model_recovered() {
        let bank = build_filter_bank(60, 5, FilterMethod::Eigen).unwrap();
        let mut data = samples(1, 3, 60, 2, 2);
        let width = FeatureLayout::batch(2, 5).width();
        let truth = rng::gaussian_matrix(&mut rng::stream(2, 0), 2, width, 0.5);
        for s in &mut data {
            let f = s.features(&bank).unwrap();
            let y = &truth * f;
            s.targets = y.column_iter().map(|c| c.into_owned()).collect();
        }
        for ridge in [0.0, DEFAULT_RIDGE] {
            let model = fit_batch(&data, &bank, ridge).unwrap();
            assert!(model.mse(&data).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn zero_targets_zero_model() {
        let bank = build_filter_bank(30, 3, FilterMethod::Eigen).unwrap();
        let mut data = samples(3, 2, 30, 1, 1);
        for s in &mut data {
            s.targets.iter_mut().for_each(|y| y.fill(0.0));
        }
        let model = fit_batch(&data, &bank, 1e-3).unwrap();
        assert_eq!(model.matrix().amax(), 0.0);
    }

    #[test]
    fn zero_features_without_ridge_fail() {
        let bank = build_filter_bank(10, 2, FilterMethod::Eigen).unwrap();
        let s = BatchSample::new(vec![DVector::zeros(1); 10], vec![DVector::from_element(1, 1.0); 10], 0).unwrap();
        assert!(fit_batch(&[s], &bank, 0.0).is_err());
        assert!(fit_batch(&[], &bank, 1.0).is_err());
    }

    #[test]
    fn ridge_monotone_residual() {
        let bank = build_filter_bank(50, 4, FilterMethod::Eigen).unwrap();
        let data = samples(4, 2, 50, 2, 1);
        let mut prev = 0.0;
        for ridge in [0.0, 1e-6, 1e-2, 1.0, 100.0, 1e4] {
            let mse = fit_batch(&data, &bank, ridge).unwrap().mse(&data).unwrap();
            assert!(mse >= prev - 1e-12);
            prev = mse;
        }
    }

    #[test]
    fn cumulative_prediction() {
        let bank = build_filter_bank(10, 2, FilterMethod::Eigen).unwrap();
        let data = samples(5, 1, 10, 1, 1);
        let mut model = fit_batch(&data, &bank, 1.0).unwrap();
        // Constant derivative c = 0.5 through the x_t column on constant input 1.
        model.matrix.fill(0.0);
        let x_col = model.layout.x_offset();
        model.matrix[(0, x_col)] = 0.5;
        let f = featurize_batch(&vec![DVector::from_element(1, 1.0); 10], &bank).unwrap();
        let preds = predict_pure_batch(&model, &f).unwrap();
        for (t, p) in preds.iter().enumerate() {
            assert!((p[0] - 0.5 * (t + 1) as f64).abs() < 1e-12);
        }
        model.matrix.fill(0.0);
        assert!(predict_pure_batch(&model, &f).unwrap().iter().all(|p| p[0] == 0.0));
        assert_eq!(predict_derivative(&model, &DVector::zeros(f.nrows())).unwrap()[0], 0.0);
    }

    #[test]
    fn hint_samples_have_offset_rows() {
        let mut r = rng::stream(6, 0);
        let p = random_system(&mut r, 3, 1, 1, 1.0, true).unwrap();
        let xs = InputGenerator::Gaussian { std: 1.0 }.generate(1, 40, &mut r).unwrap();
        let traj = simulate(&p, &xs, &NoiseConfig::noiseless()).unwrap();
        let s = BatchSample::with_hint(&traj, &DVector::from_row_slice(&[1.0, 2.0, 3.0]));
        assert_eq!(s.inputs.len(), 41);
        let bank = build_filter_bank(41, 3, FilterMethod::Eigen).unwrap();
        assert_eq!(s.features(&bank).unwrap().ncols(), 40);
    }

    #[test]
    fn hilbert_two_by_two() {
        let bank = build_hilbert_filters(2, 2).unwrap();
        let (a, b, c): (f64, f64, f64) = (1.0, 0.5, 1.0 / 3.0);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        assert!((bank.sigmas()[0] - (0.5 * (a + c) + rad)).abs() < 1e-14);
        assert!((bank.sigmas()[1] - (0.5 * (a + c) - rad)).abs() < 1e-14);
        assert!((bank.sigmas()[0] - 1.26760).abs() < 1e-5 && (bank.sigmas()[1] - 0.06573).abs() < 2e-5);
    }
}
