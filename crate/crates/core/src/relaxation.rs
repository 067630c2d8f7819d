//! The map from LDS parameters to the block matrix M_Theta over online
//! features, which reproduces the derivative comparator up to the filter
//! truncation error.
//!
//! Blocks: M^(j) = sum_l sigma_j^{-1/4} <phi_j, mu(alpha_l)> c_l b_l^T for
//! j = 1..k, then M^(x') = -D, M^(x) = CB + D, M^(y) = I.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::filters::{featurize_online_all, FeatureLayout, FilterBank, FilterMethod};
use crate::hankel::{mu_curve, NOISE_FLOOR};
use crate::lds::{self, LdsParams, Trajectory};

/// Block predictor over online features.
#[derive(Debug, Clone)]
pub struct RelaxedPredictor {
    layout: FeatureLayout,
    matrix: DMatrix<f64>,
    usable_k: usize,
    bank: FilterBank,
}

impl RelaxedPredictor {
    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    /// The flat m x (nk + 2n + m) matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Filters with sigma above the noise floor; blocks past this are zero.
    pub fn usable_k(&self) -> usize {
        self.usable_k
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    /// M^(j) for 0-based j.
    pub fn filter_block(&self, j: usize) -> DMatrix<f64> {
        self.matrix.columns(j * self.layout.n, self.layout.n).into_owned()
    }

    pub fn prev_x_block(&self) -> DMatrix<f64> {
        self.matrix.columns(self.layout.prev_x_offset(), self.layout.n).into_owned()
    }

    pub fn x_block(&self) -> DMatrix<f64> {
        self.matrix.columns(self.layout.x_offset(), self.layout.n).into_owned()
    }

    pub fn y_block(&self) -> DMatrix<f64> {
        self.matrix.columns(self.layout.y_offset(), self.layout.m).into_owned()
    }

    /// Frobenius norm over every block except M^(y).
    pub fn non_y_frobenius(&self) -> f64 {
        self.matrix.columns(0, self.layout.y_offset()).norm()
    }

    pub fn predict(&self, features: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("relaxed predictor feature width", self.layout.width(), features.len())?;
        Ok(&self.matrix * features)
    }

    /// sigma_j^{-1/4} <phi_j, mu(alpha)> for every usable j.
    pub fn coefficients(&self, alpha: f64) -> Result<Vec<f64>> {
        coefficients(&self.bank, self.usable_k, alpha)
    }
}

fn coefficients(bank: &FilterBank, usable: usize, alpha: f64) -> Result<Vec<f64>> {
    let mu = mu_curve(alpha, bank.horizon())?.entries;
    Ok((0..usable)
        .map(|j| bank.sigmas()[j].powf(-0.25) * bank.phis().column(j).dot(&mu))
        .collect())
}

fn usable_filters(bank: &FilterBank) -> usize {
    bank.sigmas().iter().take_while(|&&s| s > NOISE_FLOOR).count()
}

/// M_Theta over the whole bank; refuses banks reaching the noise floor.
pub fn build_m_theta(params: &LdsParams, bank: &FilterBank) -> Result<RelaxedPredictor> {
    let usable = usable_filters(bank);
    if usable < bank.k() {
        return Err(Error::NoiseFloor {
            requested: bank.k(),
            usable,
        });
    }
    build_m_theta_truncated(params, bank)
}

/// M_Theta with the blocks of filters at or below the noise floor set to zero.
pub fn build_m_theta_truncated(params: &LdsParams, bank: &FilterBank) -> Result<RelaxedPredictor> {
    build_m_theta_with_floor(params, bank, NOISE_FLOOR)
}

/// M_Theta using every leading filter with sigma above `floor`.
///
/// The sigma^{-1/4} in M^(j) cancels the sigma^{1/4} in the features, so
/// with `floor = 0` the full T-filter bank reproduces the comparator exactly
/// even where individual eigenpairs are inaccurate.
pub fn build_m_theta_with_floor(params: &LdsParams, bank: &FilterBank, floor: f64) -> Result<RelaxedPredictor> {
    let alphas = params
        .alphas()
        .ok_or_else(|| Error::InvalidArgument("M_Theta needs a diagonal A; call diagonalize first".into()))?;
    if bank.method() != FilterMethod::Eigen {
        return Err(Error::InvalidArgument(format!(
            "M_Theta is defined for eigen filter banks, got {}",
            bank.method()
        )));
    }
    let (n, m) = (params.input_dim(), params.output_dim());
    let layout = FeatureLayout::online(n, m, bank.k());
    let usable = bank.sigmas().iter().take_while(|&&s| s > floor).count();
    let mut matrix = DMatrix::zeros(m, layout.width());
    let per_alpha: Vec<Vec<f64>> = alphas
        .iter()
        .map(|&a| coefficients(bank, usable, a))
        .collect::<Result<_>>()?;
    for j in 0..usable {
        let diag = DVector::from_iterator(alphas.len(), per_alpha.iter().map(|c| c[j]));
        let block = &params.c * DMatrix::from_diagonal(&diag) * &params.b;
        matrix.columns_mut(j * n, n).copy_from(&block);
    }
    matrix.columns_mut(layout.prev_x_offset(), n).copy_from(&(-&params.d));
    matrix
        .columns_mut(layout.x_offset(), n)
        .copy_from(&(&params.c * &params.b + &params.d));
    matrix
        .columns_mut(layout.y_offset(), m)
        .copy_from(&DMatrix::identity(m, m));
    Ok(RelaxedPredictor {
        layout,
        matrix,
        usable_k: usable,
        bank: bank.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// |M_Theta X_t - y_hat_t| for t = 1..T.
    pub zeta_norms: Vec<f64>,
    /// sum |M_Theta X_t - y_t|^2 - sum |y_hat_t - y_t|^2.
    pub gap: f64,
}

impl ResidualReport {
    pub fn max_zeta(&self) -> f64 {
        self.zeta_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare M_Theta's predictions with the derivative comparator on `traj`.
pub fn relaxation_residual(params: &LdsParams, predictor: &RelaxedPredictor, traj: &Trajectory) -> Result<ResidualReport> {
    check_dim("trajectory input width", predictor.layout.n, traj.n())?;
    check_dim("trajectory output width", predictor.layout.m, traj.m())?;
    let features = featurize_online_all(traj.inputs(), traj.outputs(), &predictor.bank)?;
    let relaxed = predictor.matrix() * &features;
    let comparator = lds::derivative_predictions(params, traj)?;
    let mut zeta_norms = Vec::with_capacity(traj.len());
    let mut gap = 0.0;
    for (t, (y_hat, y)) in comparator.iter().zip(traj.outputs()).enumerate() {
        let ours = relaxed.column(t);
        zeta_norms.push((ours - y_hat).norm());
        gap += (ours - y).norm_squared() - (y_hat - y).norm_squared();
    }
    Ok(ResidualReport { zeta_norms, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::build_filter_bank;
    use crate::lds::{random_system, simulate, InputGenerator, NoiseConfig};
    use crate::rng;

    fn scalar(alpha: f64, b: f64, c: f64, d: f64) -> LdsParams {
        LdsParams::diagonal(
            &[alpha],
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn feedthrough_only_blocks() {
        let bank = build_filter_bank(50, 8, FilterMethod::Eigen).unwrap();
        let p = scalar(0.7, 0.0, 1.0, 0.4);
        let pred = build_m_theta(&p, &bank).unwrap();
        for j in 0..8 {
            assert_eq!(pred.filter_block(j).amax(), 0.0);
        }
        assert_eq!(pred.x_block()[(0, 0)], 0.4);
        assert_eq!(pred.prev_x_block()[(0, 0)], -0.4);
        assert_eq!(pred.y_block(), DMatrix::identity(1, 1));
    }

    #[test]
    fn alpha_zero_coefficients() {
        let bank = build_filter_bank(40, 6, FilterMethod::Eigen).unwrap();
        let pred = build_m_theta(&scalar(0.0, 1.0, 1.0, 0.0), &bank).unwrap();
        for j in 0..6 {
            let expected = -bank.sigmas()[j].powf(-0.25) * bank.phis()[(0, j)];
            assert!((pred.filter_block(j)[(0, 0)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_noise_floor_and_nondiagonal() {
        let bank = build_filter_bank(1000, 30, FilterMethod::Eigen).unwrap();
        let p = scalar(0.5, 1.0, 1.0, 0.0);
        match build_m_theta(&p, &bank) {
            Err(Error::NoiseFloor { requested, usable }) => {
                assert_eq!(requested, 30);
                assert!(usable < 30 && usable > 10);
            }
            other => panic!("expected NoiseFloor, got {other:?}"),
        }
        let trunc = build_m_theta_truncated(&p, &bank).unwrap();
        for j in trunc.usable_k()..30 {
            assert_eq!(trunc.filter_block(j).amax(), 0.0);
        }
        let mut r = rng::stream(0, 0);
        let dense = random_system(&mut r, 3, 1, 1, 1.0, false).unwrap();
        assert!(build_m_theta(&dense, &build_filter_bank(20, 4, FilterMethod::Eigen).unwrap()).is_err());
    }

    #[test]
    fn full_basis_reproduces_comparator() {
        let t = 30;
        let bank = build_filter_bank(t, t, FilterMethod::Eigen).unwrap();
        let mut r = rng::stream(2, 0);
        let p = random_system(&mut r, 4, 2, 2, 2.0, true).unwrap();
        let xs = InputGenerator::Gaussian { std: 1.0 }.generate(2, t, &mut r).unwrap();
        let traj = simulate(&p, &xs, &NoiseConfig::noiseless()).unwrap();
        let pred = build_m_theta_with_floor(&p, &bank, 0.0).unwrap();
        let report = relaxation_residual(&p, &pred, &traj).unwrap();
        assert!(report.max_zeta() <= 1e-6, "max zeta {}", report.max_zeta());
    }

    #[test]
    fn feedthrough_system_has_zero_residual() {
        let bank = build_filter_bank(100, 5, FilterMethod::Eigen).unwrap();
        let p = scalar(0.9, 0.0, 1.0, -1.3);
        let mut r = rng::stream(5, 0);
        let xs = InputGenerator::Gaussian { std: 1.0 }.generate(1, 100, &mut r).unwrap();
        let traj = simulate(&p, &xs, &NoiseConfig::noiseless()).unwrap();
        let report = relaxation_residual(&p, &build_m_theta(&p, &bank).unwrap(), &traj).unwrap();
        assert!(report.max_zeta() < 1e-12);
    }

    #[test]
    fn block_product_matches_flat_product() {
        let bank = build_filter_bank(64, 5, FilterMethod::Eigen).unwrap();
        let mut r = rng::stream(7, 0);
        let p = random_system(&mut r, 3, 2, 3, 1.5, true).unwrap();
        let pred = build_m_theta(&p, &bank).unwrap();
        let xs = InputGenerator::Gaussian { std: 1.0 }.generate(2, 20, &mut r).unwrap();
        let y_prev = rng::gaussian_vector(&mut r, 3, 1.0);
        let f = crate::filters::featurize_online(&xs, &y_prev, &bank).unwrap();
        let flat = pred.predict(&f).unwrap();
        let layout = pred.layout();
        let mut blocks = pred.y_block() * &y_prev + pred.x_block() * &xs[19] + pred.prev_x_block() * &xs[18];
        for j in 0..5 {
            blocks += pred.filter_block(j) * f.rows(layout.conv_index(0, j), 2);
        }
        assert!((flat - blocks).amax() < 1e-12);
    }
}
