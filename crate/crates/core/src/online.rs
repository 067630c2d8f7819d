//! Online learning over wave-filter features: projected gradient descent,
//! follow-the-leader, and regret against the best fixed matrix in hindsight.
//!
//! With the y-block frozen at the identity, learning acts only on the first
//! nk + 2n columns, so the learner predicts y_{t-1} + W X_t and every norm
//! and projection below is taken over W alone.

use std::ops::SubAssign;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::filters::{featurize_online_all, FeatureLayout, FilterBank, MAX_EIGEN_FILTERS};
use crate::linalg;
use crate::lds::Trajectory;

/// Leading constants of the hyperparameter formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConstants {
    pub k: f64,
    pub radius: f64,
    pub eta: f64,
}

impl Default for HyperConstants {
    fn default() -> Self {
        Self {
            k: 1.0,
            radius: 1.0,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub k: usize,
    pub r_m: f64,
    pub eta: f64,
    /// ln(max(R_Theta R_x L_y n, 2)), the shared log factor.
    pub log_factor: f64,
}

/// k = c_k ln^2 T L, R_M = c_R R_Theta^2 sqrt(k),
/// eta = c_eta / (R_x^2 L_y L n sqrt(T) ln^4 T), with L = ln(max(R_Theta R_x L_y n, 2))
/// and k rounded and clamped to [1, 40].
pub fn default_hyperparams(
    horizon: usize,
    r_theta: f64,
    r_x: f64,
    l_y: f64,
    n: usize,
    consts: &HyperConstants,
) -> Result<Hyperparams> {
    let all = [r_theta, r_x, l_y, consts.k, consts.radius, consts.eta];
    if horizon < 2 || n == 0 || all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "hyperparameters need T >= 2, n >= 1 and positive finite bounds/constants; got T = {horizon}, n = {n}, {all:?}"
        )));
    }
    let t = horizon as f64;
    let ln_t = t.ln();
    let log_factor = (r_theta * r_x * l_y * n as f64).max(2.0).ln();
    let k = (consts.k * ln_t * ln_t * log_factor).round().clamp(1.0, MAX_EIGEN_FILTERS as f64) as usize;
    let r_m = consts.radius * r_theta * r_theta * (k as f64).sqrt();
    let eta = consts.eta / (r_x * r_x * l_y * log_factor * n as f64 * t.sqrt() * ln_t.powi(4));
    Ok(Hyperparams { k, r_m, eta, log_factor })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub k: usize,
    pub eta: f64,
    pub r_m: f64,
    pub freeze_y_block: bool,
}

impl OnlineConfig {
    pub fn validate(&self, bank: &FilterBank) -> Result<()> {
        check_dim("online config k vs filter bank", bank.k(), self.k)?;
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.r_m.is_finite() && self.r_m > 0.0) {
            return Err(Error::InvalidArgument(format!("R_M must be positive, got {}", self.r_m)));
        }
        Ok(())
    }
}

/// f_t(M) = |M x - y|^2.
pub fn loss(m: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (m * x - y).norm_squared()
}

/// grad f_t(M) = 2 (M x - y) x^T.
pub fn gradient(m: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    (m * x - y) * x.transpose() * 2.0
}

#[derive(Debug, Clone)]
pub struct OnlineState {
    m: DMatrix<f64>,
    layout: FeatureLayout,
    eta: f64,
    r_m: f64,
    freeze: bool,
    step: usize,
    cumulative_loss: f64,
}

impl OnlineState {
    /// Zero matrix with an identity y-block; projected if the y-block is learnable.
    pub fn new(layout: FeatureLayout, config: &OnlineConfig) -> Result<Self> {
        if !layout.online {
            return Err(Error::InvalidArgument("online state needs an online feature layout".into()));
        }
        check_dim("online layout k", config.k, layout.k)?;
        let mut m = DMatrix::zeros(layout.m, layout.width());
        m.columns_mut(layout.y_offset(), layout.m)
            .copy_from(&DMatrix::identity(layout.m, layout.m));
        let mut state = Self {
            m,
            layout,
            eta: config.eta,
            r_m: config.r_m,
            freeze: config.freeze_y_block,
            step: 0,
            cumulative_loss: 0.0,
        };
        state.project();
        Ok(state)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.cumulative_loss
    }

    fn learnable_cols(&self) -> usize {
        if self.freeze {
            self.layout.y_offset()
        } else {
            self.layout.width()
        }
    }

    /// Frobenius norm of the learnable part.
    pub fn learnable_norm(&self) -> f64 {
        self.m.columns(0, self.learnable_cols()).norm()
    }

    fn project(&mut self) {
        let cols = self.learnable_cols();
        let norm = self.m.columns(0, cols).norm();
        if norm > self.r_m {
            let scale = self.r_m / norm;
            self.m.columns_mut(0, cols).scale_mut(scale);
        }
    }
}

/// y_hat = M X.
pub fn predict(state: &OnlineState, features: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("online feature width", state.layout.width(), features.len())?;
    Ok(&state.m * features)
}

/// One projected gradient step on f_t; returns the loss suffered before the step.
pub fn update(state: &mut OnlineState, features: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_dim("online feature width", state.layout.width(), features.len())?;
    check_dim("online target width", state.layout.m, y.len())?;
    let residual = &state.m * features - y;
    let step_loss = residual.norm_squared();
    let cols = state.learnable_cols();
    let grad = residual * features.rows(0, cols).transpose() * 2.0;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient at step {} (learning rate too large?)",
            state.step + 1
        )));
    }
    let step = grad * state.eta;
    state.m.columns_mut(0, cols).sub_assign(&step);
    state.project();
    state.step += 1;
    state.cumulative_loss += step_loss;
    Ok(step_loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    TrueDerivative,
    BestFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub learner_loss: f64,
    pub comparator_loss: f64,
    pub comparator: ComparatorKind,
    pub regret: f64,
    pub normalized_regret: f64,
    pub horizon: usize,
}

impl RegretReport {
    pub fn new(learner_loss: f64, comparator_loss: f64, comparator: ComparatorKind, horizon: usize) -> Self {
        let regret = learner_loss - comparator_loss;
        Self {
            learner_loss,
            comparator_loss,
            comparator,
            regret,
            normalized_regret: regret / horizon.max(1) as f64,
            horizon,
        }
    }
}

/// Result of an online episode.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub predictions: Vec<DVector<f64>>,
    pub losses: Vec<f64>,
    /// Learnable-part Frobenius norm after each step.
    pub norms: Vec<f64>,
    pub final_matrix: DMatrix<f64>,
    pub layout: FeatureLayout,
    pub report: RegretReport,
    /// Best fixed matrix in hindsight over the learnable features.
    pub comparator: ComparatorFit,
}

/// Learnable features and targets: with a frozen y-block the features drop
/// y_{t-1} and the targets become y_t - y_{t-1}.
pub fn comparator_problem(
    features: &DMatrix<f64>,
    traj: &Trajectory,
    layout: &FeatureLayout,
    freeze_y_block: bool,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let len = traj.len();
    if freeze_y_block {
        let f = features.rows(0, layout.y_offset()).into_owned();
        let diffs = traj.output_differences();
        let y = DMatrix::from_fn(layout.m, len, |r, c| diffs[c][r]);
        (f, y)
    } else {
        let y = DMatrix::from_fn(layout.m, len, |r, c| traj.outputs()[c][r]);
        (features.clone(), y)
    }
}

/// Algorithm 1 with a fixed learning rate over `traj`.
pub fn run_online(traj: &Trajectory, bank: &FilterBank, config: &OnlineConfig) -> Result<OnlineRun> {
    config.validate(bank)?;
    let layout = FeatureLayout::online(traj.n(), traj.m(), bank.k());
    let features = featurize_online_all(traj.inputs(), traj.outputs(), bank)?;
    let mut state = OnlineState::new(layout, config)?;
    let mut predictions = Vec::with_capacity(traj.len());
    let mut losses = Vec::with_capacity(traj.len());
    let mut norms = Vec::with_capacity(traj.len());
    for (t, y) in traj.outputs().iter().enumerate() {
        let x = features.column(t).into_owned();
        predictions.push(predict(&state, &x)?);
        losses.push(update(&mut state, &x, y)?);
        norms.push(state.learnable_norm());
    }
    let (f, y) = comparator_problem(&features, traj, &layout, config.freeze_y_block);
    let comparator = best_fixed(&f, &y, config.r_m)?;
    let report = RegretReport::new(
        state.cumulative_loss(),
        comparator.loss,
        ComparatorKind::BestFixed,
        traj.len(),
    );
    Ok(OnlineRun {
        predictions,
        losses,
        norms,
        final_matrix: state.m,
        layout,
        report,
        comparator,
    })
}

/// The constrained least-squares comparator.
#[derive(Debug, Clone)]
pub struct ComparatorFit {
    pub matrix: DMatrix<f64>,
    pub loss: f64,
    /// Ridge multiplier of the active norm constraint (0 when inactive).
    pub multiplier: f64,
}

/// min over |M|_F <= r_m of sum_t |y_t - M x_t|^2 (columns of `features`, `targets`).
///
/// Unconstrained minimum-norm least squares first; if that leaves the ball,
/// bisection on the multiplier nu of M (G + nu I) = R puts it on the boundary.
pub fn best_fixed(features: &DMatrix<f64>, targets: &DMatrix<f64>, r_m: f64) -> Result<ComparatorFit> {
    check_dim("comparator sample count", features.ncols(), targets.ncols())?;
    if !(r_m >= 0.0) {
        return Err(Error::InvalidArgument(format!("R_M must be >= 0, got {r_m}")));
    }
    let m = targets.nrows();
    let p = features.nrows();
    let loss_of = |mat: &DMatrix<f64>| (targets - mat * features).norm_squared();
    if r_m == 0.0 || p == 0 {
        let zero = DMatrix::zeros(m, p);
        return Ok(ComparatorFit {
            loss: loss_of(&zero),
            matrix: zero,
            multiplier: 0.0,
        });
    }
    let gram = features * features.transpose();
    let cross = targets * features.transpose();
    let (vals, vecs) = linalg::symmetric_eigen(&gram)?;
    let top = vals.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = top * p as f64 * f64::EPSILON;
    let rotated = &cross * &vecs;
    let solution = |nu: f64| {
        let mut scaled = rotated.clone();
        for (i, &v) in vals.iter().enumerate() {
            let d = v + nu;
            let inv = if nu == 0.0 && v <= cutoff { 0.0 } else { 1.0 / d };
            scaled.column_mut(i).scale_mut(inv);
        }
        scaled * vecs.transpose()
    };
    let free = solution(0.0);
    if free.norm() <= r_m {
        return Ok(ComparatorFit {
            loss: loss_of(&free),
            matrix: free,
            multiplier: 0.0,
        });
    }
    let norm_at = |nu: f64| {
        let mut s = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            s += rotated.column(i).norm_squared() / (v.max(0.0) + nu).powi(2);
        }
        s.sqrt()
    };
    let mut lo = 0.0;
    let mut hi = rotated.norm() / r_m;
    while norm_at(hi) > r_m {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > r_m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut matrix = solution(hi);
    linalg::project_frobenius(&mut matrix, r_m);
    Ok(ComparatorFit {
        loss: loss_of(&matrix),
        matrix,
        multiplier: hi,
    })
}

/// Comparator loss min_{|M| <= r_m} sum |y_t - M x_t|^2.
pub fn regret_vs_best_fixed(features: &DMatrix<f64>, targets: &DMatrix<f64>, r_m: f64) -> Result<f64> {
    Ok(best_fixed(features, targets, r_m)?.loss)
}

/// How an FTL refit solves its normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FtlSolver {
    /// Cholesky factorization of G + ridge I.
    Direct,
    /// Conjugate gradients started from the previous matrix.
    WarmCg { max_iters: usize, tol: f64 },
}

/// Regularized least squares on the accumulated statistics
/// G = sum x x^T, R = sum y x^T, then projection onto the R_M ball.
pub fn ftl_update(gram: &DMatrix<f64>, cross: &DMatrix<f64>, ridge: f64, r_m: f64) -> Result<DMatrix<f64>> {
    if !(ridge >= 0.0 && r_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "FTL needs ridge >= 0 and R_M > 0, got ({ridge}, {r_m})"
        )));
    }
    let mut m = linalg::ridge_solve(gram, cross, ridge)?;
    linalg::project_frobenius(&mut m, r_m);
    Ok(m)
}

/// FTL refit by conjugate gradients on M (G + ridge I) = R, warm-started at `warm`.
pub fn ftl_update_warm(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    ridge: f64,
    r_m: f64,
    warm: &DMatrix<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<DMatrix<f64>> {
    if !(ridge >= 0.0 && r_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "FTL needs ridge >= 0 and R_M > 0, got ({ridge}, {r_m})"
        )));
    }
    check_dim("warm start rows", cross.nrows(), warm.nrows())?;
    check_dim("warm start columns", cross.ncols(), warm.ncols())?;
    let mut system = gram.clone();
    for i in 0..system.nrows() {
        system[(i, i)] += ridge;
    }
    let mut out = warm.clone();
    for r in 0..cross.nrows() {
        let b = cross.row(r).transpose();
        let mut x = warm.row(r).transpose();
        let mut res = &b - &system * &x;
        let mut dir = res.clone();
        let mut rr = res.norm_squared();
        let stop = tol * tol * b.norm_squared().max(f64::MIN_POSITIVE);
        for _ in 0..max_iters {
            if rr <= stop {
                break;
            }
            let ad = &system * &dir;
            let denom = dir.dot(&ad);
            if denom <= 0.0 {
                return Err(Error::Singular("FTL normal equations are not positive definite".into()));
            }
            let step = rr / denom;
            x.axpy(step, &dir, 1.0);
            res.axpy(-step, &ad, 1.0);
            let rr_new = res.norm_squared();
            dir = &res + dir * (rr_new / rr);
            rr = rr_new;
        }
        out.set_row(r, &x.transpose());
    }
    linalg::project_frobenius(&mut out, r_m);
    Ok(out)
}

/// FTL from an explicit history of (features, target) pairs.
pub fn ftl_fit(history: &[(DVector<f64>, DVector<f64>)], ridge: f64, r_m: f64) -> Result<DMatrix<f64>> {
    let (x0, y0) = history
        .first()
        .ok_or_else(|| Error::InvalidArgument("FTL needs a nonempty history".into()))?;
    let (p, m) = (x0.len(), y0.len());
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(m, p);
    for (x, y) in history {
        check_dim("FTL feature width", p, x.len())?;
        check_dim("FTL target width", m, y.len())?;
        gram.ger(1.0, x, x, 1.0);
        cross.ger(1.0, y, x, 1.0);
    }
    ftl_update(&gram, &cross, ridge, r_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtlConfig {
    pub k: usize,
    pub ridge: f64,
    pub r_m: f64,
    /// Refit every `cadence` steps.
    pub cadence: usize,
    pub freeze_y_block: bool,
    pub solver: FtlSolver,
}

impl FtlConfig {
    /// Refit every step up to T = 2000, every 10 steps beyond.
    pub fn default_cadence(horizon: usize) -> usize {
        if horizon <= 2000 {
            1
        } else {
            10
        }
    }
}

/// Regularized follow-the-leader over `traj`, predicting before each refit.
pub fn run_ftl(traj: &Trajectory, bank: &FilterBank, config: &FtlConfig) -> Result<OnlineRun> {
    check_dim("FTL config k vs filter bank", bank.k(), config.k)?;
    if config.cadence == 0 {
        return Err(Error::InvalidArgument("FTL cadence must be >= 1".into()));
    }
    let layout = FeatureLayout::online(traj.n(), traj.m(), bank.k());
    let features = featurize_online_all(traj.inputs(), traj.outputs(), bank)?;
    let (f, targets) = comparator_problem(&features, traj, &layout, config.freeze_y_block);
    let p = f.nrows();
    let m = layout.m;
    let mut w = DMatrix::zeros(m, p);
    if !config.freeze_y_block {
        w.columns_mut(layout.y_offset(), m).copy_from(&DMatrix::identity(m, m));
        linalg::project_frobenius(&mut w, config.r_m);
    }
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(m, p);
    let mut predictions = Vec::with_capacity(traj.len());
    let mut losses = Vec::with_capacity(traj.len());
    let mut norms = Vec::with_capacity(traj.len());
    let mut total = 0.0;
    for t in 0..traj.len() {
        let x = f.column(t);
        let base = if config.freeze_y_block {
            traj.prev_output(t + 1)
        } else {
            DVector::zeros(m)
        };
        let pred = base + &w * x;
        let l = (&pred - &traj.outputs()[t]).norm_squared();
        total += l;
        predictions.push(pred);
        losses.push(l);
        gram.ger(1.0, &x, &x, 1.0);
        cross.ger(1.0, &targets.column(t), &x, 1.0);
        if (t + 1) % config.cadence == 0 {
            w = match config.solver {
                FtlSolver::Direct => ftl_update(&gram, &cross, config.ridge, config.r_m)?,
                FtlSolver::WarmCg { max_iters, tol } => {
                    ftl_update_warm(&gram, &cross, config.ridge, config.r_m, &w, max_iters, tol)?
                }
            };
        }
        norms.push(w.norm());
    }
    let comparator = best_fixed(&f, &targets, config.r_m)?;
    let report = RegretReport::new(total, comparator.loss, ComparatorKind::BestFixed, traj.len());
    let final_matrix = if config.freeze_y_block {
        let mut full = DMatrix::zeros(m, layout.width());
        full.columns_mut(0, p).copy_from(&w);
        full.columns_mut(layout.y_offset(), m).copy_from(&DMatrix::identity(m, m));
        full
    } else {
        w
    };
    Ok(OnlineRun {
        predictions,
        losses,
        norms,
        final_matrix,
        layout,
        report,
        comparator,
    })
}

/// Outcome of replaying projected OGD from M = 0 over fixed data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayResult {
    pub total_loss: f64,
    pub max_gradient_norm: f64,
}

/// Projected OGD over the columns of `features`/`targets`, no frozen block.
pub fn ogd_replay(features: &DMatrix<f64>, targets: &DMatrix<f64>, eta: f64, r_m: f64) -> Result<ReplayResult> {
    check_dim("replay sample count", features.ncols(), targets.ncols())?;
    let mut m = DMatrix::zeros(targets.nrows(), features.nrows());
    let mut total = 0.0;
    let mut max_grad = 0.0_f64;
    for t in 0..features.ncols() {
        let x = features.column(t).into_owned();
        let y = targets.column(t).into_owned();
        total += loss(&m, &x, &y);
        let g = gradient(&m, &x, &y);
        max_grad = max_grad.max(g.norm());
        m -= g * eta;
        linalg::project_frobenius(&mut m, r_m);
    }
    Ok(ReplayResult {
        total_loss: total,
        max_gradient_norm: max_grad,
    })
}

/// A-priori gradient bound max_t 2 (r_m |x_t| + |y_t|) |x_t| over the R_M ball.
pub fn gradient_bound(features: &DMatrix<f64>, targets: &DMatrix<f64>, r_m: f64) -> f64 {
    (0..features.ncols())
        .map(|t| {
            let xn = features.column(t).norm();
            2.0 * (r_m * xn + targets.column(t).norm()) * xn
        })
        .fold(0.0, f64::max)
}
