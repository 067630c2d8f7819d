//! Symmetric linear dynamical systems, their closed-form outputs, the
//! derivative comparator, and the benchmark systems.
//!
//! Timing: the state starts at s_0 = h0 and s_t = A s_{t-1} + B x_t + eta_t,
//! y_t = C s_t + D x_t + xi_t for t = 1..T, so noiselessly
//! y_t = sum_{i=0}^{t-1} C A^i B x_{t-i} + C A^t h0 + D x_t.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::{self, StreamRng};

/// Slack on the spectrum of A when checking 0 <= A <= I.
pub const SPECTRUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LdsParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h0: DVector<f64>,
    r_theta: f64,
}

impl LdsParams {
    /// Validates shapes, symmetry and 0 <= A <= I; R_Theta defaults to the
    /// smallest admissible value.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, h0: DVector<f64>) -> Result<Self> {
        let sd = a.nrows();
        check_dim("A columns", sd, a.ncols())?;
        check_dim("B rows", sd, b.nrows())?;
        check_dim("C columns", sd, c.ncols())?;
        check_dim("D rows", c.nrows(), d.nrows())?;
        check_dim("D columns", b.ncols(), d.ncols())?;
        check_dim("h0 length", sd, h0.len())?;
        if sd == 0 || b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidArgument("LDS dimensions d, n, m must be positive".into()));
        }
        for m in [&a, &b, &c, &d] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("LDS parameters".into()));
            }
        }
        if h0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("LDS initial state".into()));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("A must be symmetric (asymmetry {asym:e})")));
        }
        let (vals, _) = linalg::symmetric_eigen(&a)?;
        let (lo, hi) = (vals[sd - 1], vals[0]);
        if lo < -SPECTRUM_TOL || hi > 1.0 + SPECTRUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "A must satisfy 0 <= A <= I, spectrum spans [{lo}, {hi}]"
            )));
        }
        let r_theta = [b.norm(), c.norm(), d.norm(), h0.norm()].into_iter().fold(0.0, f64::max);
        Ok(Self { a, b, c, d, h0, r_theta })
    }

    /// System with A = diag(alphas).
    pub fn diagonal(alphas: &[f64], b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, h0: DVector<f64>) -> Result<Self> {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(alphas));
        Self::new(a, b, c, d, h0)
    }

    /// Declare a larger norm bound R_Theta.
    pub fn with_r_theta(mut self, r_theta: f64) -> Result<Self> {
        if r_theta + 1e-12 < self.r_theta {
            return Err(Error::InvalidArgument(format!(
                "declared R_Theta {r_theta} is below the parameter norms {}",
                self.r_theta
            )));
        }
        self.r_theta = r_theta;
        Ok(self)
    }

    pub fn with_h0(mut self, h0: DVector<f64>) -> Result<Self> {
        check_dim("h0 length", self.state_dim(), h0.len())?;
        self.r_theta = self.r_theta.max(h0.norm());
        self.h0 = h0;
        Ok(self)
    }

    pub fn r_theta(&self) -> f64 {
        self.r_theta
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.state_dim();
        (0..d).all(|r| (0..d).all(|c| r == c || self.a[(r, c)] == 0.0))
    }

    /// Diagonal of A when A is diagonal.
    pub fn alphas(&self) -> Option<Vec<f64>> {
        self.is_diagonal().then(|| self.a.diagonal().iter().copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub process_std: f64,
    pub observation_std: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(process_std: f64, observation_std: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            process_std,
            observation_std,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noiseless() -> Self {
        Self {
            process_std: 0.0,
            observation_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.process_std >= 0.0 && self.observation_std >= 0.0)
            || !self.process_std.is_finite()
            || !self.observation_std.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviations must be finite and >= 0, got ({}, {})",
                self.process_std, self.observation_std
            )));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.process_std == 0.0 && self.observation_std == 0.0
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process_std: 0.1,
            observation_std: 0.1,
            seed: 0,
        }
    }
}

/// Aligned inputs x_1..x_T and outputs y_1..y_T.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    inputs: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
    r_x: f64,
    l_y: f64,
}

impl Trajectory {
    /// R_x and L_y are measured from the data; L_y includes y_1 - y_0 with y_0 = 0.
    pub fn new(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        check_dim("trajectory output count", inputs.len(), outputs.len())?;
        let n = inputs.first().map(|x| x.len()).unwrap_or(0);
        let m = outputs.first().map(|y| y.len()).unwrap_or(0);
        for x in &inputs {
            check_dim("trajectory input width", n, x.len())?;
        }
        for y in &outputs {
            check_dim("trajectory output width", m, y.len())?;
        }
        if inputs.iter().chain(&outputs).any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("trajectory values".into()));
        }
        let r_x = inputs.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let mut l_y = 0.0_f64;
        for t in 0..outputs.len() {
            let step = if t == 0 { outputs[0].norm() } else { (&outputs[t] - &outputs[t - 1]).norm() };
            l_y = l_y.max(step);
        }
        Ok(Self { inputs, outputs, r_x, l_y })
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.inputs.first().map(|x| x.len()).unwrap_or(0)
    }

    pub fn m(&self) -> usize {
        self.outputs.first().map(|y| y.len()).unwrap_or(0)
    }

    pub fn r_x(&self) -> f64 {
        self.r_x
    }

    pub fn l_y(&self) -> f64 {
        self.l_y
    }

    /// y_{t-1} for 1-based t, with y_0 = 0.
    pub fn prev_output(&self, t: usize) -> DVector<f64> {
        if t <= 1 {
            DVector::zeros(self.m())
        } else {
            self.outputs[t - 2].clone()
        }
    }

    /// Differences y_t - y_{t-1} with y_0 = 0.
    pub fn output_differences(&self) -> Vec<DVector<f64>> {
        (1..=self.len()).map(|t| &self.outputs[t - 1] - self.prev_output(t)).collect()
    }
}

fn check_input_width(params: &LdsParams, inputs: &[DVector<f64>]) -> Result<()> {
    for x in inputs {
        check_dim("input width", params.input_dim(), x.len())?;
    }
    Ok(())
}

/// Run the recurrence; noise draws come from stream 0 of `noise.seed`.
pub fn simulate(params: &LdsParams, inputs: &[DVector<f64>], noise: &NoiseConfig) -> Result<Trajectory> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("simulation needs T >= 1 inputs".into()));
    }
    check_input_width(params, inputs)?;
    noise.validate()?;
    let mut r = rng::stream(noise.seed, 0);
    let mut s = params.h0.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    for x in inputs {
        s = &params.a * &s + &params.b * x;
        if noise.process_std > 0.0 {
            s += rng::gaussian_vector(&mut r, params.state_dim(), noise.process_std);
        }
        let mut y = &params.c * &s + &params.d * x;
        if noise.observation_std > 0.0 {
            y += rng::gaussian_vector(&mut r, params.output_dim(), noise.observation_std);
        }
        outputs.push(y);
    }
    Trajectory::new(inputs.to_vec(), outputs)
}

/// Noiseless y_t (1-based) from the closed-form impulse response.
pub fn impulse_response_output(params: &LdsParams, inputs: &[DVector<f64>], t: usize) -> Result<DVector<f64>> {
    if t == 0 || t > inputs.len() {
        return Err(Error::InvalidArgument(format!("time {t} outside 1..={}", inputs.len())));
    }
    check_input_width(params, inputs)?;
    let mut acc = &params.d * &inputs[t - 1];
    let mut power = DMatrix::identity(params.state_dim(), params.state_dim());
    for i in 0..t {
        acc += &params.c * (&power * (&params.b * &inputs[t - 1 - i]));
        power = &params.a * power;
    }
    acc += &params.c * (power * &params.h0);
    Ok(acc)
}

/// Comparator prediction y_{t-1} + (CB + D) x_t - D x_{t-1}
/// + sum_{i=1}^{t-1} C (A^i - A^{i-1}) B x_{t-i} + C (A^t - A^{t-1}) h0, with y_0 = 0.
pub fn derivative_predictor(params: &LdsParams, traj: &Trajectory, t: usize) -> Result<DVector<f64>> {
    if t == 0 || t > traj.len() {
        return Err(Error::InvalidArgument(format!("time {t} outside 1..={}", traj.len())));
    }
    check_input_width(params, traj.inputs())?;
    check_dim("trajectory output width", params.output_dim(), traj.m())?;
    let xs = traj.inputs();
    let cb = &params.c * &params.b;
    let mut pred = traj.prev_output(t) + (&cb + &params.d) * &xs[t - 1];
    if t >= 2 {
        pred -= &params.d * &xs[t - 2];
    }
    let sd = params.state_dim();
    let mut prev_power = DMatrix::identity(sd, sd);
    let mut power = params.a.clone();
    for i in 1..t {
        pred += &params.c * ((&power - &prev_power) * (&params.b * &xs[t - 1 - i]));
        prev_power = power.clone();
        power = &params.a * power;
    }
    // Loop leaves power = A^t, prev_power = A^{t-1}.
    pred += &params.c * ((power - prev_power) * &params.h0);
    Ok(pred)
}

/// All comparator predictions in O(T d^2), using the noiseless state s_t:
/// y_hat_t = y_{t-1} + C (s_t - s_{t-1}) + D (x_t - x_{t-1}).
pub fn derivative_predictions(params: &LdsParams, traj: &Trajectory) -> Result<Vec<DVector<f64>>> {
    check_input_width(params, traj.inputs())?;
    check_dim("trajectory output width", params.output_dim(), traj.m())?;
    let mut s_prev = params.h0.clone();
    let mut x_prev = DVector::zeros(params.input_dim());
    let mut out = Vec::with_capacity(traj.len());
    for (idx, x) in traj.inputs().iter().enumerate() {
        let s = &params.a * &s_prev + &params.b * x;
        out.push(traj.prev_output(idx + 1) + &params.c * (&s - &s_prev) + &params.d * (x - &x_prev));
        s_prev = s;
        x_prev = x.clone();
    }
    Ok(out)
}

/// Rotate to the eigenbasis of A: (Lambda, U^T B, C U, D, U^T h0).
/// Eigenvalues within tolerance of [0, 1] are clamped into it.
pub fn diagonalize(params: &LdsParams) -> Result<LdsParams> {
    let (vals, u) = linalg::symmetric_eigen(&params.a)?;
    let alphas: Vec<f64> = vals.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let ut = u.transpose();
    LdsParams::diagonal(&alphas, &ut * &params.b, &params.c * &u, params.d.clone(), &ut * &params.h0)?
        .with_r_theta(params.r_theta.max(0.0))
}

/// (2 |B|_F |C|_F + 2 |D|_F) R_x + |C|_F |h0|.
pub fn lipschitz_bound(params: &LdsParams, r_x: f64) -> f64 {
    (2.0 * params.b.norm() * params.c.norm() + 2.0 * params.d.norm()) * r_x + params.c.norm() * params.h0.norm()
}

/// Input sequence generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputGenerator {
    /// i.i.d. N(0, std^2) coordinates.
    Gaussian { std: f64 },
    /// Piecewise-constant blocks; each block is active with probability
    /// `duty`, holding a U[-magnitude, magnitude] vector, else zero.
    BlockImpulse { block_len: usize, duty: f64, magnitude: f64 },
}

impl InputGenerator {
    pub fn block_impulse_default() -> Self {
        Self::BlockImpulse {
            block_len: 20,
            duty: 0.25,
            magnitude: 1.0,
        }
    }

    pub fn generate(&self, n: usize, len: usize, r: &mut StreamRng) -> Result<Vec<DVector<f64>>> {
        match *self {
            Self::Gaussian { std } => {
                if !(std >= 0.0 && std.is_finite()) {
                    return Err(Error::InvalidArgument(format!("input std must be >= 0, got {std}")));
                }
                Ok((0..len).map(|_| rng::gaussian_vector(r, n, std)).collect())
            }
            Self::BlockImpulse {
                block_len,
                duty,
                magnitude,
            } => {
                if block_len == 0 || !(0.0..=1.0).contains(&duty) || !(magnitude >= 0.0 && magnitude.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "block impulse needs block_len >= 1, duty in [0, 1], magnitude >= 0; got ({block_len}, {duty}, {magnitude})"
                    )));
                }
                let mut out = Vec::with_capacity(len);
                while out.len() < len {
                    let active = r.random::<f64>() < duty;
                    let level = DVector::from_fn(n, |_, _| {
                        let u: f64 = r.random_range(-1.0..=1.0);
                        u * magnitude
                    });
                    let level = if active { level } else { DVector::zeros(n) };
                    for _ in 0..block_len.min(len - out.len()) {
                        out.push(level.clone());
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    SisoHard,
    Mimo10,
}

impl std::str::FromStr for SystemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siso_hard" => Ok(Self::SisoHard),
            "mimo_10" => Ok(Self::Mimo10),
            other => Err(Error::InvalidArgument(format!(
                "unknown system {other:?} (expected siso_hard or mimo_10)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSystem {
    pub params: LdsParams,
    pub inputs: InputGenerator,
}

/// The ill-conditioned SISO system and the 10-dimensional MIMO system.
/// `seed` only affects mimo_10's random C.
pub fn synthetic_system(name: SystemName, seed: u64) -> Result<SyntheticSystem> {
    match name {
        SystemName::SisoHard => Ok(SyntheticSystem {
            params: LdsParams::diagonal(
                &[0.999, 0.5],
                DMatrix::from_element(2, 1, 1.0),
                DMatrix::from_element(1, 2, 1.0),
                DMatrix::zeros(1, 1),
                DVector::zeros(2),
            )?,
            inputs: InputGenerator::Gaussian { std: 1.0 },
        }),
        SystemName::Mimo10 => {
            let alphas: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
            let mut r = rng::stream(seed, u64::MAX);
            Ok(SyntheticSystem {
                params: LdsParams::diagonal(
                    &alphas,
                    DMatrix::identity(10, 10),
                    rng::gaussian_matrix(&mut r, 10, 10, 1.0),
                    DMatrix::zeros(10, 10),
                    DVector::zeros(10),
                )?,
                inputs: InputGenerator::block_impulse_default(),
            })
        }
    }
}

/// Random system with spectrum of A uniform on [0, 1] and B, C, D scaled to
/// Frobenius norms drawn uniformly from [r_theta / 2, r_theta]. With
/// `diagonal` false, A is rotated by a random orthogonal matrix.
pub fn random_system(r: &mut StreamRng, d: usize, n: usize, m: usize, r_theta: f64, diagonal: bool) -> Result<LdsParams> {
    let alphas: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
    let scaled = |rows: usize, cols: usize, r: &mut StreamRng| {
        let g = rng::gaussian_matrix(r, rows, cols, 1.0);
        let target = r_theta * r.random_range(0.5..=1.0);
        let norm = g.norm();
        if norm > 0.0 {
            g * (target / norm)
        } else {
            g
        }
    };
    let b = scaled(d, n, r);
    let c = scaled(m, d, r);
    let dm = scaled(m, n, r);
    let params = if diagonal {
        LdsParams::diagonal(&alphas, b, c, dm, DVector::zeros(d))?
    } else {
        let u = rng::gaussian_matrix(r, d, d, 1.0).qr().q();
        let a = &u * DMatrix::from_diagonal(&DVector::from_vec(alphas)) * u.transpose();
        let a = (&a + a.transpose()) * 0.5;
        LdsParams::new(a, b, c, dm, DVector::zeros(d))?
    };
    params.with_r_theta(r_theta)
}

/// Forced damped pendulum theta'' = -(g/L) sin theta - gamma theta' + u / (m L^2) + w.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumConfig {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
    pub theta0: f64,
    pub omega0: f64,
    /// Std of the per-step acceleration noise w.
    pub process_std: f64,
    /// Std of the additive noise on the observed angle.
    pub observation_std: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 1.0,
            damping: 0.1,
            dt: 0.01,
            theta0: 0.0,
            omega0: 0.0,
            process_std: 0.1,
            observation_std: 1e-3,
        }
    }
}

impl PendulumConfig {
    fn validate(&self) -> Result<()> {
        let positive = [self.mass, self.length, self.dt];
        let nonneg = [self.gravity, self.damping, self.process_std, self.observation_std];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || !self.theta0.is_finite()
            || !self.omega0.is_finite()
        {
            return Err(Error::InvalidArgument(format!("invalid pendulum config {self:?}")));
        }
        Ok(())
    }

    /// Mechanical energy 1/2 m L^2 omega^2 + m g L (1 - cos theta).
    pub fn energy(&self, theta: f64, omega: f64) -> f64 {
        0.5 * self.mass * self.length.powi(2) * omega * omega + self.mass * self.gravity * self.length * (1.0 - theta.cos())
    }
}

/// Angle and angular velocity after each step, for diagnostics.
pub fn pendulum_states(config: &PendulumConfig, inputs: &[DVector<f64>], seed: u64) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    for x in inputs {
        check_dim("pendulum input width", 1, x.len())?;
    }
    let mut r = rng::stream(seed, 1);
    let g_over_l = config.gravity / config.length;
    let inertia = config.mass * config.length * config.length;
    let (mut th, mut om) = (config.theta0, config.omega0);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let w = if config.process_std > 0.0 {
            config.process_std * rng::gaussian(&mut r)
        } else {
            0.0
        };
        let drive = x[0] / inertia + w;
        let accel = |th: f64, om: f64| -g_over_l * th.sin() - config.damping * om + drive;
        let h = config.dt;
        let (k1t, k1o) = (om, accel(th, om));
        let (k2t, k2o) = (om + 0.5 * h * k1o, accel(th + 0.5 * h * k1t, om + 0.5 * h * k1o));
        let (k3t, k3o) = (om + 0.5 * h * k2o, accel(th + 0.5 * h * k2t, om + 0.5 * h * k2o));
        let (k4t, k4o) = (om + h * k3o, accel(th + h * k3t, om + h * k3o));
        th += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        om += h / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
        if !(th.is_finite() && om.is_finite()) {
            return Err(Error::NonFinite(format!("pendulum state diverged at step {}", out.len() + 1)));
        }
        out.push((th, om));
    }
    Ok(out)
}

/// Simulate the pendulum with RK4; the output is the (noisy) angle.
pub fn pendulum_simulate(config: &PendulumConfig, inputs: &[DVector<f64>], seed: u64) -> Result<Trajectory> {
    let states = pendulum_states(config, inputs, seed)?;
    let mut r = rng::stream(seed, 2);
    let outputs = states
        .iter()
        .map(|&(th, _)| {
            let xi = if config.observation_std > 0.0 {
                config.observation_std * rng::gaussian(&mut r)
            } else {
                0.0
            };
            DVector::from_element(1, th + xi)
        })
        .collect();
    Trajectory::new(inputs.to_vec(), outputs)
}
