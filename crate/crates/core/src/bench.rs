//! Baselines and the named experiments: every seed runs the wave-filter
//! learner and the configured baselines on one trajectory, and emits one
//! result row per (learner, t) plus a summary reduced in seed order.
//!
//! EM and subspace identification baselines are not implemented; summaries
//! say so explicitly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{build_filter_bank, featurize_online_all, FeatureLayout, FilterBank, FilterMethod};
use crate::io;
use crate::lds::{self, InputGenerator, NoiseConfig, PendulumConfig, SystemName, Trajectory};
use crate::linalg;
use crate::online::{self, FtlConfig, FtlSolver, OnlineConfig, OnlineRun};
use crate::rng;

/// RNG stream used for experiment inputs; 0 is the LDS noise, 1 and 2 the
/// pendulum's process and observation noise.
const INPUT_STREAM: u64 = 3;

pub const EXCLUDED_BASELINES: &str = "EM and subspace-identification (SSID) baselines are not implemented";

/// y_hat_t = y_{t-1}, with y_0 = 0.
pub fn baseline_last_value(traj: &Trajectory) -> Vec<DVector<f64>> {
    (1..=traj.len()).map(|t| traj.prev_output(t)).collect()
}

/// Window [x_t, x_{t-1}, ..., x_{t-tau}], zero-padded before the start.
fn ar_window(inputs: &[DVector<f64>], t: usize, tau: usize) -> DVector<f64> {
    let n = inputs[0].len();
    let mut w = DVector::zeros(n * (tau + 1));
    for lag in 0..=tau {
        if lag <= t {
            w.rows_mut(lag * n, n).copy_from(&inputs[t - lag]);
        }
    }
    w
}

/// Rolling least squares of y_t on the last tau + 1 inputs, refit on the
/// prefix before every prediction. The normal equations are accumulated
/// incrementally. With ridge 0 the minimum-norm solution is used, so rank
/// deficient prefixes do not fail; an all-zero prefix predicts 0.
pub fn baseline_ar(traj: &Trajectory, tau: usize, ridge: f64) -> Result<Vec<DVector<f64>>> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("AR ridge must be finite and >= 0, got {ridge}")));
    }
    let p = traj.n() * (tau + 1);
    let m = traj.m();
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(m, p);
    let mut preds = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let w = ar_window(traj.inputs(), t, tau);
        let pred = if gram.iter().any(|g| *g != 0.0) {
            let coef = if ridge > 0.0 {
                linalg::ridge_solve(&gram, &cross, ridge)?
            } else {
                linalg::pinv_solve(&gram, &cross)?
            };
            coef * &w
        } else {
            DVector::zeros(m)
        };
        preds.push(pred);
        gram.ger(1.0, &w, &w, 1.0);
        cross.ger(1.0, &traj.outputs()[t], &w, 1.0);
    }
    Ok(preds)
}

/// A literal number or the string "auto".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Setting {
    pub const AUTO: Setting = Setting::Auto(AutoTag::Auto);

    fn resolve(self, auto: impl FnOnce() -> f64) -> f64 {
        match self {
            Setting::Value(v) => v,
            Setting::Auto(_) => auto(),
        }
    }

    fn check_positive(self, what: &str) -> Result<()> {
        match self {
            Setting::Value(v) if !(v.is_finite() && v > 0.0) => {
                Err(Error::InvalidArgument(format!("{what} must be positive or \"auto\", got {v}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ogd,
    Ftl,
}

/// Wave-filter learner settings. `eta = "auto"` is D/(G sqrt T) with
/// D = 2 R_M and G the a-priori gradient bound over the episode's features;
/// `r_m = "auto"` is R_Theta^2 sqrt k (R_Theta = 1 when the system is unknown).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    pub method: FilterMethod,
    pub eta: Setting,
    pub r_m: Setting,
    /// FTL only.
    pub ridge: f64,
    /// FTL only; None selects the horizon-dependent default.
    pub cadence: Option<usize>,
    pub freeze_y_block: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ogd,
            k: 25,
            method: FilterMethod::Eigen,
            eta: Setting::AUTO,
            r_m: Setting::AUTO,
            ridge: 1.0,
            cadence: None,
            freeze_y_block: true,
        }
    }
}

impl LearnerConfig {
    pub fn id(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Ogd => "wave_ogd",
            Algorithm::Ftl => "wave_ftl",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("learner k must be >= 1".into()));
        }
        self.eta.check_positive("eta")?;
        self.r_m.check_positive("R_M")?;
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if self.cadence == Some(0) {
            return Err(Error::InvalidArgument("cadence must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Baseline {
    LastValue,
    Ar { tau: usize, ridge: f64 },
}

impl Baseline {
    pub fn id(&self) -> String {
        match self {
            Baseline::LastValue => "last_value".into(),
            Baseline::Ar { tau, .. } => format!("ar_{tau}"),
        }
    }

    pub fn predict(&self, traj: &Trajectory) -> Result<Vec<DVector<f64>>> {
        match *self {
            Baseline::LastValue => Ok(baseline_last_value(traj)),
            Baseline::Ar { tau, ridge } => baseline_ar(traj, tau, ridge),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemSpec {
    /// A named synthetic LDS with Gaussian process/observation noise.
    Synthetic {
        name: SystemName,
        process_std: f64,
        observation_std: f64,
    },
    Pendulum {
        config: PendulumConfig,
    },
    /// A recorded trajectory; every seed replays it unchanged.
    Trajectory {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub system: SystemSpec,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::LastValue, Baseline::Ar { tau: 2, ridge: 1e-3 }]
}

pub const NAMED_EXPERIMENTS: [&str; 3] = ["siso_hard", "mimo_10", "pendulum"];

impl ExperimentConfig {
    /// Defaults: siso_hard T = 4000, mimo_10 and pendulum T = 2000, seeds 0..10, k = 25.
    pub fn named(name: &str) -> Result<Self> {
        let (system, horizon) = match name {
            "siso_hard" | "mimo_10" => (
                SystemSpec::Synthetic {
                    name: name.parse()?,
                    process_std: 0.1,
                    observation_std: 0.1,
                },
                if name == "siso_hard" { 4000 } else { 2000 },
            ),
            "pendulum" => (
                SystemSpec::Pendulum {
                    config: PendulumConfig::default(),
                },
                2000,
            ),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown experiment {other:?}; expected one of {NAMED_EXPERIMENTS:?}"
                )))
            }
        };
        Ok(Self {
            experiment: name.to_string(),
            system,
            horizon,
            seeds: (0..10).collect(),
            learner: LearnerConfig::default(),
            baselines: default_baselines(),
            out: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("experiment needs at least one seed".into()));
        }
        if self.experiment.is_empty() || !self.experiment.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::InvalidArgument(format!("experiment name {:?} must be [A-Za-z0-9_-]+", self.experiment)));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidArgument("experiment horizon must be >= 2".into()));
        }
        self.learner.validate()?;
        if let SystemSpec::Synthetic { process_std, observation_std, .. } = self.system {
            NoiseConfig::new(process_std, observation_std, 0)?;
        }
        Ok(())
    }

    /// Trajectory and R_Theta (None when unknown) for one seed.
    pub fn trajectory(&self, seed: u64) -> Result<(Trajectory, Option<f64>)> {
        let mut input_rng = rng::stream(seed, INPUT_STREAM);
        match &self.system {
            SystemSpec::Synthetic { name, process_std, observation_std } => {
                let sys = lds::synthetic_system(*name, seed)?;
                let xs = sys.inputs.generate(sys.params.input_dim(), self.horizon, &mut input_rng)?;
                let noise = NoiseConfig::new(*process_std, *observation_std, seed)?;
                Ok((lds::simulate(&sys.params, &xs, &noise)?, Some(sys.params.r_theta())))
            }
            SystemSpec::Pendulum { config } => {
                let xs = InputGenerator::block_impulse_default().generate(1, self.horizon, &mut input_rng)?;
                Ok((lds::pendulum_simulate(config, &xs, seed)?, None))
            }
            SystemSpec::Trajectory { path } => {
                let traj = io::read_trajectory(path)?;
                if traj.len() != self.horizon {
                    return Err(Error::InvalidArgument(format!(
                        "trajectory {} has {} steps, config says T = {}",
                        path.display(),
                        traj.len(),
                        self.horizon
                    )));
                }
                Ok((traj, None))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub t: usize,
    pub learner: String,
    pub loss: f64,
    /// Running mean of `loss` over 1..=t.
    pub cumulative_mse: f64,
}

/// Running means of per-step losses.
pub fn cumulative_mse(losses: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| {
            sum += l;
            sum / (i + 1) as f64
        })
        .collect()
}

/// Resolved learner hyperparameters, recorded in the summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLearner {
    pub eta: f64,
    pub r_m: f64,
    pub cadence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Final cumulative MSE per learner id.
    pub final_mse: BTreeMap<String, f64>,
    pub regret: online::RegretReport,
    pub resolved: ResolvedLearner,
    /// Cumulative regret against the hindsight comparator at each checkpoint.
    pub regret_curve: Vec<(usize, f64)>,
    #[serde(skip)]
    pub losses: BTreeMap<String, Vec<f64>>,
}

fn checkpoints(horizon: usize) -> Vec<usize> {
    let step = (horizon / 20).max(1);
    let mut pts: Vec<usize> = (1..=horizon / step).map(|i| i * step).collect();
    if pts.last() != Some(&horizon) {
        pts.push(horizon);
    }
    pts
}

/// Runs the configured learner; `r_theta` feeds `r_m = "auto"`.
pub fn run_learner(traj: &Trajectory, bank: &FilterBank, cfg: &LearnerConfig, r_theta: f64) -> Result<(OnlineRun, ResolvedLearner)> {
    let r_m = cfg.r_m.resolve(|| r_theta * r_theta * (cfg.k as f64).sqrt());
    match cfg.algorithm {
        Algorithm::Ogd => {
            let eta = match cfg.eta {
                Setting::Value(v) => v,
                Setting::Auto(_) => {
                    let layout = FeatureLayout::online(traj.n(), traj.m(), cfg.k);
                    let feats = featurize_online_all(traj.inputs(), traj.outputs(), bank)?;
                    let (f, y) = online::comparator_problem(&feats, traj, &layout, cfg.freeze_y_block);
                    let g = online::gradient_bound(&f, &y, r_m);
                    if g > 0.0 {
                        2.0 * r_m / (g * (traj.len() as f64).sqrt())
                    } else {
                        1.0
                    }
                }
            };
            let config = OnlineConfig {
                k: cfg.k,
                eta,
                r_m,
                freeze_y_block: cfg.freeze_y_block,
            };
            Ok((online::run_online(traj, bank, &config)?, ResolvedLearner { eta, r_m, cadence: None }))
        }
        Algorithm::Ftl => {
            let cadence = cfg.cadence.unwrap_or_else(|| FtlConfig::default_cadence(traj.len()));
            let config = FtlConfig {
                k: cfg.k,
                ridge: cfg.ridge,
                r_m,
                cadence,
                freeze_y_block: cfg.freeze_y_block,
                solver: if cadence > 1 {
                    FtlSolver::WarmCg { max_iters: 50, tol: 1e-10 }
                } else {
                    FtlSolver::Direct
                },
            };
            let run = online::run_ftl(traj, bank, &config)?;
            Ok((run, ResolvedLearner { eta: 0.0, r_m, cadence: Some(cadence) }))
        }
    }
}

/// Per-step loss of the fixed hindsight comparator.
fn comparator_losses(traj: &Trajectory, bank: &FilterBank, run: &OnlineRun, freeze: bool) -> Result<Vec<f64>> {
    let feats = featurize_online_all(traj.inputs(), traj.outputs(), bank)?;
    let (f, y) = online::comparator_problem(&feats, traj, &run.layout, freeze);
    let pred = &run.comparator.matrix * &f;
    Ok((0..traj.len()).map(|t| (y.column(t) - pred.column(t)).norm_squared()).collect())
}

/// One seed: the learner and every baseline on the same trajectory.
pub fn run_seed(config: &ExperimentConfig, bank: &FilterBank, seed: u64) -> Result<SeedResult> {
    let (traj, r_theta) = config.trajectory(seed)?;
    let (run, resolved) = run_learner(&traj, bank, &config.learner, r_theta.unwrap_or(1.0))?;
    let comp = comparator_losses(&traj, bank, &run, config.learner.freeze_y_block)?;
    let mut regret = 0.0;
    let mut curve_points = checkpoints(traj.len()).into_iter().peekable();
    let mut regret_curve = Vec::new();
    for t in 0..traj.len() {
        regret += run.losses[t] - comp[t];
        if curve_points.peek() == Some(&(t + 1)) {
            regret_curve.push((t + 1, regret));
            curve_points.next();
        }
    }
    let mut losses = BTreeMap::new();
    losses.insert(config.learner.id().to_string(), run.losses.clone());
    for b in &config.baselines {
        let preds = b.predict(&traj)?;
        let l = preds
            .iter()
            .zip(traj.outputs())
            .map(|(p, y)| (p - y).norm_squared())
            .collect();
        if losses.insert(b.id(), l).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate learner id {}", b.id())));
        }
    }
    let final_mse = losses
        .iter()
        .map(|(id, l)| (id.clone(), l.iter().sum::<f64>() / l.len() as f64))
        .collect();
    Ok(SeedResult {
        seed,
        final_mse,
        regret: run.report,
        resolved,
        regret_curve,
        losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub id: String,
    pub mean_final_mse: f64,
    pub final_mse: Vec<f64>,
    /// Seeds on which this learner's final MSE is below last_value's.
    pub wins_vs_last_value: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub learners: Vec<LearnerSummary>,
    /// Mean over seeds of (learner loss - comparator loss) / T.
    pub mean_normalized_regret: f64,
    pub comparator: String,
    /// Mean cumulative regret over seeds at each checkpoint.
    pub regret_curve: Vec<(usize, f64)>,
    pub per_seed: Vec<SeedResult>,
    pub excluded: String,
    pub config: ExperimentConfig,
}

pub fn summarize(config: &ExperimentConfig, results: &[SeedResult]) -> Summary {
    let ids: Vec<String> = results
        .first()
        .map(|r| r.final_mse.keys().cloned().collect())
        .unwrap_or_default();
    let lv: Option<Vec<f64>> = results
        .iter()
        .map(|r| r.final_mse.get("last_value").copied())
        .collect();
    let learners = ids
        .iter()
        .map(|id| {
            let finals: Vec<f64> = results.iter().map(|r| r.final_mse[id]).collect();
            let wins = lv
                .as_ref()
                .filter(|_| id != "last_value")
                .map(|lv| finals.iter().zip(lv).filter(|(a, b)| a < b).count());
            LearnerSummary {
                id: id.clone(),
                mean_final_mse: finals.iter().sum::<f64>() / finals.len() as f64,
                final_mse: finals,
                wins_vs_last_value: wins,
            }
        })
        .collect();
    let count = results.len().max(1) as f64;
    let mean_normalized_regret = results.iter().map(|r| r.regret.normalized_regret).sum::<f64>() / count;
    let regret_curve = results
        .first()
        .map(|first| {
            first
                .regret_curve
                .iter()
                .enumerate()
                .map(|(i, &(t, _))| (t, results.iter().map(|r| r.regret_curve[i].1).sum::<f64>() / count))
                .collect()
        })
        .unwrap_or_default();
    Summary {
        experiment: config.experiment.clone(),
        horizon: config.horizon,
        seeds: config.seeds.clone(),
        learners,
        mean_normalized_regret,
        comparator: "best fixed M in hindsight over the R_M ball".into(),
        regret_curve,
        per_seed: results.to_vec(),
        excluded: EXCLUDED_BASELINES.into(),
        config: config.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub seeds: Vec<SeedResult>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn learner(&self, id: &str) -> Option<&LearnerSummary> {
        self.summary.learners.iter().find(|l| l.id == id)
    }
}

/// Runs all seeds in parallel on the current rayon pool; results keep seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let bank = build_filter_bank(config.horizon, config.learner.k, config.learner.method)?;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, &bank, s))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(config, &seeds);
    Ok(ExperimentResult { seeds, summary })
}

/// Result rows of one seed, learners in id order.
pub fn result_rows(experiment: &str, seed: &SeedResult) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for (id, losses) in &seed.losses {
        for (t, (l, c)) in losses.iter().zip(cumulative_mse(losses)).enumerate() {
            rows.push(ResultRow {
                experiment: experiment.to_string(),
                seed: seed.seed,
                t: t + 1,
                learner: id.clone(),
                loss: *l,
                cumulative_mse: c,
            });
        }
    }
    rows
}

pub fn result_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("experiment,seed,t,learner,loss,cumulative_mse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.17e},{:.17e}\n",
            r.experiment, r.seed, r.t, r.learner, r.loss, r.cumulative_mse
        ));
    }
    out
}

/// `{experiment}_seed{seed}.csv` per seed and `{experiment}_summary.json`.
pub fn write_experiment(result: &ExperimentResult, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let name = &result.summary.experiment;
    let mut paths: Vec<PathBuf> = result
        .seeds
        .par_iter()
        .map(|s| {
            let path = out.join(format!("{name}_seed{}.csv", s.seed));
            fs::write(&path, result_csv(&result_rows(name, s)))?;
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = out.join(format!("{name}_summary.json"));
    fs::write(&summary, serde_json::to_string_pretty(&result.summary)?)?;
    paths.push(summary);
    Ok(paths)
}
