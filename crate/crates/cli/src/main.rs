//! `wavefilter` command-line front end.
//!
//! Every subcommand reads optional defaults from `--config <json>` (a JSON
//! object whose keys mirror the subcommand's flags; for `experiment` a full
//! experiment config). Flags given on the command line win over the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use wavefilter::batch::{fit_batch, BatchSample, DEFAULT_RIDGE};
use wavefilter::bench::{self, Algorithm, ExperimentConfig, LearnerConfig, Setting};
use wavefilter::filters::{build_filter_bank, FilterMethod};
use wavefilter::io::{self, PredictorSource};
use wavefilter::lds::{self, InputGenerator, NoiseConfig, PendulumConfig, SystemName, Trajectory};
use wavefilter::rng;
use wavefilter::verify::{self, Profile, VerifyOptions};

#[derive(Parser, Debug)]
#[command(name = "wavefilter", version, about = "Wave-filtering for linear dynamical system prediction")]
struct Cli {
    /// JSON file with defaults for the chosen subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a filter bank and write it as CSV plus a JSON sidecar.
    Filters(FiltersArgs),
    /// Simulate a system and write the trajectory.
    Simulate(SimulateArgs),
    /// Run the online learner over a recorded trajectory.
    Online(OnlineArgs),
    /// Fit the batch learner on the trajectories listed in a manifest.
    Batch(BatchArgs),
    /// Run a named or configured experiment over several seeds.
    Experiment(ExperimentArgs),
    /// Run the invariant suite; exits nonzero if any invariant fails.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FiltersArgs {
    /// Horizon T.
    #[arg(long = "horizon", short = 'T')]
    #[serde(rename = "T")]
    horizon: Option<usize>,
    /// Number of filters.
    #[arg(long)]
    k: Option<usize>,
    /// eigen, ode or hilbert.
    #[arg(long)]
    method: Option<FilterMethod>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulateArgs {
    /// siso_hard, mimo_10, pendulum or random.
    #[arg(long)]
    system: Option<String>,
    /// Horizon T.
    #[arg(long = "horizon", short = 'T')]
    #[serde(rename = "T")]
    horizon: Option<usize>,
    /// Process noise std.
    #[arg(long)]
    process_std: Option<f64>,
    /// Observation noise std.
    #[arg(long)]
    observation_std: Option<f64>,
    /// State dimension of a random system.
    #[arg(long)]
    d: Option<usize>,
    /// Input dimension of a random system.
    #[arg(long)]
    n: Option<usize>,
    /// Output dimension of a random system.
    #[arg(long)]
    m: Option<usize>,
    /// Norm bound R_Theta of a random system.
    #[arg(long)]
    r_theta: Option<f64>,
    /// Gaussian or block-impulse inputs for a random system.
    #[arg(long)]
    inputs: Option<String>,
    /// Seed of a random system's parameters (default: --seed), so several
    /// trajectories can share one system.
    #[arg(long)]
    system_seed: Option<u64>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OnlineArgs {
    /// Trajectory CSV (t, x_*, y_*).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Number of filters.
    #[arg(long)]
    k: Option<usize>,
    /// eigen, ode or hilbert.
    #[arg(long)]
    method: Option<FilterMethod>,
    /// Learning rate, or "auto".
    #[arg(long, value_parser = parse_setting)]
    eta: Option<Setting>,
    /// Frobenius radius, or "auto".
    #[arg(long, value_parser = parse_setting)]
    r_m: Option<Setting>,
    /// ogd or ftl.
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    /// Ridge regularizer.
    #[arg(long)]
    ridge: Option<f64>,
    /// FTL re-solve period in steps.
    #[arg(long)]
    cadence: Option<usize>,
    /// Learn the y_{t-1} block instead of fixing it to the identity.
    #[arg(long)]
    learn_y_block: Option<bool>,
    /// R_Theta used by r_m = auto.
    #[arg(long)]
    r_theta: Option<f64>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BatchArgs {
    /// Training manifest (JSON listing trajectory CSVs).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Optional held-out manifest evaluated with the fitted model.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Number of filters.
    #[arg(long)]
    k: Option<usize>,
    /// eigen or hilbert.
    #[arg(long)]
    method: Option<FilterMethod>,
    /// Ridge regularizer.
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// siso_hard, mimo_10 or pendulum; optional when --config is given.
    name: Option<String>,
    /// Horizon T.
    #[arg(long = "horizon", short = 'T')]
    horizon: Option<usize>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
    /// Number of filters.
    #[arg(long)]
    k: Option<usize>,
    /// ogd or ftl.
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    /// Learning rate, or "auto".
    #[arg(long, value_parser = parse_setting)]
    eta: Option<Setting>,
    /// Frobenius radius, or "auto".
    #[arg(long, value_parser = parse_setting)]
    r_m: Option<Setting>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct VerifyArgs {
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// default or strict.
    #[arg(long)]
    profile: Option<Profile>,
    /// Filter bank CSV replacing the computed bank for its T.
    #[arg(long, requires = "bank_meta")]
    bank: Option<PathBuf>,
    /// JSON sidecar of --bank.
    #[arg(long, requires = "bank")]
    bank_meta: Option<PathBuf>,
}

fn parse_setting(s: &str) -> std::result::Result<Setting, String> {
    if s == "auto" {
        return Ok(Setting::AUTO);
    }
    s.parse::<f64>()
        .map(Setting::Value)
        .map_err(|_| format!("expected a number or \"auto\", got {s:?}"))
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    match s {
        "ogd" => Ok(Algorithm::Ogd),
        "ftl" => Ok(Algorithm::Ftl),
        _ => Err(format!("expected ogd or ftl, got {s:?}")),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Field-wise `flag.or(config)`.
macro_rules! merge {
    ($flags:expr, $file:expr, $($field:ident),+) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )+
    };
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn filters(cli: &Globals, mut a: FiltersArgs) -> Result<()> {
    let file: FiltersArgs = load_config(cli.config.as_deref())?;
    merge!(a, file, horizon, k, method);
    let horizon = a.horizon.context("--horizon is required")?;
    let k = a.k.context("--k is required")?;
    let method = a.method.unwrap_or(FilterMethod::Eigen);
    let bank = build_filter_bank(horizon, k, method)?;
    let stem = format!("filters_T{horizon}_k{k}_{method}");
    let csv = cli.out.join(format!("{stem}.csv"));
    let json = cli.out.join(format!("{stem}.json"));
    io::write_filter_bank(&bank, &csv, &json)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

#[derive(Serialize)]
struct SimulateRecord<'a> {
    system: &'a str,
    params: Option<ParamsRecord>,
    pendulum: Option<PendulumConfig>,
}

#[derive(Serialize)]
struct ParamsRecord {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    h0: Vec<f64>,
    r_theta: f64,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn simulate(cli: &Globals, mut a: SimulateArgs) -> Result<()> {
    let file: SimulateArgs = load_config(cli.config.as_deref())?;
    merge!(a, file, system, horizon, process_std, observation_std, d, n, m, r_theta, inputs, system_seed);
    let system = a.system.unwrap_or_else(|| "siso_hard".into());
    let horizon = a.horizon.context("--horizon is required")?;
    let seed = cli.seed.unwrap_or(0);
    let mut input_rng = rng::stream(seed, 3);
    let (traj, noise, params, pendulum): (Trajectory, Option<NoiseConfig>, _, _) = match system.as_str() {
        "pendulum" => {
            let mut cfg = PendulumConfig::default();
            if let Some(s) = a.process_std {
                cfg.process_std = s;
            }
            if let Some(s) = a.observation_std {
                cfg.observation_std = s;
            }
            let xs = InputGenerator::block_impulse_default().generate(1, horizon, &mut input_rng)?;
            (lds::pendulum_simulate(&cfg, &xs, seed)?, None, None, Some(cfg))
        }
        name => {
            let (params, generator) = if name == "random" {
                let mut r = rng::stream(a.system_seed.unwrap_or(seed), 4);
                let (d, n, m) = (a.d.unwrap_or(5), a.n.unwrap_or(1), a.m.unwrap_or(1));
                let params = lds::random_system(&mut r, d, n, m, a.r_theta.unwrap_or(1.0), false)?;
                let generator = match a.inputs.as_deref().unwrap_or("gaussian") {
                    "gaussian" => InputGenerator::Gaussian { std: 1.0 },
                    "block" => InputGenerator::block_impulse_default(),
                    other => bail!("unknown input generator {other:?}; expected gaussian or block"),
                };
                (params, generator)
            } else {
                let sys = lds::synthetic_system(name.parse::<SystemName>()?, seed)?;
                (sys.params, sys.inputs)
            };
            let noise = NoiseConfig::new(a.process_std.unwrap_or(0.1), a.observation_std.unwrap_or(0.1), seed)?;
            let xs = generator.generate(params.input_dim(), horizon, &mut input_rng)?;
            (lds::simulate(&params, &xs, &noise)?, Some(noise), Some(params), None)
        }
    };
    let meta = io::trajectory_meta(&traj, &system, Some(seed), noise);
    let csv = cli.out.join("trajectory.csv");
    io::write_trajectory(&traj, &meta, &csv, &cli.out.join("trajectory.json"))?;
    let record = SimulateRecord {
        system: &system,
        params: params.map(|p| ParamsRecord {
            a: rows(&p.a),
            b: rows(&p.b),
            c: rows(&p.c),
            d: rows(&p.d),
            h0: p.h0.iter().copied().collect(),
            r_theta: p.r_theta(),
        }),
        pendulum,
    };
    write_json(&cli.out.join("system.json"), &record)?;
    println!("wrote {} ({} steps, n = {}, m = {})", csv.display(), traj.len(), traj.n(), traj.m());
    Ok(())
}

#[derive(Serialize)]
struct OnlineReport {
    learner: &'static str,
    /// Learning rate, or "auto".
    eta: Option<f64>,
    r_m: f64,
    k: usize,
    regret: wavefilter::online::RegretReport,
    final_mse: f64,
    last_value_mse: f64,
}

fn online(cli: &Globals, mut a: OnlineArgs) -> Result<()> {
    let file: OnlineArgs = load_config(cli.config.as_deref())?;
    merge!(a, file, trajectory, k, method, eta, r_m, algorithm, ridge, cadence, learn_y_block, r_theta);
    let path = a.trajectory.context("--trajectory is required")?;
    let traj = io::read_trajectory(&path).with_context(|| format!("reading {}", path.display()))?;
    let defaults = LearnerConfig::default();
    let learner = LearnerConfig {
        algorithm: a.algorithm.unwrap_or(defaults.algorithm),
        k: a.k.unwrap_or(defaults.k),
        method: a.method.unwrap_or(defaults.method),
        eta: a.eta.unwrap_or(defaults.eta),
        r_m: a.r_m.unwrap_or(defaults.r_m),
        ridge: a.ridge.unwrap_or(defaults.ridge),
        cadence: a.cadence.or(defaults.cadence),
        freeze_y_block: !a.learn_y_block.unwrap_or(false),
    };
    learner.validate()?;
    let bank = build_filter_bank(traj.len(), learner.k, learner.method)?;
    let (run, resolved) = bench::run_learner(&traj, &bank, &learner, a.r_theta.unwrap_or(1.0))?;
    let steps = cli.out.join("online_steps.csv");
    fs::write(&steps, io::online_steps_csv(&run.predictions, &run.losses, &run.norms))?;
    let source = match learner.algorithm {
        Algorithm::Ogd => PredictorSource::Ogd,
        Algorithm::Ftl => PredictorSource::Ftl,
    };
    let meta = io::predictor_meta(source, &run.layout, &run.final_matrix, &bank, serde_json::to_value(learner)?);
    io::write_predictor(
        &meta,
        &run.final_matrix,
        &cli.out.join("online_predictor.csv"),
        &cli.out.join("online_predictor.json"),
    )?;
    let len = traj.len() as f64;
    let report = OnlineReport {
        learner: learner.id(),
        eta: (learner.algorithm == Algorithm::Ogd).then_some(resolved.eta),
        r_m: resolved.r_m,
        k: learner.k,
        regret: run.report,
        final_mse: run.losses.iter().sum::<f64>() / len,
        last_value_mse: traj.output_differences().iter().map(|d| d.norm_squared()).sum::<f64>() / len,
    };
    write_json(&cli.out.join("online_report.json"), &report)?;
    println!(
        "{}: final MSE {:.6e} (last value {:.6e}), normalized regret {:.6e}",
        report.learner, report.final_mse, report.last_value_mse, report.regret.normalized_regret
    );
    Ok(())
}

#[derive(Serialize)]
struct BatchReport {
    k: usize,
    method: FilterMethod,
    ridge: f64,
    samples: usize,
    hints: bool,
    train_mse: f64,
    test_mse: Option<f64>,
}

fn batch_samples(manifest: &io::TrainingManifest, trajs: &[Trajectory]) -> Vec<BatchSample> {
    match &manifest.hints {
        Some(hints) => trajs
            .iter()
            .zip(hints)
            .map(|(t, h)| BatchSample::with_hint(t, &DVector::from_column_slice(h)))
            .collect(),
        None => trajs.iter().map(BatchSample::from_trajectory).collect(),
    }
}

fn batch(cli: &Globals, mut a: BatchArgs) -> Result<()> {
    let file: BatchArgs = load_config(cli.config.as_deref())?;
    merge!(a, file, manifest, test, k, method, ridge);
    let path = a.manifest.context("--manifest is required")?;
    let (manifest, trajs) = io::load_training_set(&path).with_context(|| format!("loading {}", path.display()))?;
    let k = a.k.or(manifest.k).unwrap_or(25);
    let method = a.method.or(manifest.method).unwrap_or(FilterMethod::Eigen);
    let ridge = a.ridge.or(manifest.ridge).unwrap_or(DEFAULT_RIDGE);
    let samples = batch_samples(&manifest, &trajs);
    let longest = samples.iter().map(|s| s.inputs.len()).max().unwrap_or(0);
    let bank = build_filter_bank(longest, k, method)?;
    let model = fit_batch(&samples, &bank, ridge)?;
    let train_mse = model.mse(&samples)?;
    let test_mse = match &a.test {
        Some(p) => {
            let (tm, tt) = io::load_training_set(p).with_context(|| format!("loading {}", p.display()))?;
            let test = batch_samples(&tm, &tt);
            if test.iter().any(|s| s.inputs.len() > longest) {
                bail!("held-out trajectories are longer than the training filters (T = {longest})");
            }
            Some(model.mse(&test)?)
        }
        None => None,
    };
    let config = serde_json::json!({ "k": k, "method": method, "ridge": ridge });
    let meta = io::predictor_meta(PredictorSource::Batch, &model.layout(), model.matrix(), &bank, config);
    io::write_predictor(
        &meta,
        model.matrix(),
        &cli.out.join("batch_predictor.csv"),
        &cli.out.join("batch_predictor.json"),
    )?;
    let report = BatchReport {
        k,
        method,
        ridge,
        samples: samples.len(),
        hints: manifest.hints.is_some(),
        train_mse,
        test_mse,
    };
    write_json(&cli.out.join("batch_report.json"), &report)?;
    println!("batch fit on {} samples: train MSE {train_mse:.6e}", samples.len());
    Ok(())
}

fn experiment(cli: &Globals, a: ExperimentArgs) -> Result<()> {
    let mut config = match (&cli.config, &a.name) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            if let Some(name) = &a.name {
                if name != &cfg.experiment {
                    bail!("experiment name {name:?} disagrees with config ({:?})", cfg.experiment);
                }
            }
            cfg
        }
        (None, Some(name)) => ExperimentConfig::named(name)?,
        (None, None) => bail!("give an experiment name or --config"),
    };
    if let Some(t) = a.horizon {
        config.horizon = t;
    }
    if cli.seed.is_some() || a.seeds.is_some() {
        let base = cli.seed.unwrap_or(0);
        let count = a.seeds.unwrap_or(config.seeds.len()) as u64;
        config.seeds = (base..base + count).collect();
    }
    if let Some(k) = a.k {
        config.learner.k = k;
    }
    if let Some(alg) = a.algorithm {
        config.learner.algorithm = alg;
    }
    if let Some(eta) = a.eta {
        config.learner.eta = eta;
    }
    if let Some(r) = a.r_m {
        config.learner.r_m = r;
    }
    let out = config.out.clone().unwrap_or_else(|| cli.out.clone());
    let result = bench::run_experiment(&config)?;
    let written = bench::write_experiment(&result, &out)?;
    for l in &result.summary.learners {
        let wins = l
            .wins_vs_last_value
            .map(|w| format!(", beats last_value on {w}/{}", config.seeds.len()))
            .unwrap_or_default();
        println!("{:>12}: mean final MSE {:.6e}{wins}", l.id, l.mean_final_mse);
    }
    println!("mean normalized regret {:.6e}", result.summary.mean_normalized_regret);
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn verify_cmd(cli: &Globals, mut a: VerifyArgs) -> Result<bool> {
    let file: VerifyArgs = load_config(cli.config.as_deref())?;
    merge!(a, file, sizes, profile, bank, bank_meta);
    let mut opts = VerifyOptions {
        seed: cli.seed.unwrap_or(0),
        ..Default::default()
    };
    if let Some(s) = a.sizes {
        opts.sizes = s;
    }
    if let Some(p) = a.profile {
        opts.profile = p;
    }
    match (&a.bank, &a.bank_meta) {
        (Some(csv), Some(json)) => opts.banks.push(io::read_filter_bank(csv, json)?),
        (None, None) => {}
        _ => bail!("--bank and --bank-meta must be given together"),
    }
    if let Some(b) = opts.banks.first() {
        if !opts.sizes.contains(&b.horizon()) {
            opts.sizes.push(b.horizon());
        }
    }
    let report = verify::run_verify(&opts)?;
    write_json(&cli.out.join("verify_report.json"), &report)?;
    fs::write(cli.out.join("verify_report.csv"), verify::report_csv(&report))?;
    for r in &report.rows {
        println!(
            "{} {:<22} checks {:>8}  violations {:>5}  worst {:.3e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.checks,
            r.violations,
            r.worst_ratio
        );
    }
    Ok(report.all_passed)
}

/// Global flags shared by every subcommand.
struct Globals {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
}

fn run(cli: Cli) -> Result<bool> {
    let Cli {
        config,
        seed,
        out,
        threads,
        command,
    } = cli;
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let g = Globals { config, seed, out };
    match command {
        Command::Filters(a) => filters(&g, a).map(|_| true),
        Command::Simulate(a) => simulate(&g, a).map(|_| true),
        Command::Online(a) => online(&g, a).map(|_| true),
        Command::Batch(a) => batch(&g, a).map(|_| true),
        Command::Experiment(a) => experiment(&g, a).map(|_| true),
        Command::Verify(a) => verify_cmd(&g, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
