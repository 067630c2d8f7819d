//! Executable invariant suite over the Hankel spectrum, the mu curve, the
//! relaxation construction and the LDS bounds.
//!
//! Each registered invariant yields exactly one report row aggregated over
//! every requested T. A filter bank supplied for some T replaces the default
//! eigen bank in the bank-dependent checks, which is how a corrupted bank is
//! caught.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{build_filter_bank, FilterBank, FilterMethod, MAX_EIGEN_FILTERS};
use crate::hankel::{
    build_hankel, full_spectrum, mu_curve, project_onto_filters, quarter_power_apply, spectral_tail_sum, HankelMatrix,
    HankelOperator, Spectrum, NOISE_FLOOR,
};
use crate::lds::{self, NoiseConfig};
use crate::quadrature::gauss_legendre;
use crate::relaxation::build_m_theta_truncated;
use crate::rng;

pub const DEFAULT_SIZES: [usize; 3] = [64, 256, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Default,
    Strict,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Profile::Default),
            "strict" => Ok(Profile::Strict),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?}; expected default or strict"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// |Z phi - sigma phi| <= eig_residual * sigma_1.
    pub eig_residual: f64,
    /// Relative slack on analytic inequalities, absorbing rounding.
    pub slack: f64,
    /// Absolute tolerance of the quadrature moment identity.
    pub moment: f64,
    /// Extra slack on finite-difference derivative bounds.
    pub fd_slack: f64,
    pub random_systems: usize,
    pub random_vectors: usize,
}

impl Profile {
    pub fn tolerances(self) -> Tolerances {
        match self {
            Profile::Default => Tolerances {
                eig_residual: 1e-10,
                slack: 1e-9,
                moment: 1e-10,
                fd_slack: 1e-3,
                random_systems: 20,
                random_vectors: 100,
            },
            Profile::Strict => Tolerances {
                eig_residual: 1e-12,
                slack: 1e-12,
                moment: 1e-12,
                fd_slack: 1e-4,
                random_systems: 50,
                random_vectors: 200,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub sizes: Vec<usize>,
    pub profile: Profile,
    pub seed: u64,
    /// Replacement banks, matched to sizes by horizon.
    pub banks: Vec<FilterBank>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SIZES.to_vec(),
            profile: Profile::Default,
            seed: 0,
            banks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRow {
    pub name: String,
    pub statement: String,
    pub checks: usize,
    pub violations: usize,
    /// Largest lhs / rhs observed (<= 1 means every check held).
    pub worst_ratio: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub profile: Profile,
    pub tolerances: Tolerances,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub rows: Vec<InvariantRow>,
    pub all_passed: bool,
}

/// Per-T data shared by the checks.
struct SizeData {
    size: usize,
    hankel: HankelMatrix,
    full: Spectrum,
    bank: FilterBank,
    injected: bool,
}

struct Ctx<'a> {
    sizes: &'a [SizeData],
    tol: Tolerances,
    seed: u64,
}

#[derive(Default)]
struct Tally {
    checks: usize,
    violations: usize,
    worst: f64,
    notes: Vec<String>,
}

impl Tally {
    /// Records lhs <= rhs up to the relative slack.
    fn le(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.checks += 1;
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio.is_nan() || lhs > rhs + slack * rhs.abs().max(f64::MIN_POSITIVE) {
            self.violations += 1;
        }
        self.worst = self.worst.max(if ratio.is_nan() { f64::INFINITY } else { ratio });
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }
}

type Check = fn(&Ctx, &mut Tally) -> Result<()>;

struct Invariant {
    name: &'static str,
    statement: &'static str,
    check: Check,
}

const REGISTRY: &[Invariant] = &[
    Invariant {
        name: "hankel_formula",
        statement: "Z_ij == 2/((i+j)^3-(i+j)) exactly, Z symmetric",
        check: check_hankel_formula,
    },
    Invariant {
        name: "hankel_trace",
        statement: "trace(Z_T) < 3/4",
        check: check_trace,
    },
    Invariant {
        name: "eigenpair_residual",
        statement: "bank filters are unit eigenvectors of Z_T with their sigmas (sigma > 1e-12)",
        check: check_eigenpairs,
    },
    Invariant {
        name: "spectral_decay",
        statement: "sigma_j <= min(3/4, 1e6 exp(-pi^2 j / (4 ln T)))",
        check: check_decay,
    },
    Invariant {
        name: "tail_dominance",
        statement: "sum_{j'>j} sigma_j' < 400 ln(T) sigma_j",
        check: check_tail,
    },
    Invariant {
        name: "moment_identity",
        statement: "Gauss-Legendre integral of mu(a) mu(a)^T over [0,1] equals Z (T capped at 64)",
        check: check_moments,
    },
    Invariant {
        name: "reconstruction",
        statement: "|mu(a) - Proj_k mu(a)|^2 <= sqrt(6 sum_{j>k} sigma_j), k in {5,10,25}",
        check: check_reconstruction,
    },
    Invariant {
        name: "coefficient_bound",
        statement: "|<phi_j, mu(a)>| <= 6^(1/4) sigma_j^(1/4)",
        check: check_coefficients,
    },
    Invariant {
        name: "filter_l1",
        statement: "|sigma_j^(1/4) phi_j|_1 <= 2 + 2 log2 T for j <= 20",
        check: check_filter_l1,
    },
    Invariant {
        name: "quarter_power_l1",
        statement: "|Z^(1/4) v|_1 <= 2 + 2 log2 T for random unit v",
        check: check_quarter_power,
    },
    Invariant {
        name: "mu_envelope",
        statement: "|mu(a)_i| <= 1/i",
        check: check_mu_envelope,
    },
    Invariant {
        name: "mu_l1",
        statement: "|mu(a)|_1 <= 1",
        check: check_mu_l1,
    },
    Invariant {
        name: "mu_l2",
        statement: "|mu(a)|_2^2 <= 1",
        check: check_mu_l2,
    },
    Invariant {
        name: "mu_derivative",
        statement: "|d/da |mu(a)|^2| <= 3 (central differences)",
        check: check_mu_derivative,
    },
    Invariant {
        name: "relaxation_frobenius",
        statement: "|M_Theta|_F over non-identity blocks <= 6^(1/4) R^2 sqrt(k) + 3 R^2",
        check: check_frobenius,
    },
    Invariant {
        name: "lipschitz",
        statement: "|y_t - y_{t-1}| <= (2|B||C| + 2|D|) R_x + |C||h0|",
        check: check_lipschitz,
    },
    Invariant {
        name: "hidden_state_decay",
        statement: "|yhat_t(h0) - yhat_t(0)| <= |C|_F |h0| sqrt(n) / t",
        check: check_hidden_state,
    },
];

pub fn invariant_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|i| i.name).collect()
}

fn alpha_grid(step: f64) -> Vec<f64> {
    let count = (1.0 / step).round() as usize;
    (0..=count).map(|i| (i as f64 * step).min(1.0)).collect()
}

fn usable(sigmas: &[f64]) -> usize {
    sigmas.iter().take_while(|&&s| s > NOISE_FLOOR).count()
}

fn check_hankel_formula(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let z = sd.hankel.entries();
        let mut bad = 0usize;
        for i in 0..sd.size {
            for j in 0..sd.size {
                let s = (i + j + 2) as f64;
                if z[(i, j)] != 2.0 / (s * s * s - s) || z[(i, j)] != z[(j, i)] {
                    bad += 1;
                }
            }
        }
        t.checks += sd.size * sd.size;
        t.violations += bad;
    }
    t.worst = if t.violations == 0 { 0.0 } else { f64::INFINITY };
    Ok(())
}

fn check_trace(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let tr = sd.hankel.trace();
        t.checks += 1;
        if tr >= 0.75 {
            t.violations += 1;
        }
        t.worst = t.worst.max(tr / 0.75);
        t.note(format!("T={}: trace {tr:.6}", sd.size));
    }
    Ok(())
}

fn check_eigenpairs(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let op = HankelOperator::new(&sd.hankel);
        let bank = &sd.bank;
        let sigma1 = sd.full.sigmas()[0];
        for j in 0..usable(bank.sigmas()) {
            let phi = bank.phis().column(j);
            let zphi = DVector::from_vec(op.apply(phi.as_slice()));
            let residual = (zphi - phi * bank.sigmas()[j]).norm();
            t.le(residual, ctx.tol.eig_residual * sigma1, 0.0);
            t.le((phi.norm() - 1.0).abs(), 1e-10, 0.0);
        }
        if sd.injected {
            t.note(format!("T={}: supplied bank", sd.size));
        }
    }
    Ok(())
}

fn check_decay(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    let rate = (std::f64::consts::PI.powi(2) / 4.0).exp();
    for sd in ctx.sizes {
        let ln_t = (sd.size as f64).ln();
        for (j0, &s) in sd.full.sigmas().iter().enumerate().take_while(|(_, &s)| s > NOISE_FLOOR) {
            let j = (j0 + 1) as f64;
            t.le(s, (0.75_f64).min(1e6 * rate.powf(-j / ln_t)), ctx.tol.slack);
        }
    }
    Ok(())
}

fn check_tail(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let ln_t = (sd.size as f64).ln();
        for j in 0..usable(sd.full.sigmas()) {
            let tail = spectral_tail_sum(&sd.full, j + 1)?;
            t.le(tail, 400.0 * ln_t * sd.full.sigmas()[j], ctx.tol.slack);
        }
    }
    Ok(())
}

fn check_moments(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    let mut seen = Vec::new();
    for sd in ctx.sizes {
        let size = sd.size.min(64);
        if seen.contains(&size) {
            continue;
        }
        seen.push(size);
        let (nodes, weights) = gauss_legendre(size + 2);
        let mut acc = DMatrix::zeros(size, size);
        for (a, w) in nodes.iter().zip(&weights) {
            let mu = mu_curve(*a, size)?.entries;
            acc.ger(*w, &mu, &mu, 1.0);
        }
        let z = build_hankel(size)?;
        let err = (acc - z.entries()).amax();
        t.le(err, ctx.tol.moment, 0.0);
        t.note(format!("T={size}: max error {err:.2e}"));
    }
    Ok(())
}

fn check_reconstruction(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    let grid = alpha_grid(0.01);
    for sd in ctx.sizes {
        for k in [5, 10, 25].into_iter().filter(|&k| k <= sd.size) {
            let rhs = (6.0 * spectral_tail_sum(&sd.full, k)?).sqrt();
            for &a in &grid {
                let mu = mu_curve(a, sd.size)?.entries;
                let err = (&mu - project_onto_filters(&mu, &sd.full, k)?).norm_squared();
                // Both sides are zero to rounding once the tail reaches the noise floor.
                t.le(err, rhs.max(1e-12), ctx.tol.slack);
            }
        }
    }
    Ok(())
}

fn check_coefficients(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    let grid = alpha_grid(0.01);
    let c = 6.0_f64.powf(0.25);
    for sd in ctx.sizes {
        let bank = &sd.bank;
        let k = usable(bank.sigmas());
        for &a in &grid {
            let mu = mu_curve(a, sd.size)?.entries;
            for j in 0..k {
                let coef = bank.phis().column(j).dot(&mu).abs();
                t.le(coef, c * bank.sigmas()[j].powf(0.25), ctx.tol.slack);
            }
        }
    }
    Ok(())
}

fn l1_bound(size: usize) -> f64 {
    2.0 + 2.0 * (size as f64).log2()
}

fn check_filter_l1(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let bank = &sd.bank;
        for j in 0..usable(bank.sigmas()).min(20) {
            let l1 = bank.phis().column(j).lp_norm(1) * bank.sigmas()[j].powf(0.25);
            t.le(l1, l1_bound(sd.size), ctx.tol.slack);
        }
    }
    Ok(())
}

fn check_quarter_power(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let mut r = rng::stream(ctx.seed, 0x9e37 + sd.size as u64);
        for _ in 0..ctx.tol.random_vectors {
            let v = rng::unit_vector(&mut r, sd.size);
            let l1 = quarter_power_apply(&sd.full, &v)?.lp_norm(1);
            t.le(l1, l1_bound(sd.size), ctx.tol.slack);
        }
    }
    Ok(())
}

fn each_mu(ctx: &Ctx, f: &mut dyn FnMut(usize, &DVector<f64>)) -> Result<()> {
    for sd in ctx.sizes {
        for a in alpha_grid(0.001) {
            f(sd.size, &mu_curve(a, sd.size)?.entries);
        }
    }
    Ok(())
}

fn check_mu_envelope(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    each_mu(ctx, &mut |_, mu| {
        let worst = mu
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() * (i + 1) as f64)
            .fold(0.0, f64::max);
        t.le(worst, 1.0, ctx.tol.slack);
    })
}

fn check_mu_l1(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    each_mu(ctx, &mut |_, mu| t.le(mu.lp_norm(1), 1.0, ctx.tol.slack))
}

fn check_mu_l2(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    each_mu(ctx, &mut |_, mu| t.le(mu.norm_squared(), 1.0, ctx.tol.slack))
}

fn check_mu_derivative(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    let h = 1e-6;
    for sd in ctx.sizes {
        for a in alpha_grid(0.001) {
            let a = a.clamp(h, 1.0 - h);
            let plus = mu_curve(a + h, sd.size)?.entries.norm_squared();
            let minus = mu_curve(a - h, sd.size)?.entries.norm_squared();
            let deriv = ((plus - minus) / (2.0 * h)).abs();
            t.le(deriv, 3.0 + ctx.tol.fd_slack, 0.0);
        }
    }
    Ok(())
}

fn check_frobenius(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    let c = 6.0_f64.powf(0.25);
    for sd in ctx.sizes {
        let k = usable(sd.full.sigmas()).min(25).min(sd.size);
        let bank = build_filter_bank(sd.size, k, FilterMethod::Eigen)?;
        let mut r = rng::stream(ctx.seed, 0x5eed + sd.size as u64);
        for _ in 0..ctx.tol.random_systems {
            let radius = 1.0 + r.random::<f64>();
            let params = lds::random_system(&mut r, 10, 2, 2, radius, true)?;
            let pred = build_m_theta_truncated(&params, &bank)?;
            let rt = params.r_theta();
            t.le(pred.non_y_frobenius(), c * rt * rt * (k as f64).sqrt() + 3.0 * rt * rt, ctx.tol.slack);
        }
    }
    Ok(())
}

fn random_h0_system(r: &mut rng::StreamRng, radius: f64) -> Result<lds::LdsParams> {
    let params = lds::random_system(r, 5, 2, 3, radius, false)?;
    let h0 = rng::unit_vector(r, 5) * (radius * r.random::<f64>());
    params.with_h0(h0)
}

fn check_lipschitz(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let mut r = rng::stream(ctx.seed, 0x1195 + sd.size as u64);
        for _ in 0..ctx.tol.random_systems {
            let radius = 1.0 + r.random::<f64>();
            let params = random_h0_system(&mut r, radius)?;
            let xs: Vec<_> = (0..sd.size).map(|_| rng::gaussian_vector(&mut r, 2, 1.0)).collect();
            let traj = lds::simulate(&params, &xs, &NoiseConfig::noiseless())?;
            let bound = lds::lipschitz_bound(&params, traj.r_x());
            let worst = traj.output_differences().iter().map(|d| d.norm()).fold(0.0, f64::max);
            t.le(worst, bound, ctx.tol.slack);
        }
    }
    Ok(())
}

fn check_hidden_state(ctx: &Ctx, t: &mut Tally) -> Result<()> {
    for sd in ctx.sizes {
        let mut r = rng::stream(ctx.seed, 0x4040 + sd.size as u64);
        for _ in 0..ctx.tol.random_systems {
            let radius = 1.0 + r.random::<f64>();
            let params = random_h0_system(&mut r, radius)?;
            let zero = params.clone().with_h0(DVector::zeros(5))?;
            let xs: Vec<_> = (0..sd.size).map(|_| rng::gaussian_vector(&mut r, 2, 1.0)).collect();
            let traj = lds::simulate(&params, &xs, &NoiseConfig::noiseless())?;
            let with = lds::derivative_predictions(&params, &traj)?;
            let without = lds::derivative_predictions(&zero, &traj)?;
            let scale = params.c.norm() * params.h0.norm() * (params.input_dim() as f64).sqrt();
            for (i, (a, b)) in with.iter().zip(&without).enumerate() {
                t.le((a - b).norm(), scale / (i + 1) as f64, ctx.tol.slack);
            }
        }
    }
    Ok(())
}

fn prepare(size: usize, banks: &[FilterBank]) -> Result<SizeData> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!("verify needs T >= 2, got {size}")));
    }
    let hankel = build_hankel(size)?;
    let full = full_spectrum(&hankel)?;
    let supplied = banks.iter().find(|b| b.horizon() == size);
    let bank = match supplied {
        Some(b) => b.clone(),
        None => build_filter_bank(size, size.min(MAX_EIGEN_FILTERS), FilterMethod::Eigen)?,
    };
    Ok(SizeData {
        size,
        hankel,
        full,
        bank,
        injected: supplied.is_some(),
    })
}

/// Runs every registered invariant; failures are reported, not returned as errors.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.sizes.is_empty() {
        return Err(Error::InvalidArgument("verify needs at least one T".into()));
    }
    for b in &opts.banks {
        if !opts.sizes.contains(&b.horizon()) {
            return Err(Error::InvalidArgument(format!(
                "supplied bank has T = {}, not among {:?}",
                b.horizon(),
                opts.sizes
            )));
        }
    }
    let sizes = opts
        .sizes
        .par_iter()
        .map(|&s| prepare(s, &opts.banks))
        .collect::<Result<Vec<_>>>()?;
    let ctx = Ctx {
        sizes: &sizes,
        tol: opts.profile.tolerances(),
        seed: opts.seed,
    };
    let rows: Vec<InvariantRow> = REGISTRY
        .par_iter()
        .map(|inv| {
            let mut tally = Tally::default();
            let outcome = (inv.check)(&ctx, &mut tally);
            let mut detail = tally.notes.join("; ");
            if let Err(e) = &outcome {
                detail = format!("error: {e}");
            }
            InvariantRow {
                name: inv.name.to_string(),
                statement: inv.statement.to_string(),
                checks: tally.checks,
                violations: tally.violations,
                worst_ratio: tally.worst,
                passed: outcome.is_ok() && tally.violations == 0 && tally.checks > 0,
                detail,
            }
        })
        .collect();
    let all_passed = rows.iter().all(|r| r.passed);
    Ok(VerifyReport {
        profile: opts.profile,
        tolerances: ctx.tol,
        sizes: opts.sizes.clone(),
        seed: opts.seed,
        rows,
        all_passed,
    })
}

/// One CSV line per invariant.
pub fn report_csv(report: &VerifyReport) -> String {
    let mut out = String::from("invariant,passed,checks,violations,worst_ratio\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6e}\n",
            r.name, r.passed, r.checks, r.violations, r.worst_ratio
        ));
    }
    out
}
