//! CSV and JSON formats for filter banks, trajectories, feature matrices,
//! predictors, per-step online logs and training manifests.
//!
//! Floats are written with `{:.17e}`, which round-trips every f64 exactly.
//! Every `parse_*` function takes untrusted text and returns an error rather
//! than panicking.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FeatureLayout, FilterBank, FilterMethod};
use crate::lds::{NoiseConfig, Trajectory};

pub const SIGN_CONVENTION: &str = "first coordinate with |value| > 1e-12 is positive";

/// Refuse inputs that would allocate absurd amounts of memory.
const MAX_CELLS: usize = 50_000_000;

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn csv_line(fields: impl IntoIterator<Item = String>) -> String {
    let mut s = fields.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

/// Header row plus numeric rows of a plain CSV table.
fn read_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse("CSV has no header".into()));
    }
    let mut rows = Vec::new();
    let mut cells = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, header has {}",
                idx + 1,
                record.len(),
                headers.len()
            )));
        }
        cells += record.len();
        if cells > MAX_CELLS {
            return Err(Error::Parse("CSV too large".into()));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, f)| parse_f64(f, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((headers, rows))
}

// ---------------------------------------------------------------- filter banks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBankMeta {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub k: usize,
    pub sigmas: Vec<f64>,
    pub sign_convention: String,
    pub method: FilterMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    /// Flags sigmas obtained by extrapolation rather than measurement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_extrapolated: Option<Vec<bool>>,
}

pub fn filter_bank_meta(bank: &FilterBank) -> FilterBankMeta {
    let extrapolated = bank.extrapolated().iter().any(|&e| e).then(|| bank.extrapolated().to_vec());
    FilterBankMeta {
        horizon: bank.horizon(),
        k: bank.k(),
        sigmas: bank.sigmas().to_vec(),
        sign_convention: SIGN_CONVENTION.to_string(),
        method: bank.method(),
        lambdas: bank.lambdas().map(<[f64]>::to_vec),
        sigma_extrapolated: extrapolated,
    }
}

/// T rows of k unit-filter entries.
pub fn filter_bank_csv(bank: &FilterBank) -> String {
    let mut out = csv_line((1..=bank.k()).map(|j| format!("phi_{j}")));
    for r in 0..bank.horizon() {
        out.push_str(&csv_line((0..bank.k()).map(|j| fmt_f64(bank.phis()[(r, j)]))));
    }
    out
}

pub fn write_filter_bank(bank: &FilterBank, csv_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(csv_path, filter_bank_csv(bank))?;
    fs::write(json_path, serde_json::to_string_pretty(&filter_bank_meta(bank))?)?;
    Ok(())
}

pub fn parse_filter_bank(csv_text: &str, json_text: &str) -> Result<FilterBank> {
    let meta: FilterBankMeta = serde_json::from_str(json_text)?;
    if meta.k == 0 || meta.horizon == 0 || meta.sigmas.len() != meta.k {
        return Err(Error::Parse(format!(
            "sidecar declares T = {}, k = {} with {} sigmas",
            meta.horizon,
            meta.k,
            meta.sigmas.len()
        )));
    }
    let (headers, rows) = read_table(csv_text)?;
    if headers.len() != meta.k || rows.len() != meta.horizon {
        return Err(Error::Parse(format!(
            "filter CSV is {}x{}, sidecar says {}x{}",
            rows.len(),
            headers.len(),
            meta.horizon,
            meta.k
        )));
    }
    let phis = DMatrix::from_fn(meta.horizon, meta.k, |r, c| rows[r][c]);
    let mut bank = FilterBank::from_parts(meta.method, meta.sigmas, phis)?;
    if let Some(l) = meta.lambdas {
        bank = bank.with_lambdas(l)?;
    }
    if let Some(e) = meta.sigma_extrapolated {
        bank = bank.with_extrapolated(e)?;
    }
    Ok(bank)
}

pub fn read_filter_bank(csv_path: &Path, json_path: &Path) -> Result<FilterBank> {
    parse_filter_bank(&fs::read_to_string(csv_path)?, &fs::read_to_string(json_path)?)
}

// ---------------------------------------------------------------- trajectories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: Option<u64>,
    pub noise: Option<NoiseConfig>,
    pub r_x: f64,
    pub l_y: f64,
    pub generator: String,
}

pub fn trajectory_meta(traj: &Trajectory, generator: &str, seed: Option<u64>, noise: Option<NoiseConfig>) -> TrajectoryMeta {
    TrajectoryMeta {
        n: traj.n(),
        m: traj.m(),
        horizon: traj.len(),
        seed,
        noise,
        r_x: traj.r_x(),
        l_y: traj.l_y(),
        generator: generator.to_string(),
    }
}

/// Columns t, x_1..x_n, y_1..y_m.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let header = std::iter::once("t".to_string())
        .chain((1..=traj.n()).map(|i| format!("x_{i}")))
        .chain((1..=traj.m()).map(|i| format!("y_{i}")));
    let mut out = csv_line(header);
    for (t, (x, y)) in traj.inputs().iter().zip(traj.outputs()).enumerate() {
        let row = std::iter::once((t + 1).to_string())
            .chain(x.iter().map(|v| fmt_f64(*v)))
            .chain(y.iter().map(|v| fmt_f64(*v)));
        out.push_str(&csv_line(row));
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, meta: &TrajectoryMeta, csv_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(csv_path, trajectory_csv(traj))?;
    fs::write(json_path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Input (and optional output) sequences from a CSV with columns
/// [t,] x_1..x_n [, y_1..y_m], recognised by header name.
pub fn parse_sequence_csv(text: &str) -> Result<(Vec<DVector<f64>>, Option<Vec<DVector<f64>>>)> {
    let (headers, rows) = read_table(text)?;
    let indexed = |prefix: &str| -> Result<Vec<usize>> {
        let mut cols: Vec<(usize, usize)> = Vec::new();
        for (c, h) in headers.iter().enumerate() {
            if let Some(rest) = h.strip_prefix(prefix) {
                let i: usize = rest
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad column name {h:?}")))?;
                cols.push((i, c));
            }
        }
        cols.sort_unstable();
        for (want, (got, _)) in (1..).zip(&cols) {
            if want != *got {
                return Err(Error::Parse(format!("{prefix}* columns must be numbered 1..n without gaps")));
            }
        }
        Ok(cols.into_iter().map(|(_, c)| c).collect())
    };
    let xcols = indexed("x_")?;
    let ycols = indexed("y_")?;
    for h in &headers {
        if h != "t" && !h.starts_with("x_") && !h.starts_with("y_") {
            return Err(Error::Parse(format!("unexpected column {h:?}")));
        }
    }
    if xcols.is_empty() {
        return Err(Error::Parse("no x_* input columns".into()));
    }
    if let Some(tc) = headers.iter().position(|h| h == "t") {
        for (idx, row) in rows.iter().enumerate() {
            if row[tc] != (idx + 1) as f64 {
                return Err(Error::Parse(format!("row {} has t = {}", idx + 1, row[tc])));
            }
        }
    }
    let pick = |cols: &[usize], row: &[f64]| DVector::from_iterator(cols.len(), cols.iter().map(|&c| row[c]));
    let inputs = rows.iter().map(|r| pick(&xcols, r)).collect();
    let outputs = (!ycols.is_empty()).then(|| rows.iter().map(|r| pick(&ycols, r)).collect());
    Ok((inputs, outputs))
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let (inputs, outputs) = parse_sequence_csv(text)?;
    let outputs = outputs.ok_or_else(|| Error::Parse("trajectory CSV has no y_* columns".into()))?;
    if inputs.is_empty() {
        return Err(Error::Parse("trajectory CSV has no rows".into()));
    }
    Trajectory::new(inputs, outputs)
}

pub fn read_trajectory(csv_path: &Path) -> Result<Trajectory> {
    parse_trajectory_csv(&fs::read_to_string(csv_path)?)
}

// ------------------------------------------------------------ feature matrices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub layout: FeatureLayout,
    pub width: usize,
    pub rows: usize,
    pub blocks: Vec<String>,
}

/// Column names following the feature layout.
pub fn feature_column_names(layout: &FeatureLayout) -> Vec<String> {
    let mut names = Vec::with_capacity(layout.width());
    for j in 1..=layout.k {
        for i in 1..=layout.n {
            names.push(format!("conv_{i}_{j}"));
        }
    }
    names.extend((1..=layout.n).map(|i| format!("xprev_{i}")));
    names.extend((1..=layout.n).map(|i| format!("x_{i}")));
    if layout.online {
        names.extend((1..=layout.m).map(|i| format!("yprev_{i}")));
    }
    names
}

/// A `#`-prefixed JSON header line, a CSV header, then one row per time step.
pub fn feature_csv(layout: &FeatureLayout, features: &DMatrix<f64>) -> Result<String> {
    if features.nrows() != layout.width() {
        return Err(Error::DimensionMismatch {
            context: "feature matrix rows vs layout width",
            expected: layout.width(),
            got: features.nrows(),
        });
    }
    let mut blocks = vec![format!("conv: {} filters x {} inputs (conv_i_j)", layout.k, layout.n)];
    blocks.push("xprev: x_{t-1}".into());
    blocks.push("x: x_t".into());
    if layout.online {
        blocks.push("yprev: y_{t-1}".into());
    }
    let header = FeatureHeader {
        layout: *layout,
        width: layout.width(),
        rows: features.ncols(),
        blocks,
    };
    let mut out = format!("# {}\n", serde_json::to_string(&header)?);
    out.push_str(&csv_line(feature_column_names(layout)));
    for col in features.column_iter() {
        out.push_str(&csv_line(col.iter().map(|v| fmt_f64(*v))));
    }
    Ok(out)
}

/// Inverse of [`feature_csv`]: features as columns of a width x rows matrix.
pub fn parse_feature_csv(text: &str) -> Result<(FeatureHeader, DMatrix<f64>)> {
    let (first, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::Parse("feature CSV needs a JSON header line".into()))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("feature CSV must start with '#'".into()))?;
    let header: FeatureHeader = serde_json::from_str(json.trim())?;
    let layout = header.layout;
    let width = layout
        .n
        .checked_mul(layout.k)
        .and_then(|v| v.checked_add(2 * layout.n))
        .and_then(|v| v.checked_add(if layout.online { layout.m } else { 0 }))
        .ok_or_else(|| Error::Parse("layout overflows".into()))?;
    if width != header.width || width > MAX_CELLS {
        return Err(Error::Parse(format!("header width {} != layout width {width}", header.width)));
    }
    let (names, rows) = read_table(rest)?;
    if names != feature_column_names(&layout) {
        return Err(Error::Parse("column names do not match the layout".into()));
    }
    if rows.len() != header.rows {
        return Err(Error::Parse(format!("header says {} rows, found {}", header.rows, rows.len())));
    }
    let m = DMatrix::from_fn(width, rows.len(), |r, c| rows[c][r]);
    Ok((header, m))
}

// ------------------------------------------------------------------ predictors

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorSource {
    Relaxation,
    Ogd,
    Ftl,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMeta {
    pub source: PredictorSource,
    pub layout: FeatureLayout,
    pub rows: usize,
    pub cols: usize,
    pub columns: Vec<String>,
    pub bank: FilterBankMeta,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// m rows; columns named as in the feature layout.
pub fn predictor_csv(layout: &FeatureLayout, matrix: &DMatrix<f64>) -> String {
    let mut out = csv_line(feature_column_names(layout));
    for r in 0..matrix.nrows() {
        out.push_str(&csv_line(matrix.row(r).iter().map(|v| fmt_f64(*v))));
    }
    out
}

pub fn predictor_meta(
    source: PredictorSource,
    layout: &FeatureLayout,
    matrix: &DMatrix<f64>,
    bank: &FilterBank,
    config: serde_json::Value,
) -> PredictorMeta {
    PredictorMeta {
        source,
        layout: *layout,
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        columns: feature_column_names(layout),
        bank: filter_bank_meta(bank),
        config,
    }
}

pub fn write_predictor(meta: &PredictorMeta, matrix: &DMatrix<f64>, csv_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(csv_path, predictor_csv(&meta.layout, matrix))?;
    fs::write(json_path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn parse_predictor(csv_text: &str, json_text: &str) -> Result<(PredictorMeta, DMatrix<f64>)> {
    let meta: PredictorMeta = serde_json::from_str(json_text)?;
    let (names, rows) = read_table(csv_text)?;
    if names != meta.columns || rows.len() != meta.rows || names.len() != meta.cols {
        return Err(Error::Parse("predictor CSV does not match its sidecar".into()));
    }
    if meta.cols != meta.layout.width() || (meta.layout.online && meta.rows != meta.layout.m) {
        return Err(Error::Parse("predictor shape does not match its layout".into()));
    }
    Ok((meta.clone(), DMatrix::from_fn(meta.rows, meta.cols, |r, c| rows[r][c])))
}

// ------------------------------------------------------------- online step log

/// Columns t, loss, cumulative_loss, m_norm, pred_1..pred_m.
pub fn online_steps_csv(predictions: &[DVector<f64>], losses: &[f64], norms: &[f64]) -> String {
    let m = predictions.first().map(|p| p.len()).unwrap_or(0);
    let header = ["t", "loss", "cumulative_loss", "m_norm"]
        .into_iter()
        .map(str::to_string)
        .chain((1..=m).map(|i| format!("pred_{i}")));
    let mut out = csv_line(header);
    let mut cum = 0.0;
    for (t, ((p, l), nrm)) in predictions.iter().zip(losses).zip(norms).enumerate() {
        cum += l;
        let row = [(t + 1).to_string(), fmt_f64(*l), fmt_f64(cum), fmt_f64(*nrm)]
            .into_iter()
            .chain(p.iter().map(|v| fmt_f64(*v)));
        out.push_str(&csv_line(row));
    }
    out
}

// ------------------------------------------------------------ training manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingManifest {
    /// Trajectory CSV paths relative to the manifest's directory.
    pub trajectories: Vec<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub method: Option<FilterMethod>,
    #[serde(default)]
    pub ridge: Option<f64>,
    /// Optional per-trajectory hidden-state hints.
    #[serde(default)]
    pub hints: Option<Vec<Vec<f64>>>,
}

pub fn parse_manifest(text: &str) -> Result<TrainingManifest> {
    let manifest: TrainingManifest = serde_json::from_str(text)?;
    if manifest.trajectories.is_empty() {
        return Err(Error::Parse("manifest lists no trajectories".into()));
    }
    if let Some(h) = &manifest.hints {
        if h.len() != manifest.trajectories.len() {
            return Err(Error::Parse(format!(
                "{} hints for {} trajectories",
                h.len(),
                manifest.trajectories.len()
            )));
        }
        let width = h.first().map(Vec::len).unwrap_or(0);
        if h.iter().any(|v| v.len() != width || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Parse("hints must be finite vectors of equal length".into()));
        }
    }
    if manifest.ridge.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::Parse("ridge must be finite and >= 0".into()));
    }
    Ok(manifest)
}

/// Manifest plus every trajectory it references.
pub fn load_training_set(manifest_path: &Path) -> Result<(TrainingManifest, Vec<Trajectory>)> {
    let manifest = parse_manifest(&fs::read_to_string(manifest_path)?)?;
    let base: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let trajs = manifest
        .trajectories
        .iter()
        .map(|p| read_trajectory(&base.join(p)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, trajs))
}
