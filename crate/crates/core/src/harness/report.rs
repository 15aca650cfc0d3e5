use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Budget,
    Scale,
    /// A standalone `perturb` run.
    Single,
}

/// Starting point of `xhat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    /// Rows carried over from the next smaller sample size.
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One cell of a sweep. Wall time lives in [`TimingRow`] so this file stays
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub solver: String,
    pub budget_level: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub init: InitKind,
    pub status: RunStatus,
    pub selected: usize,
    pub consumption_per_sample: f64,
    pub empty_selection: bool,
    pub mean_budget_residual: f64,
    pub mean_prediction_gap: Option<f64>,
    pub knapsack_optimal: bool,
    /// `(|S|_solver - |S|_kl) / |S|_kl` against the KL row of the same cell.
    pub relative_improvement_vs_kl: Option<f64>,
    /// Run directory relative to the output directory; holds `trace.csv`
    /// and `xhat.csv`.
    pub run_dir: String,
    pub error: String,
}

impl ReportRow {
    pub fn key(&self) -> (ExperimentKind, String, u64, usize, u64, InitKind) {
        (
            self.experiment,
            self.solver.clone(),
            self.budget_level.to_bits(),
            self.sample_size,
            self.seed,
            self.init,
        )
    }

    /// Key of the KL row this row is compared against.
    fn peer_key(&self) -> (ExperimentKind, u64, usize, u64, InitKind) {
        (
            self.experiment,
            self.budget_level.to_bits(),
            self.sample_size,
            self.seed,
            self.init,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run_dir: String,
    pub wall_ms: f64,
}

/// Fills `relative_improvement_vs_kl` from the KL rows present.
pub fn fill_relative_improvement(rows: &mut [ReportRow]) {
    let kl: BTreeMap<_, usize> = rows
        .iter()
        .filter(|r| r.solver == "kl" && r.status == RunStatus::Ok)
        .map(|r| (r.peer_key(), r.selected))
        .collect();
    for r in rows.iter_mut() {
        r.relative_improvement_vs_kl = match (r.status, kl.get(&r.peer_key())) {
            (RunStatus::Ok, Some(&base)) if base > 0 => {
                Some((r.selected as f64 - base as f64) / base as f64)
            }
            _ => None,
        };
    }
}

pub fn rows_to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

const REPORT_HEADER: [&str; 17] = [
    "schema_version",
    "experiment",
    "solver",
    "budget_level",
    "sample_size",
    "seed",
    "init",
    "status",
    "selected",
    "consumption_per_sample",
    "empty_selection",
    "mean_budget_residual",
    "mean_prediction_gap",
    "knapsack_optimal",
    "relative_improvement_vs_kl",
    "run_dir",
    "error",
];

pub fn report_to_csv(rows: &[ReportRow]) -> Result<String> {
    rows_to_csv(rows, &REPORT_HEADER)
}

pub fn timings_to_csv(rows: &[TimingRow]) -> Result<String> {
    rows_to_csv(rows, &["run_dir", "wall_ms"])
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let rows: Vec<ReportRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = rows.iter().find(|row| row.schema_version != SCHEMA_VERSION) {
        return Err(Error::invalid(format!(
            "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            bad.schema_version
        )));
    }
    Ok(rows)
}

/// Means over the seeds of one (experiment, solver, level, size, init) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub experiment: ExperimentKind,
    pub solver: String,
    pub budget_level: f64,
    pub sample_size: usize,
    pub init: InitKind,
    pub runs: usize,
    pub failed: usize,
    pub mean_selected: Option<f64>,
    /// Over runs with a non-empty selection.
    pub mean_consumption_per_sample: Option<f64>,
    pub mean_budget_residual: Option<f64>,
    pub mean_prediction_gap: Option<f64>,
    pub mean_relative_improvement_vs_kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub rows: usize,
    pub failed: usize,
    pub groups: Vec<SummaryGroup>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Groups appear in order of their first row.
pub fn summarize(rows: &[ReportRow]) -> Summary {
    let mut order: Vec<(ExperimentKind, String, u64, usize, InitKind)> = Vec::new();
    let mut members: BTreeMap<(ExperimentKind, String, u64, usize, InitKind), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.experiment, r.solver.clone(), r.budget_level.to_bits(), r.sample_size, r.init);
        let entry = members.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r);
    }
    let groups = order
        .into_iter()
        .map(|key| {
            let rs = &members[&key];
            let ok: Vec<&&ReportRow> = rs.iter().filter(|r| r.status == RunStatus::Ok).collect();
            SummaryGroup {
                experiment: key.0,
                solver: key.1,
                budget_level: f64::from_bits(key.2),
                sample_size: key.3,
                init: key.4,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                mean_selected: mean(ok.iter().map(|r| r.selected as f64)),
                mean_consumption_per_sample: mean(
                    ok.iter().filter(|r| !r.empty_selection).map(|r| r.consumption_per_sample),
                ),
                mean_budget_residual: mean(ok.iter().map(|r| r.mean_budget_residual)),
                mean_prediction_gap: mean(ok.iter().filter_map(|r| r.mean_prediction_gap)),
                mean_relative_improvement_vs_kl: mean(ok.iter().filter_map(|r| r.relative_improvement_vs_kl)),
            }
        })
        .collect();
    Summary {
        schema_version: SCHEMA_VERSION,
        rows: rows.len(),
        failed: rows.iter().filter(|r| r.status == RunStatus::Failed).count(),
        groups,
    }
}

/// Matrix with an `f0,f1,..` header; values use the shortest round-trip form.
pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut out = (0..m.ncols()).map(|i| format!("f{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let cols = r.headers()?.len();
    let mut flat = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            flat.push(field.trim().parse::<f64>().map_err(|e| {
                Error::invalid(format!("{}: bad number {field:?}: {e}", path.display()))
            })?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::invalid(e.to_string()))
}
