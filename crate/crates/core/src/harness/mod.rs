//! Experiment protocols: data generation, budget calibration, sweeps and reports.

mod config;
mod experiment;
mod report;
mod sweep;
mod synthetic;

pub use config::{ClassifierSpec, DatasetSpec, ExperimentConfig};
pub use experiment::{
    calibrate_budget, load_dataset, perturbable_mask, prepare, scale_budget, select_candidates, DesiredRule,
    Prepared,
};
pub use report::{
    fill_relative_improvement, matrix_to_csv, read_matrix_csv, read_report, report_to_csv, summarize,
    ExperimentKind, InitKind, ReportRow, RunStatus, Summary, SummaryGroup, TimingRow, SCHEMA_VERSION,
};
pub use sweep::{
    replay_verify, run_budget_sweep, run_single, run_scalability_sweep, RunReport, MODEL_FILE, REPORT_FILE, SUMMARY_FILE,
    TIMINGS_FILE,
};
pub use synthetic::generate_synthetic;
