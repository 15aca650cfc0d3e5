use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::ModelFile;
use crate::error::{Error, Result};
use crate::problem::{PerturbProblem, ProblemFile};
use crate::repair::{finalize, verify_selection, Finalized};
use crate::solvers::{solve_with, trace_to_csv, HyperParams, NoObserver, SolveOptions, SolverKind, SolverState};

use super::config::ExperimentConfig;
use super::experiment::{calibrate_budget, prepare, scale_budget, Prepared};
use super::report::{
    fill_relative_improvement, matrix_to_csv, read_matrix_csv, read_report, report_to_csv, summarize,
    timings_to_csv, ExperimentKind, InitKind, ReportRow, RunStatus, Summary, TimingRow, SCHEMA_VERSION,
};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Rows of one sweep plus their wall times.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub timings: Vec<TimingRow>,
}

impl RunReport {
    pub fn summary(&self) -> Summary {
        summarize(&self.rows)
    }
}

#[derive(Debug, Clone, Copy)]
struct CellKey {
    experiment: ExperimentKind,
    solver: SolverKind,
    level: f64,
    size: usize,
    seed: u64,
    init: InitKind,
}

impl CellKey {
    fn run_dir(&self) -> String {
        let exp = match self.experiment {
            ExperimentKind::Budget => "budget",
            ExperimentKind::Scale => "scale",
            ExperimentKind::Single => "single",
        };
        let init = match self.init {
            InitKind::Random => "random",
            InitKind::Warm => "warm",
        };
        format!(
            "runs/{exp}-{}-b{:?}-n{}-s{}-{init}",
            self.solver, self.level, self.size, self.seed
        )
    }
}

/// Everything a finished cell leaves behind.
struct CellOutcome {
    key: CellKey,
    result: Result<(SolverState, Finalized)>,
    problem: PerturbProblem,
    wall_ms: f64,
}

fn run_cell(
    key: CellKey,
    problem: PerturbProblem,
    hp: &HyperParams,
    warm: Option<Array2<f64>>,
) -> CellOutcome {
    let hp = HyperParams { seed: key.seed, ..*hp };
    let start = Instant::now();
    let opts = SolveOptions { warm_start: warm };
    let result = solve_with(key.solver, &problem, &hp, &opts, &mut NoObserver).and_then(|state| {
        let fin = finalize(&problem, state.xhat.view())?;
        Ok((state, fin))
    });
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Err(e) = &result {
        log::warn!("{}: {e}", key.run_dir());
    }
    CellOutcome {
        key,
        result,
        problem,
        wall_ms,
    }
}

fn outcome_row(o: &CellOutcome) -> ReportRow {
    let k = &o.key;
    let mut row = ReportRow {
        schema_version: SCHEMA_VERSION,
        experiment: k.experiment,
        solver: k.solver.name().to_string(),
        budget_level: k.level,
        sample_size: k.size,
        seed: k.seed,
        init: k.init,
        status: RunStatus::Failed,
        selected: 0,
        consumption_per_sample: 0.0,
        empty_selection: true,
        mean_budget_residual: 0.0,
        mean_prediction_gap: None,
        knapsack_optimal: false,
        relative_improvement_vs_kl: None,
        run_dir: k.run_dir(),
        error: String::new(),
    };
    match &o.result {
        Ok((_, fin)) => {
            let m = &fin.metrics;
            row.status = RunStatus::Ok;
            row.selected = m.selected_count;
            row.consumption_per_sample = m.consumption_per_sample;
            row.empty_selection = m.empty_selection;
            row.mean_budget_residual = m.mean_budget_residual;
            row.mean_prediction_gap = m.mean_prediction_gap;
            row.knapsack_optimal = fin.optimal;
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

/// Per-run record next to `xhat.csv`.
#[derive(Serialize)]
struct RunRecord<'a> {
    solver: &'a str,
    seed: u64,
    selected: &'a [usize],
    knapsack_optimal: bool,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `model` defaults to the sweep's shared model file.
fn write_run(out: &Path, o: &CellOutcome, model: Option<&Path>) -> Result<()> {
    let dir = out.join(o.key.run_dir());
    create_dir(&dir)?;
    let model_ref = match model {
        Some(m) => m.to_path_buf(),
        None => {
            let depth = o.key.run_dir().split('/').count();
            std::iter::repeat_n("..", depth).collect::<PathBuf>().join(MODEL_FILE)
        }
    };
    ProblemFile::from_problem(&o.problem, model_ref).save(dir.join("problem.json"))?;
    if let Ok((state, fin)) = &o.result {
        write_file(&dir.join("xhat.csv"), matrix_to_csv(&state.xhat))?;
        write_file(&dir.join("trace.csv"), trace_to_csv(&state.trace))?;
        let record = RunRecord {
            solver: o.key.solver.name(),
            seed: o.key.seed,
            selected: &fin.selected,
            knapsack_optimal: fin.optimal,
        };
        write_file(&dir.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    }
    Ok(())
}

fn write_common(out: &Path, cfg: &ExperimentConfig, prep: &Prepared) -> Result<()> {
    create_dir(out)?;
    ModelFile::from_model(&prep.model).save(out.join(MODEL_FILE))?;
    write_file(&out.join("config.json"), cfg.to_json()?)
}

fn write_report(out: &Path, outcomes: &[CellOutcome], model: Option<&Path>) -> Result<RunReport> {
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut timings = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        write_run(out, o, model)?;
        rows.push(outcome_row(o));
        timings.push(TimingRow {
            run_dir: o.key.run_dir(),
            wall_ms: o.wall_ms,
        });
    }
    fill_relative_improvement(&mut rows);
    let report = RunReport { rows, timings };
    write_file(&out.join(REPORT_FILE), report_to_csv(&report.rows)?)?;
    write_file(&out.join(TIMINGS_FILE), timings_to_csv(&report.timings)?)?;
    write_file(
        &out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&report.summary())? + "\n",
    )?;
    Ok(report)
}

fn assemble(out: &Path, outcomes: Vec<CellOutcome>, calibration: &impl Serialize) -> Result<RunReport> {
    let report = write_report(out, &outcomes, None)?;
    write_file(
        &out.join("calibration.json"),
        serde_json::to_string_pretty(calibration)? + "\n",
    )?;
    Ok(report)
}

/// One solver run on a ready-made problem, written to `out` in the same
/// layout as a sweep. A solver failure is recorded and then returned.
pub fn run_single(
    problem: PerturbProblem,
    solver: SolverKind,
    hp: &HyperParams,
    level: f64,
    model: &Path,
    out: &Path,
) -> Result<ReportRow> {
    create_dir(out)?;
    let key = CellKey {
        experiment: ExperimentKind::Single,
        solver,
        level,
        size: problem.num_samples(),
        seed: hp.seed,
        init: InitKind::Random,
    };
    let outcome = run_cell(key, problem, hp, None);
    let report = write_report(out, std::slice::from_ref(&outcome), Some(model))?;
    outcome.result?;
    Ok(report.rows.into_iter().next().expect("one row"))
}

#[derive(Serialize)]
struct Calibration {
    seed: u64,
    sample_size: usize,
    reference: Vec<f64>,
}

fn calibrate_all(base: &PerturbProblem, hp: &HyperParams, cells: &[(u64, usize)]) -> Result<Vec<Calibration>> {
    cells
        .par_iter()
        .map(|&(seed, size)| {
            let hp = HyperParams { seed, ..*hp };
            Ok(Calibration {
                seed,
                sample_size: size,
                reference: calibrate_budget(&base.prefix(size), &hp)?,
            })
        })
        .collect()
}

/// Every budget level x solver x seed on the first `num_samples` candidates.
/// Budgets are scale factors of a KL calibration run with the same seed.
/// Writes all outputs under `cfg.output_dir`.
pub fn run_budget_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    let prep = prepare(cfg, cfg.num_samples)?;
    let out = cfg.output_dir.as_path();
    write_common(out, cfg, &prep)?;
    let n = cfg.num_samples;
    let cal_cells: Vec<(u64, usize)> = cfg.seeds.iter().map(|&s| (s, n)).collect();
    let calibration = calibrate_all(&prep.base, &cfg.hyper, &cal_cells)?;

    let mut cells = Vec::new();
    for &level in &cfg.budget_levels {
        for &solver in &cfg.solvers {
            for (c, &seed) in calibration.iter().zip(&cfg.seeds) {
                let key = CellKey {
                    experiment: ExperimentKind::Budget,
                    solver,
                    level,
                    size: n,
                    seed,
                    init: InitKind::Random,
                };
                cells.push((key, scale_budget(&c.reference, level)));
            }
        }
    }
    let outcomes: Vec<CellOutcome> = cells
        .into_par_iter()
        .map(|(key, budgets)| {
            let problem = prep.base.with_budgets(budgets).expect("scaled budgets are valid");
            run_cell(key, problem, &cfg.hyper, None)
        })
        .collect();
    assemble(out, outcomes, &calibration)
}

/// Every solver at every nested sample size, once from the default start and
/// once warm-started from the solver's own result at the previous size.
pub fn run_scalability_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    let sizes = &cfg.sample_sizes;
    let largest = *sizes
        .last()
        .ok_or_else(|| Error::invalid("sample_sizes must not be empty"))?;
    let prep = prepare(cfg, largest)?;
    let out = cfg.output_dir.as_path();
    write_common(out, cfg, &prep)?;
    let level = cfg.scale_budget_level;
    let cal_cells: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| sizes.iter().map(move |&n| (s, n)))
        .collect();
    let calibration = calibrate_all(&prep.base, &cfg.hyper, &cal_cells)?;
    let problem_for = |seed: u64, size: usize| -> PerturbProblem {
        let c = calibration
            .iter()
            .find(|c| c.seed == seed && c.sample_size == size)
            .expect("calibrated every (seed, size)");
        prep.base
            .prefix(size)
            .with_budgets(scale_budget(&c.reference, level))
            .expect("scaled budgets are valid")
    };

    let chains: Vec<(SolverKind, u64)> = cfg
        .solvers
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let random: Vec<CellOutcome> = chains
        .par_iter()
        .flat_map_iter(|&(solver, seed)| {
            sizes.iter().map(move |&size| (solver, seed, size)).collect::<Vec<_>>()
        })
        .map(|(solver, seed, size)| {
            let key = CellKey {
                experiment: ExperimentKind::Scale,
                solver,
                level,
                size,
                seed,
                init: InitKind::Random,
            };
            run_cell(key, problem_for(seed, size), &cfg.hyper, None)
        })
        .collect();
    let warm: Vec<Vec<CellOutcome>> = chains
        .par_iter()
        .map(|&(solver, seed)| {
            let mut chain: Vec<CellOutcome> = Vec::with_capacity(sizes.len());
            for &size in sizes {
                let start = chain
                    .last()
                    .and_then(|prev| prev.result.as_ref().ok())
                    .map(|(state, _)| state.xhat.clone());
                let key = CellKey {
                    experiment: ExperimentKind::Scale,
                    solver,
                    level,
                    size,
                    seed,
                    init: InitKind::Warm,
                };
                chain.push(run_cell(key, problem_for(seed, size), &cfg.hyper, start));
            }
            chain
        })
        .collect();

    // Order: size, then init, then configured solver order, then seed.
    let mut outcomes: Vec<CellOutcome> = random.into_iter().chain(warm.into_iter().flatten()).collect();
    let solver_rank = |k: SolverKind| cfg.solvers.iter().position(|&s| s == k).unwrap_or(usize::MAX);
    let seed_rank = |s: u64| cfg.seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    outcomes.sort_by_key(|o| (o.key.size, o.key.init, solver_rank(o.key.solver), seed_rank(o.key.seed)));
    assemble(out, outcomes, &calibration)
}

/// Replays every successful row of a sweep directory from its stored
/// artifacts and returns `(run_dir, problem)` for each failed check.
pub fn replay_verify(out: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let out = out.as_ref();
    let rows = read_report(out.join(REPORT_FILE))?;
    let mut problems = Vec::new();
    for row in rows.iter().filter(|r| r.status == RunStatus::Ok) {
        let dir = out.join(&row.run_dir);
        let (prob, _) = ProblemFile::load(dir.join("problem.json"))?.into_problem()?;
        let xhat = read_matrix_csv(dir.join("xhat.csv"))?;
        let text = std::fs::read_to_string(dir.join("run.json")).map_err(|e| Error::io(dir.join("run.json"), e))?;
        let record: serde_json::Value = serde_json::from_str(&text)?;
        let selected: Vec<usize> = serde_json::from_value(record["selected"].clone())?;
        if selected.len() != row.selected {
            problems.push((
                row.run_dir.clone(),
                format!("run.json lists {} samples, report says {}", selected.len(), row.selected),
            ));
        }
        for p in verify_selection(&prob, xhat.view(), &selected)? {
            problems.push((row.run_dir.clone(), p));
        }
    }
    Ok(problems)
}
