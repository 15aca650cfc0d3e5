use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use invclass_core::harness::{
    self, generate_synthetic, perturbable_mask, read_report, replay_verify, run_budget_sweep,
    run_scalability_sweep, run_single, summarize, ExperimentConfig, RunStatus, REPORT_FILE,
};
use invclass_core::problem::{PerturbProblem, ProblemFile, UNLIMITED_BUDGET};
use invclass_core::{Dataset, Error, HyperParams, ModelFile, ModelKind, SolverKind, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "invclass", version, about = "Budget-constrained inverse classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic Gaussian-blob dataset as CSV.
    GenData(GenDataArgs),
    /// Train a classifier on a CSV dataset.
    Train(TrainArgs),
    /// Build a problem file from a dataset and a trained model.
    MakeProblem(MakeProblemArgs),
    /// Measure per-feature consumption of an unconstrained KL run.
    Calibrate(CalibrateArgs),
    /// Run one solver on a problem file.
    Perturb(PerturbArgs),
    /// Budget levels x solvers x seeds.
    SweepBudget(SweepArgs),
    /// Nested sample sizes with warm and random starts.
    SweepScale(SweepArgs),
    /// Summarize an output directory and optionally replay feasibility.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "logistic")]
    kind: ModelKind,
    /// Train on the leading rows only.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MakeProblemArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Skip this many leading rows, e.g. the training rows.
    #[arg(long, default_value_t = 0)]
    skip: usize,
    #[arg(long, default_value_t = 60)]
    num_samples: usize,
    /// Required for more than two classes.
    #[arg(long)]
    desired_class: Option<usize>,
    /// Perturbable feature indices; default all.
    #[arg(long, value_delimiter = ',')]
    perturbable: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Budget applied to every feature.
    #[arg(long, default_value_t = UNLIMITED_BUDGET)]
    budget: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    problem: PathBuf,
    #[command(flatten)]
    hp: HpArgs,
    /// JSON output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    solver: SolverKind,
    #[arg(long)]
    problem: PathBuf,
    /// Replace the problem's budgets with `level` times the reference in
    /// this calibration file.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, requires = "calibration")]
    level: f64,
    #[command(flatten)]
    hp: HpArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hp: HpArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Replay both constraint families from the stored artifacts.
    #[arg(long)]
    verify: bool,
}

macro_rules! hp_args {
    ($($field:ident : $ty:ty = $flag:literal),* $(,)?) => {
        /// `--hp.<name>` overrides, applied on top of the config or defaults.
        #[derive(Args, Debug, Default, Clone)]
        struct HpArgs {
            /// Hyperparameter JSON file applied before the flags.
            #[arg(long = "hp-file")]
            file: Option<PathBuf>,
            $(
                #[arg(long = $flag, value_name = "VALUE")]
                $field: Option<$ty>,
            )*
        }

        impl HpArgs {
            fn apply(&self, mut hp: HyperParams) -> Result<HyperParams> {
                if let Some(path) = &self.file {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    hp = serde_json::from_str(&text).map_err(Error::from)?;
                }
                $(
                    if let Some(v) = self.$field {
                        hp.$field = v.into();
                    }
                )*
                hp.validate()?;
                Ok(hp)
            }
        }
    };
}

hp_args! {
    delta: f64 = "hp.delta",
    kappa: f64 = "hp.kappa",
    tau: f64 = "hp.tau",
    relative_indicator: bool = "hp.relative_indicator",
    omega: f64 = "hp.omega",
    n_samples: usize = "hp.n_samples",
    k_draws: usize = "hp.k_draws",
    epsilon: f64 = "hp.epsilon",
    a: f64 = "hp.a",
    alpha: f64 = "hp.alpha",
    beta: f64 = "hp.beta",
    gamma0: f64 = "hp.gamma0",
    eta0: f64 = "hp.eta0",
    outer_iters: usize = "hp.outer_iters",
    inner_iters: usize = "hp.inner_iters",
    lambda0: f64 = "hp.lambda0",
    mu0: f64 = "hp.mu0",
    noise_std: f64 = "hp.noise_std",
    pi0: f64 = "hp.pi0",
    init_noise: f64 = "hp.init_noise",
    seed: u64 = "hp.seed",
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let data = generate_synthetic(a.n, a.p, a.k, a.separation, a.seed)?;
    write(&a.out, &data.to_csv_string()?)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut data = Dataset::read_csv(&a.data)?;
    if let Some(rows) = a.rows {
        if rows == 0 || rows > data.len() {
            bail!(Error::Invalid(format!("--rows must lie in 1..={}", data.len())));
        }
        data = data.split_at(rows).0;
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        l2: a.l2.unwrap_or(d.l2),
        hidden: a.hidden.unwrap_or(d.hidden),
        seed: a.seed,
    };
    let model = invclass_core::classifier::train(&data, &cfg, a.kind)?;
    log::info!("train accuracy {:.4}", model.train_accuracy);
    let text = serde_json::to_string_pretty(&ModelFile::from_model(&model))? + "\n";
    write(&a.out, &text)
}

fn make_problem(a: MakeProblemArgs) -> Result<()> {
    let data = Dataset::read_csv(&a.data)?;
    if a.skip >= data.len() {
        bail!(Error::Invalid(format!("--skip {} leaves no rows", a.skip)));
    }
    let pool = data.split_at(a.skip).1;
    let model = ModelFile::load(&a.model)?.into_model()?;
    let cfg = ExperimentConfig {
        desired_class: a.desired_class,
        perturbable: a.perturbable.clone(),
        ..Default::default()
    };
    let rule = harness::DesiredRule::from_config(&cfg, model.classifier.num_classes())?;
    let picked = harness::select_candidates(&model, &pool, rule, a.num_samples)?;
    if picked.len() < a.num_samples {
        bail!(Error::Invalid(format!(
            "only {} eligible candidates, {} requested",
            picked.len(),
            a.num_samples
        )));
    }
    let p = pool.num_features();
    let rows: Vec<usize> = picked.iter().map(|(r, _)| *r).collect();
    let prob = PerturbProblem::new(
        pool.features.select(ndarray_axis0(), &rows),
        perturbable_mask(&cfg, p)?,
        vec![a.budget; p],
        picked.iter().map(|(_, d)| *d).collect(),
        a.delta,
        Arc::new(model.classifier),
    )?;
    let model_path = std::fs::canonicalize(&a.model)
        .with_context(|| format!("resolving {}", a.model.display()))?;
    let file = ProblemFile::from_problem(&prob, model_path);
    write(&a.out, &(serde_json::to_string_pretty(&file)? + "\n"))
}

fn ndarray_axis0() -> invclass_core::ndarray::Axis {
    invclass_core::ndarray::Axis(0)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CalibrationFile {
    reference: Vec<f64>,
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let (prob, _) = ProblemFile::load(&a.problem)?.into_problem()?;
    let hp = a.hp.apply(HyperParams::default())?;
    let reference = harness::calibrate_budget(&prob, &hp)?;
    let text = serde_json::to_string_pretty(&CalibrationFile { reference })? + "\n";
    match &a.out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let file = ProblemFile::load(&a.problem)?;
    let model = std::fs::canonicalize(&file.classifier)
        .with_context(|| format!("resolving {}", file.classifier.display()))?;
    let (mut prob, _) = file.into_problem()?;
    let hp = a.hp.apply(HyperParams::default())?;
    if let Some(path) = &a.calibration {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cal: CalibrationFile = serde_json::from_str(&text).map_err(Error::from)?;
        if !(a.level > 0.0) {
            bail!(Error::Invalid("--level must be > 0".into()));
        }
        prob = prob.with_budgets(harness::scale_budget(&cal.reference, a.level))?;
    }
    let row = run_single(prob, a.solver, &hp, a.level, &model, &a.out)?;
    println!(
        "{}: selected {} of {}, consumption/sample {:.6}",
        a.solver, row.selected, row.sample_size, row.consumption_per_sample
    );
    Ok(())
}

fn load_config(a: &SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    cfg.hyper = a.hp.apply(cfg.hyper)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(rows: &[harness::ReportRow]) {
    println!("{:<6} {:<5} {:>6} {:>6} {:<6} {:>5} {:>12} {:>8}", "exp", "solver", "level", "size", "init", "runs", "mean |S|", "vs kl");
    for g in summarize(rows).groups {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<6} {:<5} {:>6} {:>6} {:<6} {:>5} {:>12} {:>8}",
            format!("{:?}", g.experiment).to_lowercase(),
            g.solver,
            g.budget_level,
            g.sample_size,
            format!("{:?}", g.init).to_lowercase(),
            g.runs - g.failed,
            fmt(g.mean_selected),
            fmt(g.mean_relative_improvement_vs_kl),
        );
    }
}

fn sweep(a: SweepArgs, scale: bool) -> Result<()> {
    let cfg = load_config(&a)?;
    let report = if scale {
        run_scalability_sweep(&cfg)?
    } else {
        run_budget_sweep(&cfg)?
    };
    print_summary(&report.rows);
    let failed = report.rows.iter().filter(|r| r.status == RunStatus::Failed).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed", report.rows.len());
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rows = read_report(a.dir.join(REPORT_FILE))?;
    print_summary(&rows);
    if a.verify {
        let problems = replay_verify(&a.dir)?;
        for (run, p) in &problems {
            println!("{run}: {p}");
        }
        if !problems.is_empty() {
            bail!(Error::Invalid(format!("{} feasibility violations", problems.len())));
        }
        println!("replayed {} runs: feasible", rows.iter().filter(|r| r.status == RunStatus::Ok).count());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_solver_abort() => 3,
        Some(Error::Io { .. }) | None => 1,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::MakeProblem(a) => make_problem(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Perturb(a) => perturb(a),
        Command::SweepBudget(a) => sweep(a, false),
        Command::SweepScale(a) => sweep(a, true),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already print their own source
            let mut parts = Vec::new();
            for cause in e.chain() {
                parts.push(cause.to_string());
                if cause.is::<Error>() {
                    break;
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(exit_code(&e))
        }
    }
}
