use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lumpfit::config::KeyValues;
use lumpfit::control::{synthesize_control, ControlConfig, ControlProblem};
use lumpfit::data_io::{self, RawRecord};
use lumpfit::synth::{generate_ensemble, GroundTruthSpec};
use lumpfit::training::{self, history_csv, FitReport, TrainConfig};
use lumpfit::{Error, LumpedModel, SolverConfig};

#[derive(Parser)]
#[command(name = "lumpfit", version, about = "Fit and control neural lumped-parameter thermal models")]
#[command(propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic run ensemble from a known ground-truth model
    Synth(SynthArgs),
    /// Fit models with the shuffle-split protocol
    Fit(FitArgs),
    /// Simulate a fitted model under a recorded power signal
    Predict(PredictArgs),
    /// Synthesize an open-loop power profile that tracks a set point
    Control(ControlArgs),
    /// Export the learned heat-input surface on a grid
    Surface(SurfaceArgs),
    /// Merge fit reports into one table
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Ground-truth spec as `key = value` lines; defaults when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for run CSVs and the spec copy
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    runs: usize,
    #[arg(long, env = "LUMPFIT_SEED")]
    seed: Option<u64>,
    /// Sampling interval in seconds
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Run CSV file or directory of run CSVs
    #[arg(long)]
    data: PathBuf,
    /// Training config as `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file for the best trial; per-trial files and reports go next to it
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, env = "LUMPFIT_SEED")]
    seed: Option<u64>,
    /// Worker threads for running trials (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Single-run CSV with `t,temperature,power`
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Resample to this interval first (default: the run's own spacing)
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 5)]
    substeps: usize,
}

#[derive(Args)]
struct ControlArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 700.0)]
    tset: f64,
    #[arg(long, default_value_t = 4000.0)]
    pmax: f64,
    #[arg(long, default_value_t = 300.0)]
    horizon: f64,
    #[arg(long, default_value_t = 23.0)]
    tinit: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, env = "LUMPFIT_SEED")]
    seed: Option<u64>,
    /// Output directory for profile, trajectory and history CSVs
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    tmin: f64,
    #[arg(long, default_value_t = 1000.0)]
    tmax: f64,
    #[arg(long, default_value_t = 0.0)]
    pmin: f64,
    #[arg(long, default_value_t = 4000.0)]
    pmax: f64,
    /// Points per axis
    #[arg(long, default_value_t = 100)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `*_report.csv` files
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::MalformedRow { .. }
            | Error::NonMonotoneTime { .. }
            | Error::EmptyRun { .. }
            | Error::Parse { .. }
            | Error::InvalidParameter(_)
            | Error::InvalidConfig(_)
            | Error::InvalidGrid(_)
            | Error::SpanTooShort { .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Control(a) => cmd_control(a),
        Command::Surface(a) => cmd_surface(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let mut spec = match &a.spec {
        Some(p) => GroundTruthSpec::from_key_values(&KeyValues::load(p)?)?,
        None => GroundTruthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if a.runs == 0 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    let runs = generate_ensemble(&spec, a.runs, a.dt, spec.seed)?;
    for run in &runs {
        let path = a.out.join(format!("{}.csv", run.id()));
        data_io::write_record(&path, &RawRecord::from_run(run))?;
    }
    data_io::write_text(&a.out.join("spec.txt"), &spec.to_text())?;
    println!("wrote {} runs to {}", runs.len(), a.out.display());
    Ok(())
}

/// `dir/stem<suffix>`, where `stem` is the file stem of `base`.
fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    base.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    let mut config = TrainConfig::default();
    if let Some(p) = &a.config {
        config.apply(&KeyValues::load(p)?)?;
    }
    if let Some(t) = a.trials {
        config.trials = t;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    if a.jobs == Some(0) {
        return Err(Failure::usage("--jobs must be at least 1"));
    }

    let records = data_io::load_runs(&a.data)?;
    if records.len() <= config.n_train {
        return Err(Failure::usage(format!(
            "need more than {} runs for a {}-run training split, found {}",
            config.n_train,
            config.n_train,
            records.len()
        )));
    }
    let runs = records
        .iter()
        .map(|r| data_io::resample(r, config.dt_resample))
        .collect::<lumpfit::Result<Vec<_>>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let outcomes = pool.install(|| training::run_protocol(&runs, &config))?;

    let mut report = FitReport::default();
    for o in &outcomes {
        let n = o.report.trial;
        o.fit.model.save(&sibling(&a.out, &format!("_trial{n:02}.txt")))?;
        data_io::write_text(&sibling(&a.out, &format!("_history_trial{n:02}.csv")), &history_csv(&o.fit.history))?;
        report.rows.push(o.report.clone());
    }
    let best = outcomes
        .iter()
        .min_by(|x, y| x.report.test_loss.total_cmp(&y.report.test_loss))
        .expect("at least one trial");
    best.fit.model.save(&a.out)?;
    let table = report.render_table();
    data_io::write_text(&sibling(&a.out, "_report.csv"), &report.to_csv())?;
    data_io::write_text(&sibling(&a.out, "_report.md"), &table)?;
    data_io::write_text(&sibling(&a.out, "_config.txt"), &config.to_text())?;
    print!("{table}");
    println!("best test loss: trial {} -> {}", best.report.trial, a.out.display());
    Ok(())
}

/// Spacing of a record's timestamps, if uniform.
fn uniform_spacing(record: &RawRecord) -> Option<f64> {
    let t = &record.times;
    if t.len() < 2 {
        return None;
    }
    let dt = t[1] - t[0];
    let uniform = t
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
    uniform.then_some(dt)
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    let model = LumpedModel::load(&a.model)?;
    let mut records = data_io::load_runs(&a.run)?;
    if records.len() != 1 {
        return Err(Failure::usage(format!(
            "{} holds {} runs; predict takes a single run",
            a.run.display(),
            records.len()
        )));
    }
    let record = records.remove(0);
    let dt = match a.dt.or_else(|| uniform_spacing(&record)) {
        Some(dt) => dt,
        None => return Err(Failure::usage("timestamps are not uniform; pass --dt to resample")),
    };
    let run = data_io::resample(&record, dt)?;
    let traj = model.simulate(
        &run.power_signal()?,
        run.initial_temperature(),
        run.grid(),
        &SolverConfig::fixed(a.substeps),
    )?;
    let predicted = traj.scalar_states();
    data_io::write_text(&a.out, &data_io::prediction_csv(&run.times(), run.temperatures(), &predicted))?;
    let sse: f64 = predicted
        .iter()
        .zip(run.temperatures())
        .map(|(p, y)| (p - y).powi(2))
        .sum();
    println!("loss {sse:?} rmse {:?}", (sse / run.len() as f64).sqrt());
    Ok(())
}

fn cmd_control(a: ControlArgs) -> CmdResult {
    let model = LumpedModel::load(&a.model)?;
    let problem = ControlProblem {
        t_set: a.tset,
        p_max: a.pmax,
        horizon: a.horizon,
        t_init: a.tinit,
        dt: a.dt,
    };
    problem.validate(&model)?;
    let config = ControlConfig {
        seed: a.seed.unwrap_or(0),
        ..Default::default()
    };
    let syn = synthesize_control(&model, &problem, &config)?;
    data_io::write_text(
        &a.out.join("profile.csv"),
        &data_io::series_csv(("t", "power_W"), &syn.times, &syn.profile),
    )?;
    data_io::write_text(
        &a.out.join("trajectory.csv"),
        &data_io::series_csv(("t", "temperature_C"), &syn.times, &syn.temperatures),
    )?;
    data_io::write_text(&a.out.join("history.csv"), &history_csv(&syn.history))?;
    let last = syn.temperatures.last().copied().unwrap_or(f64::NAN);
    println!("loss {:?} final temperature {last:.3}", syn.loss);
    Ok(())
}

fn cmd_surface(a: SurfaceArgs) -> CmdResult {
    let model = LumpedModel::load(&a.model)?;
    let points = model.heat_surface((a.tmin, a.tmax), (a.pmin, a.pmax), (a.res, a.res))?;
    data_io::write_text(&a.out, &data_io::surface_csv(&points))?;
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let entries = std::fs::read_dir(&a.reports)
        .map_err(|e| Failure::runtime(format!("{}: {e}", a.reports.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with("_report.csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::runtime(format!("no *_report.csv files in {}", a.reports.display())));
    }
    let mut merged = FitReport::default();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Failure::runtime(format!("{}: {e}", f.display())))?;
        let report = FitReport::from_csv(&text).map_err(|e| Failure::runtime(format!("{}: {e}", f.display())))?;
        merged.rows.extend(report.rows);
    }
    let table = merged.render_table();
    data_io::write_text(&a.out, &table)?;
    print!("{table}");
    Ok(())
}
