//! System identification: loss over run collections, time-shift
//! augmentation, shuffle-split trials, Adam followed by L-BFGS, and
//! per-trial reporting.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradient::{self, LossSpec};
use crate::model::{LumpedModel, PowerSignal};
use crate::ode::{SolverConfig, TimeGrid};
use crate::optim::{self, Adam, LbfgsConfig};

/// One plunge/dwell record on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    id: String,
    grid: TimeGrid,
    temperatures: Vec<f64>,
    powers: Vec<f64>,
}

impl ExperimentRun {
    pub fn new(id: String, grid: TimeGrid, temperatures: Vec<f64>, powers: Vec<f64>) -> Result<Self> {
        let n = grid.n_points();
        if temperatures.len() != n || powers.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: temperatures.len().min(powers.len()),
            });
        }
        if temperatures.iter().chain(&powers).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("run `{id}` contains non-finite samples")));
        }
        Ok(Self {
            id,
            grid,
            temperatures,
            powers,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// Initial condition of the run's IVP: its first temperature sample.
    pub fn initial_temperature(&self) -> f64 {
        self.temperatures[0]
    }

    pub fn power_signal(&self) -> Result<PowerSignal> {
        PowerSignal::new(self.grid.times(), self.powers.clone())
    }
}

/// Translates a trace by `shift` seconds on its own grid: sample `k` reads
/// the original at `t_k - shift`, holding the boundary value outside the
/// record.
fn shift_trace(values: &[f64], dt: f64, shift: f64) -> Vec<f64> {
    let n = values.len();
    let steps = shift / dt;
    let whole = steps.round();
    if (steps - whole).abs() < 1e-9 {
        let whole = whole as i64;
        return (0..n as i64)
            .map(|k| values[(k - whole).clamp(0, n as i64 - 1) as usize])
            .collect();
    }
    (0..n)
        .map(|k| {
            let x = k as f64 - steps;
            if x <= 0.0 {
                values[0]
            } else if x >= (n - 1) as f64 {
                values[n - 1]
            } else {
                let i = x.floor() as usize;
                let w = x - i as f64;
                values[i] + w * (values[i + 1] - values[i])
            }
        })
        .collect()
}

/// The original run followed by one copy per shift, temperature and power
/// translated together.
pub fn augment_time_shift(run: &ExperimentRun, shifts: &[f64]) -> Result<Vec<ExperimentRun>> {
    let dt = run.grid.dt();
    let mut out = Vec::with_capacity(shifts.len() + 1);
    out.push(run.clone());
    for (i, &shift) in shifts.iter().enumerate() {
        if !shift.is_finite() {
            return Err(Error::InvalidParameter(format!("shift {shift} is not finite")));
        }
        out.push(ExperimentRun {
            id: format!("{}+shift{}", run.id, i + 1),
            grid: run.grid,
            temperatures: shift_trace(&run.temperatures, dt, shift),
            powers: shift_trace(&run.powers, dt, shift),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub copies_per_run: usize,
    pub max_shift_s: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            copies_per_run: 3,
            max_shift_s: 20.0,
        }
    }
}

/// Draws `copies_per_run` shifts uniformly in `[-max_shift, max_shift]`,
/// rounded to whole grid steps, for each run and returns all augmented runs.
pub fn augment_runs(runs: &[ExperimentRun], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Vec<ExperimentRun>> {
    let mut out = Vec::new();
    for run in runs {
        let dt = run.grid.dt();
        let max_steps = (cfg.max_shift_s / dt).floor() as i64;
        let shifts: Vec<f64> = (0..cfg.copies_per_run)
            .map(|_| rng.random_range(-max_steps..=max_steps) as f64 * dt)
            .collect();
        out.extend(augment_time_shift(run, &shifts)?);
    }
    Ok(out)
}

/// Partition of run indices for one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Independent RNG stream for trial `trial` under a master seed.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

/// `n_trials` uniformly random train/test partitions of `n_runs` indices.
pub fn shuffle_split(n_runs: usize, n_trials: usize, n_train: usize, seed: u64) -> Result<Vec<Split>> {
    if n_train == 0 || n_train >= n_runs {
        return Err(Error::InvalidParameter(format!(
            "need 0 < n_train < n_runs, got {n_train} of {n_runs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_trials)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n_runs).collect();
            idx.shuffle(&mut rng);
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam_epochs: usize,
    pub adam_lr: f64,
    pub lbfgs: LbfgsConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub dt_resample: f64,
    pub substeps: usize,
    pub init_capacitance: f64,
    pub n_train: usize,
    pub trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam_epochs: 200,
            adam_lr: 1e-3,
            lbfgs: LbfgsConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            dt_resample: 1.0,
            substeps: 5,
            init_capacitance: 10.0,
            n_train: 4,
            trials: 10,
        }
    }
}

impl TrainConfig {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            solver: SolverConfig::fixed(self.substeps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("adam_lr", self.adam_lr),
            ("dt_resample", self.dt_resample),
            ("init_capacitance", self.init_capacitance),
            ("rel_loss_tol", self.lbfgs.rel_loss_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 || self.lbfgs.memory == 0 || self.trials == 0 {
            return Err(Error::InvalidParameter(
                "substeps, memory and trials must be positive".into(),
            ));
        }
        if self.augment.max_shift_s < 0.0 {
            return Err(Error::InvalidParameter("max_shift_s must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: LumpedModel,
    pub history: Vec<HistoryEntry>,
}

fn diverged(e: Error, phase: &str) -> Error {
    match e {
        Error::NonFiniteState { .. } | Error::NonFiniteGradient { .. } => {
            Error::DivergedFit(format!("{phase}: {e}"))
        }
        other => other,
    }
}

/// Fits a fresh model (seeded from `config.seed`) to `train_runs`.
pub fn fit(train_runs: &[ExperimentRun], config: &TrainConfig) -> Result<FitOutcome> {
    let init = LumpedModel::new(config.seed, config.init_capacitance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0x5eed);
    fit_from(init, train_runs, config, &mut rng)
}

/// Adam then L-BFGS from `init` on the augmented `train_runs`.
pub fn fit_from(
    init: LumpedModel,
    train_runs: &[ExperimentRun],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<FitOutcome> {
    if train_runs.is_empty() {
        return Err(Error::InvalidParameter("fit needs at least one run".into()));
    }
    config.validate()?;
    let runs = augment_runs(train_runs, &config.augment, rng)?;
    let spec = config.loss_spec();
    let mut model = init;
    let mut history = Vec::new();

    let mut params = model.trainable();
    let mut best = (f64::INFINITY, params.clone());
    let mut adam = Adam::new(params.len(), config.adam_lr);
    for epoch in 0..config.adam_epochs {
        let candidate = model.with_trainable(&params)?;
        let (loss, grad) =
            gradient::loss_and_gradient(&candidate, &runs, &spec).map_err(|e| diverged(e, "adam"))?;
        if !loss.is_finite() {
            return Err(Error::DivergedFit(format!("adam epoch {epoch}: loss {loss}")));
        }
        history.push(HistoryEntry {
            phase: Phase::Adam,
            iteration: epoch,
            loss,
        });
        if loss < best.0 {
            best = (loss, params.clone());
        }
        adam.step(&mut params, grad.as_slice());
    }
    if config.adam_epochs > 0 {
        let loss = gradient::mse_loss(&model.with_trainable(&params)?, &runs, &spec)
            .map_err(|e| diverged(e, "adam"))?;
        if loss < best.0 {
            best = (loss, params.clone());
        }
    }
    model.set_trainable(&best.1)?;

    let base = model.clone();
    let result = optim::lbfgs(
        |p| {
            let m = base.with_trainable(p)?;
            gradient::loss_and_gradient(&m, &runs, &spec).map(|(l, g)| (l, g.into_vec()))
        },
        &model.trainable(),
        &config.lbfgs,
        |iteration, loss| {
            history.push(HistoryEntry {
                phase: Phase::Lbfgs,
                iteration,
                loss,
            })
        },
    )
    .map_err(|e| diverged(e, "lbfgs"))?;
    if !result.loss.is_finite() {
        return Err(Error::DivergedFit(format!("lbfgs: loss {}", result.loss)));
    }
    model.set_trainable(&result.x)?;
    Ok(FitOutcome { model, history })
}

/// Eq.-10 loss and per-point RMSE of a model on a set of runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub rmse: f64,
}

pub fn evaluate(model: &LumpedModel, runs: &[ExperimentRun], spec: &LossSpec) -> Result<Evaluation> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("evaluation needs at least one run".into()));
    }
    let sums = gradient::residual_sums(model, runs, spec)?;
    let total: f64 = sums.iter().map(|(s, _)| s).sum();
    let points: usize = sums.iter().map(|(_, n)| n).sum();
    Ok(Evaluation {
        loss: total / runs.len() as f64,
        rmse: (total / points as f64).sqrt(),
    })
}

/// Eq.-10 loss (see [`gradient::mse_loss`]).
pub fn mse_loss(model: &LumpedModel, runs: &[ExperimentRun], spec: &LossSpec) -> Result<f64> {
    gradient::mse_loss(model, runs, spec)
}

/// One trial of the shuffle-split protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub trial: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub capacitance: f64,
    pub train_rmse: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub report: TrialReport,
    pub split: Split,
    pub fit: FitOutcome,
}

/// Fits and evaluates one trial. Trial numbers are 1-based.
pub fn run_trial(runs: &[ExperimentRun], split: &Split, trial: usize, config: &TrainConfig) -> Result<TrialOutcome> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| runs[i].clone()).collect::<Vec<_>>();
    let train = pick(&split.train);
    let test = pick(&split.test);
    let trial_seed = config.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64);
    let init = LumpedModel::new(trial_seed, config.init_capacitance)?;
    let mut rng = trial_rng(config.seed, trial);
    let fit = fit_from(init, &train, config, &mut rng).map_err(|e| match e {
        Error::DivergedFit(msg) => Error::DivergedFit(format!("trial {trial}: {msg}")),
        other => other,
    })?;
    let spec = config.loss_spec();
    let tr = evaluate(&fit.model, &train, &spec)?;
    let te = evaluate(&fit.model, &test, &spec)?;
    Ok(TrialOutcome {
        report: TrialReport {
            trial,
            train_loss: tr.loss,
            test_loss: te.loss,
            capacitance: fit.model.capacitance(),
            train_rmse: tr.rmse,
            test_rmse: te.rmse,
        },
        split: split.clone(),
        fit,
    })
}

/// The full shuffle-split protocol; trials run in parallel but results do
/// not depend on scheduling.
pub fn run_protocol(runs: &[ExperimentRun], config: &TrainConfig) -> Result<Vec<TrialOutcome>> {
    let splits = shuffle_split(runs.len(), config.trials, config.n_train, config.seed)?;
    splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| run_trial(runs, split, i + 1, config))
        .collect()
}

/// Per-trial results in Table-1 form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub rows: Vec<TrialReport>,
}

/// Three significant figures, no exponent for the magnitudes seen here.
pub fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = v.abs().log10().floor() as i32;
    let decimals = (2 - digits).max(0) as usize;
    let scale = 10f64.powi(digits - 2);
    let rounded = if digits > 2 { (v / scale).round() * scale } else { v };
    format!("{rounded:.decimals$}")
}

impl FitReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,train_loss,test_loss,capacitance\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", r.trial, r.train_loss, r.test_loss, r.capacitance);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim());
        if header != Some("trial,train_loss,test_loss,capacitance") {
            return Err(Error::Parse {
                path: "<report>".into(),
                line: 1,
                reason: "expected header `trial,train_loss,test_loss,capacitance`".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Parse {
                path: "<report>".into(),
                line: i + 1,
                reason,
            };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
            rows.push(TrialReport {
                trial: f[0].parse().map_err(|e| bad(format!("{}: {e}", f[0])))?,
                train_loss: num(f[1])?,
                test_loss: num(f[2])?,
                capacitance: num(f[3])?,
                train_rmse: f64::NAN,
                test_rmse: f64::NAN,
            });
        }
        Ok(Self { rows })
    }

    /// Transposed layout with one column per trial; the smallest train and
    /// test losses are set in bold.
    pub fn render_table(&self) -> String {
        let argmin = |key: fn(&TrialReport) -> f64| {
            self.rows
                .iter()
                .enumerate()
                .min_by(|a, b| key(a.1).total_cmp(&key(b.1)))
                .map(|(i, _)| i)
        };
        let best_train = argmin(|r| r.train_loss);
        let best_test = argmin(|r| r.test_loss);
        let bold = |s: String, on: bool| if on { format!("**{s}**") } else { s };

        let mut lines: Vec<Vec<String>> = vec![
            vec!["Trial No.".into()],
            vec!["Train".into()],
            vec!["Test".into()],
            vec!["C".into()],
        ];
        for (i, r) in self.rows.iter().enumerate() {
            lines[0].push(r.trial.to_string());
            lines[1].push(bold(sig3(r.train_loss), Some(i) == best_train));
            lines[2].push(bold(sig3(r.test_loss), Some(i) == best_test));
            lines[3].push(sig3(r.capacitance));
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, line) in lines.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
            if k == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
            }
        }
        out
    }
}

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("phase,iteration,loss\n");
    for h in history {
        let _ = writeln!(out, "{},{},{:?}", h.phase.name(), h.iteration, h.loss);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: &str, temps: Vec<f64>, powers: Vec<f64>) -> ExperimentRun {
        let grid = TimeGrid::with_points(0.0, 1.0, temps.len()).unwrap();
        ExperimentRun::new(id.into(), grid, temps, powers).unwrap()
    }

    #[test]
    fn run_validation() {
        let grid = TimeGrid::new(0.0, 2.0, 1.0).unwrap();
        assert!(ExperimentRun::new("a".into(), grid, vec![1.0; 2], vec![1.0; 3]).is_err());
        assert!(ExperimentRun::new("a".into(), grid, vec![1.0, f64::NAN, 1.0], vec![1.0; 3]).is_err());
    }

    #[test]
    fn zero_shift_is_identity() {
        let r = run("a", (0..10).map(|v| v as f64).collect(), vec![5.0; 10]);
        let aug = augment_time_shift(&r, &[0.0]).unwrap();
        assert_eq!(aug.len(), 2);
        assert_eq!(aug[1].temperatures(), r.temperatures());
        assert_eq!(aug[0], r);
    }

    #[test]
    fn positive_shift_holds_start() {
        let temps: Vec<f64> = (0..20).map(|v| 100.0 + v as f64).collect();
        let powers: Vec<f64> = (0..20).map(|v| 10.0 * v as f64).collect();
        let r = run("a", temps.clone(), powers.clone());
        let s = &augment_time_shift(&r, &[5.0]).unwrap()[1];
        for k in 0..20 {
            let src = if k >= 5 { k - 5 } else { 0 };
            assert_eq!(s.temperatures()[k], temps[src]);
            assert_eq!(s.powers()[k], powers[src]);
        }
        assert_eq!(s.grid(), r.grid());
        let s = &augment_time_shift(&r, &[-3.0]).unwrap()[1];
        assert_eq!(s.temperatures()[19], temps[19]);
        assert_eq!(s.temperatures()[0], temps[3]);
    }

    #[test]
    fn fractional_shift_interpolates() {
        let r = run("a", (0..6).map(|v| 2.0 * v as f64).collect(), vec![0.0; 6]);
        let s = &augment_time_shift(&r, &[0.5]).unwrap()[1];
        assert_eq!(s.temperatures()[0], 0.0);
        assert!((s.temperatures()[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn splits_are_partitions() {
        let splits = shuffle_split(7, 10, 4, 3).unwrap();
        assert_eq!(splits.len(), 10);
        for s in &splits {
            assert_eq!(s.train.len(), 4);
            assert_eq!(s.test.len(), 3);
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..7).collect::<Vec<_>>());
        }
        assert_eq!(splits, shuffle_split(7, 10, 4, 3).unwrap());
        assert_ne!(splits, shuffle_split(7, 10, 4, 4).unwrap());
        assert!(shuffle_split(7, 10, 7, 3).is_err());
    }

    #[test]
    fn sig3_formatting() {
        assert_eq!(sig3(820.0), "820");
        assert_eq!(sig3(3114.0), "3110");
        assert_eq!(sig3(3.968), "3.97");
        assert_eq!(sig3(17.44), "17.4");
        assert_eq!(sig3(0.01234), "0.0123");
    }

    #[test]
    fn table_layout_and_bold_minimum() {
        let report = FitReport {
            rows: vec![
                TrialReport { trial: 1, train_loss: 820.0, test_loss: 974.0, capacitance: 3.97, train_rmse: 0.0, test_rmse: 0.0 },
                TrialReport { trial: 2, train_loss: 115.0, test_loss: 3110.0, capacitance: 17.4, train_rmse: 0.0, test_rmse: 0.0 },
            ],
        };
        let table = report.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("| Trial No. | 1"));
        assert!(lines[2].starts_with("| Train") && lines[2].contains("820") && lines[2].contains("**115**"));
        assert!(lines[3].starts_with("| Test") && lines[3].contains("**974**") && lines[3].contains("3110"));
        assert!(lines[4].starts_with("| C") && lines[4].contains("3.97") && lines[4].contains("17.4"));
        let csv = report.to_csv();
        assert!(csv.starts_with("trial,train_loss,test_loss,capacitance\n1,820.0,974.0,3.97\n"));
        let back = FitReport::from_csv(&csv).unwrap();
        assert_eq!(back.rows[1].capacitance, 17.4);
    }

    #[test]
    fn history_csv_format() {
        let h = [
            HistoryEntry { phase: Phase::Adam, iteration: 0, loss: 10.0 },
            HistoryEntry { phase: Phase::Lbfgs, iteration: 1, loss: 2.5 },
        ];
        assert_eq!(history_csv(&h), "phase,iteration,loss\nadam,0,10.0\nlbfgs,1,2.5\n");
    }
}
