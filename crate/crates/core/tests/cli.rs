use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumpfit::data_io::load_runs;
use lumpfit::{LumpedModel, SolverConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lumpfit"));
    c.env_remove("LUMPFIT_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Short runs so the fitting commands finish quickly.
const SHORT_SPEC: &str = "ramp_min = 5\nramp_max = 20\nduration_min = 40\nduration_max = 60\n";

const TINY_FIT: &str = "adam_epochs = 3\nmax_iters = 3\nn_train = 2\ncopies_per_run = 1\n";

fn synth(dir: &Path, runs: usize, seed: &str) -> PathBuf {
    let spec = dir.join("spec_in.txt");
    std::fs::write(&spec, SHORT_SPEC).unwrap();
    let out = dir.join("data");
    let o = run(&["synth", "--spec", p(&spec), "--out", p(&out), "--runs", &runs.to_string(), "--seed", seed]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn fit(dir: &Path, data: &Path, name: &str, trials: &str) -> PathBuf {
    let cfg = dir.join("fit.cfg");
    std::fs::write(&cfg, TINY_FIT).unwrap();
    let model = dir.join(name).join("model.txt");
    let o = run(&["fit", "--data", p(data), "--config", p(&cfg), "--out", p(&model), "--trials", trials, "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    model
}

#[test]
fn version_and_help_on_every_command() {
    for cmd in [&[][..], &["synth"], &["fit"], &["predict"], &["control"], &["surface"], &["report"]] {
        for flag in ["--help", "--version"] {
            let mut args = cmd.to_vec();
            args.push(flag);
            let o = run(&args);
            assert_eq!(o.status.code(), Some(0), "{args:?}");
        }
    }
    let o = run(&["--version"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_two() {
    let o = run(&["synth", "--runs", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--out", "x", "--bogus"]).status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec_in.txt");
    std::fs::write(&spec, SHORT_SPEC).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["synth", "--spec", p(&spec), "--out", p(out), "--runs", "7", "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    assert!(names.contains(&"spec.txt".to_string()));
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n}");
    }
    let runs = load_runs(&a).unwrap();
    assert_eq!(runs.len(), 7);
    assert_eq!(runs[0].id, "run01");
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let flag = dir.path().join("flag");
    let env = dir.path().join("env");
    assert!(run(&["synth", "--out", p(&flag), "--runs", "1", "--seed", "9", "--dt", "1"]).status.success());
    let o = bin()
        .args(["synth", "--out", p(&env), "--runs", "1", "--dt", "1"])
        .env("LUMPFIT_SEED", "9")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(flag.join("run01.csv")).unwrap(),
        std::fs::read(env.join("run01.csv")).unwrap()
    );
}

#[test]
fn fit_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, "2");
    let m1 = fit(dir.path(), &data, "one", "2");
    let m2 = fit(dir.path(), &data, "two", "2");
    let d1 = m1.parent().unwrap();
    for f in ["model.txt", "model_trial01.txt", "model_trial02.txt", "model_history_trial01.csv", "model_report.csv", "model_report.md"] {
        assert!(d1.join(f).exists(), "{f}");
    }
    let r1 = std::fs::read_to_string(d1.join("model_report.csv")).unwrap();
    let r2 = std::fs::read_to_string(m2.parent().unwrap().join("model_report.csv")).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.lines().count(), 3);
    assert!(r1.starts_with("trial,train_loss,test_loss,capacitance\n"));
    assert!(LumpedModel::load(&m1).unwrap().capacitance() > 0.0);
    let hist = std::fs::read_to_string(d1.join("model_history_trial01.csv")).unwrap();
    assert!(hist.starts_with("phase,iteration,loss\nadam,0,"));

    let single = fit(dir.path(), &data, "single", "1");
    let rep = std::fs::read_to_string(single.parent().unwrap().join("model_report.csv")).unwrap();
    assert_eq!(rep.lines().count(), 2);

    // the report command reproduces the table written by fit
    let out = dir.path().join("table.md");
    let o = run(&["report", "--reports", p(single.parent().unwrap()), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        std::fs::read_to_string(single.parent().unwrap().join("model_report.md")).unwrap()
    );
}

#[test]
fn fit_rejects_too_few_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, "2");
    let cfg = dir.path().join("fit.cfg");
    std::fs::write(&cfg, TINY_FIT).unwrap();
    let o = run(&["fit", "--data", p(&data), "--config", p(&cfg), "--out", p(&dir.path().join("m.txt"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_without_inputs_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--reports", p(dir.path()), "--out", p(&dir.path().join("t.md"))]);
    assert_eq!(o.status.code(), Some(1));
}

fn saved_model(dir: &Path) -> PathBuf {
    let path = dir.join("model.txt");
    LumpedModel::new(5, 4.0).unwrap().save(&path).unwrap();
    path
}

#[test]
fn predict_matches_library_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, "4");
    let model_path = saved_model(dir.path());
    let out = dir.path().join("pred.csv");
    let run_file = data.join("run01.csv");
    let o = run(&["predict", "--model", p(&model_path), "--run", p(&run_file), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,measured,predicted"));
    let predicted: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();

    let record = &load_runs(&run_file).unwrap()[0];
    let run = lumpfit::data_io::resample(record, 0.1).unwrap();
    let model = LumpedModel::load(&model_path).unwrap();
    let traj = model
        .simulate(&run.power_signal().unwrap(), run.initial_temperature(), run.grid(), &SolverConfig::fixed(5))
        .unwrap();
    assert_eq!(predicted, traj.scalar_states());
}

#[test]
fn predict_rejects_wrong_schema() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved_model(dir.path());
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,temp\n0,1\n1,2\n").unwrap();
    let o = run(&["predict", "--model", p(&model), "--run", p(&bad), "--out", p(&dir.path().join("o.csv"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn control_rejects_low_set_point_and_bounds_profile() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved_model(dir.path());
    let out = dir.path().join("ctl");
    let o = run(&["control", "--model", p(&model), "--tset", "23", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["control", "--model", p(&model), "--tset", "400", "--horizon", "20", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let profile = std::fs::read_to_string(out.join("profile.csv")).unwrap();
    let mut lines = profile.lines();
    assert_eq!(lines.next(), Some("t,power_W"));
    let powers: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(powers.len(), 21);
    assert!(powers.iter().all(|&v| v > 0.0 && v < 4000.0));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn surface_grid_and_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = saved_model(dir.path());
    let model = LumpedModel::load(&model_path).unwrap();
    let out = dir.path().join("s.csv");
    let o = run(&["surface", "--model", p(&model_path), "--res", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert_eq!(r[2], model.heat_input(r[0], r[1]));
    }
    assert_eq!((rows[5][0], rows[5][1]), (500.0, 4000.0));

    let o = run(&["surface", "--model", p(&model_path), "--res", "1", "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);

    let o = run(&["surface", "--model", p(&model_path), "--tmin", "10", "--tmax", "0", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_model_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["surface", "--model", p(&dir.path().join("none.txt")), "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(o.status.code(), Some(1));
}
