//! Run CSV ingestion, resampling onto uniform grids, and CSV exports.
//!
//! Run files carry the header `t,temperature,power` (seconds, °C, W).
//! Files holding several runs prefix a `run_id` column. All numbers are
//! written with shortest round-trip precision.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::SurfacePoint;
use crate::ode::TimeGrid;
use crate::training::ExperimentRun;

pub const RUN_HEADER: &str = "t,temperature,power";
pub const MULTI_RUN_HEADER: &str = "run_id,t,temperature,power";

/// Raw, possibly non-uniform samples of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub powers: Vec<f64>,
}

impl RawRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn from_run(run: &ExperimentRun) -> Self {
        Self {
            id: run.id().to_string(),
            times: run.times(),
            temperatures: run.temperatures().to_vec(),
            powers: run.powers().to_vec(),
        }
    }
}

fn parse_field(s: &str, path: &Path, line: usize, name: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: format!("{name} `{}` is not a number", s.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{name} is not finite"),
        });
    }
    Ok(v)
}

/// Parses one CSV document. Single-run files take their id from `default_id`.
pub fn parse_runs(text: &str, path: &Path, default_id: &str) -> Result<Vec<RawRecord>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l.trim().replace(' ', "")),
            None => {
                return Err(Error::EmptyRun {
                    path: path.to_path_buf(),
                    run: default_id.to_string(),
                })
            }
        }
    };
    let multi = match header.1.as_str() {
        RUN_HEADER => false,
        MULTI_RUN_HEADER => true,
        other => {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: header.0,
                reason: format!("expected header `{RUN_HEADER}` or `{MULTI_RUN_HEADER}`, got `{other}`"),
            })
        }
    };
    let width = if multi { 4 } else { 3 };

    let mut records: Vec<RawRecord> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != width {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("expected {width} fields, got {}", fields.len()),
            });
        }
        let (id, rest) = if multi {
            (fields[0].trim().to_string(), &fields[1..])
        } else {
            (default_id.to_string(), &fields[..])
        };
        if id.is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: "empty run_id".into(),
            });
        }
        let t = parse_field(rest[0], path, line, "t")?;
        let temp = parse_field(rest[1], path, line, "temperature")?;
        let power = parse_field(rest[2], path, line, "power")?;

        let rec = match records.iter_mut().position(|r| r.id == id) {
            Some(k) => &mut records[k],
            None => {
                records.push(RawRecord {
                    id,
                    times: Vec::new(),
                    temperatures: Vec::new(),
                    powers: Vec::new(),
                });
                records.last_mut().expect("just pushed")
            }
        };
        if let Some(&prev) = rec.times.last() {
            if !(t > prev) {
                return Err(Error::NonMonotoneTime {
                    path: path.to_path_buf(),
                    line,
                });
            }
        }
        rec.times.push(t);
        rec.temperatures.push(temp);
        rec.powers.push(power);
    }
    if records.is_empty() {
        return Err(Error::EmptyRun {
            path: path.to_path_buf(),
            run: default_id.to_string(),
        });
    }
    for r in &records {
        if r.len() < 2 {
            return Err(Error::EmptyRun {
                path: path.to_path_buf(),
                run: r.id.clone(),
            });
        }
    }
    Ok(records)
}

/// Loads a run CSV, or every `*.csv` in a directory (sorted by name).
pub fn load_runs(path: &Path) -> Result<Vec<RawRecord>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let stem = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        out.extend(parse_runs(&text, &f, &stem)?);
    }
    Ok(out)
}

/// Linear interpolation onto `t0 + k*dt`, `t0` the first timestamp.
pub fn resample(record: &RawRecord, dt: f64) -> Result<ExperimentRun> {
    let n = record.len();
    let span = if n >= 2 { record.times[n - 1] - record.times[0] } else { 0.0 };
    if !(dt > 0.0) || span < dt * (1.0 - 1e-12) {
        return Err(Error::SpanTooShort { span, dt });
    }
    let grid = TimeGrid::new(record.times[0], record.times[n - 1], dt)?;
    let mut temps = Vec::with_capacity(grid.n_points());
    let mut powers = Vec::with_capacity(grid.n_points());
    for k in 0..grid.n_points() {
        let t = grid.time(k);
        let i = record.times.partition_point(|&s| s <= t);
        if i == 0 {
            temps.push(record.temperatures[0]);
            powers.push(record.powers[0]);
        } else if i >= n || record.times[i - 1] == t {
            let j = (i - 1).min(n - 1);
            temps.push(record.temperatures[j]);
            powers.push(record.powers[j]);
        } else {
            let (t0, t1) = (record.times[i - 1], record.times[i]);
            let w = (t - t0) / (t1 - t0);
            temps.push(record.temperatures[i - 1] + w * (record.temperatures[i] - record.temperatures[i - 1]));
            powers.push(record.powers[i - 1] + w * (record.powers[i] - record.powers[i - 1]));
        }
    }
    ExperimentRun::new(record.id.clone(), grid, temps, powers)
}

pub fn record_csv(record: &RawRecord) -> String {
    let mut out = String::from(RUN_HEADER);
    out.push('\n');
    for i in 0..record.len() {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?}",
            record.times[i], record.temperatures[i], record.powers[i]
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_record(path: &Path, record: &RawRecord) -> Result<()> {
    write_text(path, &record_csv(record))
}

/// Two-column CSV with the given header names.
pub fn series_csv(header: (&str, &str), xs: &[f64], ys: &[f64]) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (x, y) in xs.iter().zip(ys) {
        let _ = writeln!(out, "{x:?},{y:?}");
    }
    out
}

/// `temperature_C,power_W,heat_W`, temperature outer loop.
pub fn surface_csv(points: &[SurfacePoint]) -> String {
    let mut out = String::from("temperature_C,power_W,heat_W\n");
    for p in points {
        let _ = writeln!(out, "{:?},{:?},{:?}", p.temperature, p.power, p.heat);
    }
    out
}

/// `t,measured,predicted`.
pub fn prediction_csv(times: &[f64], measured: &[f64], predicted: &[f64]) -> String {
    let mut out = String::from("t,measured,predicted\n");
    for i in 0..times.len() {
        let _ = writeln!(out, "{:?},{:?},{:?}", times[i], measured[i], predicted[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<RawRecord>> {
        parse_runs(text, Path::new("f.csv"), "f")
    }

    #[test]
    fn two_row_file() {
        let recs = parse("t,temperature,power\n0,23,0\n0.1,23.5,100\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].times, vec![0.0, 0.1]);
        assert_eq!(recs[0].temperatures, vec![23.0, 23.5]);
        assert_eq!(recs[0].powers, vec![0.0, 100.0]);
        assert_eq!(recs[0].id, "f");
    }

    #[test]
    fn multi_run_file() {
        let recs = parse("run_id,t,temperature,power\na,0,1,2\nb,0,5,6\na,1,3,4\nb,1,7,8\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[1].temperatures, vec![5.0, 7.0]);
    }

    #[test]
    fn error_diagnostics() {
        let cases: [(&str, usize); 5] = [
            ("t,temperature,power\n0,23,0\n1,x,0\n", 3),
            ("t,temperature,power\n0,23,0\n1,24\n", 3),
            ("t,temperature,power\n0,23,0\n1,24,inf\n", 3),
            ("time,temp,power\n0,23,0\n", 1),
            ("t,temperature,power\n0,23,0\n1,24,0\n2,25,0,9\n", 4),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(Error::MalformedRow { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            parse("t,temperature,power\n0,23,0\n1,24,0\n0.5,25,0\n"),
            Err(Error::NonMonotoneTime { line: 4, .. })
        ));
        assert!(matches!(
            parse("t,temperature,power\n1,23,0\n1,24,0\n"),
            Err(Error::NonMonotoneTime { line: 3, .. })
        ));
        assert!(matches!(parse("t,temperature,power\n0,23,0\n"), Err(Error::EmptyRun { .. })));
        assert!(matches!(parse("t,temperature,power\n"), Err(Error::EmptyRun { .. })));
        assert!(matches!(parse(""), Err(Error::EmptyRun { .. })));
    }

    #[test]
    fn resample_uniform_is_identity() {
        let grid = TimeGrid::new(0.0, 5.0, 0.5).unwrap();
        let rec = RawRecord {
            id: "r".into(),
            times: grid.times(),
            temperatures: (0..11).map(|k| (k as f64).sin() * 50.0 + 300.0).collect(),
            powers: (0..11).map(|k| k as f64 * 7.0).collect(),
        };
        let run = resample(&rec, 0.5).unwrap();
        assert_eq!(run.temperatures(), rec.temperatures.as_slice());
        assert_eq!(run.powers(), rec.powers.as_slice());
    }

    #[test]
    fn resample_linear_ramp_exact() {
        let times: Vec<f64> = vec![0.0, 0.3, 1.1, 1.7, 2.9, 4.0];
        let rec = RawRecord {
            id: "r".into(),
            temperatures: times.iter().map(|t| 20.0 + 3.0 * t).collect(),
            powers: times.iter().map(|t| 100.0 * t).collect(),
            times,
        };
        for dt in [0.25, 0.5, 1.0, 1.3] {
            let run = resample(&rec, dt).unwrap();
            for (t, v) in run.times().iter().zip(run.temperatures()) {
                assert!((v - (20.0 + 3.0 * t)).abs() < 1e-12);
            }
            assert_eq!(run.temperatures()[0], 20.0);
        }
        let run = resample(&rec, 1.0).unwrap();
        assert_eq!(*run.temperatures().last().unwrap(), 32.0);
        assert!(matches!(resample(&rec, 5.0), Err(Error::SpanTooShort { .. })));
    }

    #[test]
    fn round_trip_exact() {
        let rec = RawRecord {
            id: "r".into(),
            times: vec![0.0, 0.1, 0.2 + 1e-13],
            temperatures: vec![23.000000000000004, 1.0 / 3.0, 1e-7],
            powers: vec![0.0, 1234.5678901234567, 4000.0],
        };
        let back = parse_runs(&record_csv(&rec), Path::new("r.csv"), "r").unwrap();
        assert_eq!(back, vec![rec]);
    }
}
