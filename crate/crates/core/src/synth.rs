//! Synthetic ground truth: plunge/dwell-like runs from a known lumped model
//! with heat law `Q(T, P) = eta * P * (1 - beta * T / T_ref)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::PowerSignal;
use crate::ode::{self, SolverConfig, TimeGrid};
use crate::training::ExperimentRun;

/// `T_ss + (T_init - T_ss) exp(-(h/C) t)` with `T_ss = T_sink + Q/h`.
pub fn closed_form_linear(t_init: f64, q_const: f64, c: f64, h: f64, t_sink: f64, t: f64) -> f64 {
    let t_ss = t_sink + q_const / h;
    t_ss + (t_init - t_ss) * (-(h / c) * t).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSpec {
    pub c_true: f64,
    pub h: f64,
    pub t_sink: f64,
    pub eta: f64,
    pub beta: f64,
    pub t_ref: f64,
    pub noise_sigma: f64,
    pub ramp_min: f64,
    pub ramp_max: f64,
    pub hold_min: f64,
    pub hold_max: f64,
    pub duration_min: f64,
    pub duration_max: f64,
    pub seed: u64,
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        Self {
            c_true: 4.0,
            h: 1.0,
            t_sink: 23.0,
            eta: 0.8,
            beta: 0.3,
            t_ref: 1000.0,
            noise_sigma: 2.0,
            ramp_min: 10.0,
            ramp_max: 60.0,
            hold_min: 2000.0,
            hold_max: 3800.0,
            duration_min: 200.0,
            duration_max: 400.0,
            seed: 1,
        }
    }
}

/// Hold powers above this keep the steady state under 900 °C.
pub const STEADY_STATE_CAP: f64 = 900.0;

impl GroundTruthSpec {
    pub fn q_true(&self, temperature: f64, power: f64) -> f64 {
        self.eta * power * (1.0 - self.beta * temperature / self.t_ref)
    }

    pub fn rate(&self, temperature: f64, power: f64) -> f64 {
        (self.q_true(temperature, power) - self.h * (temperature - self.t_sink)) / self.c_true
    }

    /// Steady-state temperature under constant power (the heat law is
    /// linear in `T`, so this is closed form).
    pub fn steady_state(&self, power: f64) -> f64 {
        (self.eta * power + self.h * self.t_sink) / (self.h + self.eta * power * self.beta / self.t_ref)
    }

    /// Largest hold power whose steady state stays at or below `t_max`.
    pub fn max_hold_for(&self, t_max: f64) -> f64 {
        // eta P (1 - beta t/T_ref) = h (t - T_sink)
        self.h * (t_max - self.t_sink) / (self.eta * (1.0 - self.beta * t_max / self.t_ref))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_true", self.c_true),
            ("h", self.h),
            ("eta", self.eta),
            ("t_ref", self.t_ref),
            ("ramp_min", self.ramp_min),
            ("duration_min", self.duration_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be >= 0".into()));
        }
        if self.beta < 0.0 || self.eta > 1.0 {
            return Err(Error::InvalidParameter("need beta >= 0 and eta <= 1".into()));
        }
        for (name, lo, hi) in [
            ("ramp", self.ramp_min, self.ramp_max),
            ("hold", self.hold_min, self.hold_max),
            ("duration", self.duration_min, self.duration_max),
        ] {
            if !(hi >= lo) {
                return Err(Error::InvalidParameter(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if self.ramp_max >= self.duration_min {
            return Err(Error::InvalidParameter("ramps must end before the shortest run".into()));
        }
        if !(self.hold_min >= 0.0) {
            return Err(Error::InvalidParameter("hold power must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    fn fields(&self) -> [(&'static str, f64); 13] {
        [
            ("c_true", self.c_true),
            ("h", self.h),
            ("t_sink", self.t_sink),
            ("eta", self.eta),
            ("beta", self.beta),
            ("t_ref", self.t_ref),
            ("noise_sigma", self.noise_sigma),
            ("ramp_min", self.ramp_min),
            ("ramp_max", self.ramp_max),
            ("hold_min", self.hold_min),
            ("hold_max", self.hold_max),
            ("duration_min", self.duration_min),
            ("duration_max", self.duration_max),
        ]
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut spec = Self::default();
        for entry in kv.entries() {
            let v = || kv.float(entry);
            match entry.key.as_str() {
                "c_true" => spec.c_true = v()?,
                "h" => spec.h = v()?,
                "t_sink" => spec.t_sink = v()?,
                "eta" => spec.eta = v()?,
                "beta" => spec.beta = v()?,
                "t_ref" => spec.t_ref = v()?,
                "noise_sigma" => spec.noise_sigma = v()?,
                "ramp_min" => spec.ramp_min = v()?,
                "ramp_max" => spec.ramp_max = v()?,
                "hold_min" => spec.hold_min = v()?,
                "hold_max" => spec.hold_max = v()?,
                "duration_min" => spec.duration_min = v()?,
                "duration_max" => spec.duration_max = v()?,
                "seed" => spec.seed = kv.uint(entry)?,
                _ => return Err(kv.unknown(entry)),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Power profile of one synthetic run: linear ramp from zero, then hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunDesign {
    pub ramp: f64,
    pub hold: f64,
    pub duration: f64,
}

impl RunDesign {
    pub fn power_signal(&self) -> PowerSignal {
        PowerSignal::new(vec![0.0, self.ramp, self.duration], vec![0.0, self.hold, self.hold])
            .expect("ramp < duration")
    }
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + run as u64);
    rng
}

/// Draws the design of run `index`; holds are capped so the steady state
/// stays below [`STEADY_STATE_CAP`].
pub fn run_design(spec: &GroundTruthSpec, seed: u64, index: usize) -> RunDesign {
    let mut rng = run_rng(seed, index);
    let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let ramp = draw(spec.ramp_min, spec.ramp_max);
    let hold = draw(spec.hold_min, spec.hold_max).min(spec.max_hold_for(STEADY_STATE_CAP));
    let duration = draw(spec.duration_min, spec.duration_max);
    // whole-second durations keep every grid aligned with the record end
    RunDesign {
        ramp,
        hold,
        duration: duration.round(),
    }
}

/// `n_runs` records sampled every `dt` seconds, temperatures perturbed by
/// i.i.d. Gaussian noise, powers noise-free. Deterministic in `seed`.
pub fn generate_ensemble(spec: &GroundTruthSpec, n_runs: usize, dt: f64, seed: u64) -> Result<Vec<ExperimentRun>> {
    spec.validate()?;
    (0..n_runs)
        .map(|i| {
            let design = run_design(spec, seed, i);
            generate_run(spec, &design, dt, seed, i)
        })
        .collect()
}

/// One run of the ensemble with a given design.
pub fn generate_run(spec: &GroundTruthSpec, design: &RunDesign, dt: f64, seed: u64, index: usize) -> Result<ExperimentRun> {
    let grid = TimeGrid::new(0.0, design.duration, dt)?;
    let power = design.power_signal();
    let solver = SolverConfig::adaptive(1e-10, 1e-10);
    let mut stops = grid.times();
    // land on the ramp corner so the kink never sits inside a step
    if !stops.contains(&design.ramp) {
        stops.push(design.ramp);
        stops.sort_by(f64::total_cmp);
    }
    let traj = ode::integrate_adaptive_through(
        |t, x, dx| dx[0] = spec.rate(x[0], power.at(t)),
        &[spec.t_sink],
        &stops,
        &solver,
    )?
    .on_grid(&grid)?;
    let mut temps = traj.scalar_states();
    if spec.noise_sigma > 0.0 {
        let mut rng = run_rng(seed, index);
        rng.set_word_pos(1 << 20);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for t in temps.iter_mut() {
            *t += normal.sample(&mut rng);
        }
    }
    let powers = grid.times().iter().map(|&t| power.at(t)).collect();
    ExperimentRun::new(format!("run{:02}", index + 1), grid, temps, powers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_limits() {
        assert_eq!(closed_form_linear(23.0, 677.0, 4.0, 1.0, 23.0, 0.0), 23.0);
        assert!((closed_form_linear(23.0, 677.0, 4.0, 1.0, 23.0, 1e4) - 700.0).abs() < 1e-9);
        let one_tau = closed_form_linear(23.0, 677.0, 4.0, 1.0, 23.0, 4.0);
        assert!((one_tau - (700.0 - 677.0 * (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn steady_states() {
        let s = GroundTruthSpec::default();
        // (0.8*3000 + 23) / (1 + 0.8*3000*0.3/1000) = 2423 / 1.72
        assert!((s.steady_state(3000.0) - 2423.0 / 1.72).abs() < 1e-9);
        assert!((s.steady_state(3000.0) - 1408.7).abs() < 0.05);
        // 1143 / 1.336
        assert!((s.steady_state(1400.0) - 855.5).abs() < 0.05);
        let cap = s.max_hold_for(900.0);
        assert!((s.steady_state(cap) - 900.0).abs() < 1e-9);
        assert!((s.rate(s.steady_state(1400.0), 1400.0)).abs() < 1e-12);
    }

    #[test]
    fn q_true_inside_model_band() {
        let s = GroundTruthSpec::default();
        for p in [0.0, 500.0, 1500.0, 4000.0] {
            for t in [0.0, 500.0, 900.0, 3000.0] {
                let q = s.q_true(t, p);
                assert!(q >= 0.0 && q <= p && q < 4000.0);
            }
        }
    }

    #[test]
    fn ensemble_is_deterministic() {
        let s = GroundTruthSpec::default();
        let a = generate_ensemble(&s, 3, 0.1, 9).unwrap();
        let b = generate_ensemble(&s, 3, 0.1, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_ensemble(&s, 3, 0.1, 10).unwrap();
        assert_ne!(a, c);
        for r in &a {
            assert!(r.powers().iter().all(|&p| p <= s.max_hold_for(STEADY_STATE_CAP) + 1e-9));
        }
    }

    #[test]
    fn noise_free_constant_power_satisfies_ode() {
        let s = GroundTruthSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let design = RunDesign { ramp: 1e-3, hold: 1200.0, duration: 60.0 };
        let run = generate_run(&s, &design, 0.1, 0, 0).unwrap();
        let temps = run.temperatures();
        let dt = 0.1;
        for k in 1..temps.len() - 1 {
            let t = k as f64 * dt;
            if t < 0.2 {
                continue;
            }
            let fd = (temps[k + 1] - temps[k - 1]) / (2.0 * dt);
            let rhs = s.rate(temps[k], 1200.0);
            assert!((fd - rhs).abs() < 0.5, "t={t} fd={fd} rhs={rhs}");
        }
        assert!((temps[temps.len() - 1] - s.steady_state(1200.0)).abs() < 1e-3);
    }

    #[test]
    fn temperatures_below_ceiling() {
        let s = GroundTruthSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        for run in generate_ensemble(&s, 7, 0.1, 1).unwrap() {
            let p_max = run.powers().iter().cloned().fold(0.0, f64::max);
            let ceiling = s.t_sink + s.q_true(0.0, p_max) / s.h;
            assert!(run.temperatures().iter().all(|&t| t < ceiling));
        }
    }

    #[test]
    fn spec_text_round_trip() {
        let s = GroundTruthSpec {
            seed: 17,
            noise_sigma: 1.5,
            ..Default::default()
        };
        let kv = KeyValues::parse(&s.to_text(), "spec").unwrap();
        assert_eq!(GroundTruthSpec::from_key_values(&kv).unwrap(), s);
        let kv = KeyValues::parse("bogus = 1\n", "spec").unwrap();
        assert!(GroundTruthSpec::from_key_values(&kv).is_err());
    }
}
