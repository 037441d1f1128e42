//! Neural lumped-parameter thermal model
//!
//! `C dT/dt = Q0 * NN(T/T0, P/P0) - h (T - T_sink)`, with the capacitance
//! stored as `log C` so it stays positive. Trainable parameters are the
//! heat-input network followed by `log C`; `h`, `T_sink` and the scales are
//! fixed.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::ode::{self, Method, SolverConfig, TimeGrid, Trajectory};

pub const DEFAULT_H: f64 = 1.0;
pub const DEFAULT_T_SINK: f64 = 23.0;
pub const DEFAULT_T0: f64 = 1000.0;
pub const DEFAULT_P0: f64 = 4000.0;
pub const DEFAULT_Q0: f64 = DEFAULT_P0;
pub const HEAT_NET_DIMS: [usize; 3] = [2, 10, 1];

/// Piecewise-linear signal, held constant outside its time span.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSignal {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PowerSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "power signal needs matching nonempty times/values ({} vs {})",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "power signal times must be strictly increasing".into(),
            ));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("power signal must be finite".into()));
        }
        Ok(Self { times, values })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&k| k <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// True when every value lies in `[0, p_max]`.
    pub fn within(&self, p_max: f64) -> bool {
        self.values.iter().all(|&v| (0.0..=p_max).contains(&v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LumpedModel {
    pub heat_net: Mlp,
    pub log_capacitance: f64,
    pub h: f64,
    pub t_sink: f64,
    pub t0: f64,
    pub p0: f64,
}

/// One cell of a heat-input surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub temperature: f64,
    pub power: f64,
    pub heat: f64,
}

impl LumpedModel {
    /// Default architecture and constants with a Glorot-initialized network.
    pub fn new(seed: u64, capacitance: f64) -> Result<Self> {
        let net = Mlp::init_glorot(&HEAT_NET_DIMS, DEFAULT_Q0, seed)?;
        Self::from_parts(net, capacitance.ln(), DEFAULT_H, DEFAULT_T_SINK, DEFAULT_T0, DEFAULT_P0)
    }

    pub fn from_parts(
        heat_net: Mlp,
        log_capacitance: f64,
        h: f64,
        t_sink: f64,
        t0: f64,
        p0: f64,
    ) -> Result<Self> {
        if heat_net.n_inputs() != 2 {
            return Err(Error::InvalidParameter(
                "heat-input network must take (T, P)".into(),
            ));
        }
        if !log_capacitance.is_finite() {
            return Err(Error::InvalidParameter("log capacitance must be finite".into()));
        }
        for (name, v) in [("h", h), ("T0", t0), ("P0", p0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !t_sink.is_finite() {
            return Err(Error::InvalidParameter("T_sink must be finite".into()));
        }
        Ok(Self {
            heat_net,
            log_capacitance,
            h,
            t_sink,
            t0,
            p0,
        })
    }

    pub fn capacitance(&self) -> f64 {
        self.log_capacitance.exp()
    }

    pub fn q0(&self) -> f64 {
        self.heat_net.output_scale()
    }

    /// Upper temperature bound for trajectories started below it.
    pub fn ceiling(&self) -> f64 {
        self.t_sink + self.q0() / self.h
    }

    /// Number of trainable parameters: network weights and biases, then `log C`.
    pub fn n_trainable(&self) -> usize {
        self.heat_net.n_params() + 1
    }

    pub fn trainable(&self) -> Vec<f64> {
        let mut v = self.heat_net.params().to_vec();
        v.push(self.log_capacitance);
        v
    }

    pub fn set_trainable(&mut self, values: &[f64]) -> Result<()> {
        let n = self.heat_net.n_params();
        if values.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: values.len(),
            });
        }
        self.heat_net.set_params(&values[..n])?;
        self.log_capacitance = values[n];
        Ok(())
    }

    pub fn with_trainable(&self, values: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_trainable(values)?;
        Ok(m)
    }

    /// Internal heat generation `Q0 * NN(T/T0, P/P0)`, in `(0, Q0)`.
    pub fn heat_input(&self, temperature: f64, power: f64) -> f64 {
        self.heat_net
            .forward_unchecked(&[temperature / self.t0, power / self.p0])
    }

    pub fn heat_loss(&self, temperature: f64) -> f64 {
        self.h * (temperature - self.t_sink)
    }

    /// `dT/dt` at temperature `T` and instantaneous power `P`.
    pub fn rate(&self, temperature: f64, power: f64) -> f64 {
        (self.heat_input(temperature, power) - self.heat_loss(temperature)) / self.capacitance()
    }

    pub fn rhs(&self, temperature: f64, t: f64, power: &PowerSignal) -> f64 {
        self.rate(temperature, power.at(t))
    }

    pub fn simulate(
        &self,
        power: &PowerSignal,
        t_init: f64,
        grid: &TimeGrid,
        config: &SolverConfig,
    ) -> Result<Trajectory> {
        simulate_with(|t| power.at(t), self, t_init, grid, config)
    }

    /// Heat input over a temperature × power grid, temperature outer.
    pub fn heat_surface(
        &self,
        t_range: (f64, f64),
        p_range: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Vec<SurfacePoint>> {
        let ts = linspace(t_range, resolution.0)?;
        let ps = linspace(p_range, resolution.1)?;
        let mut out = Vec::with_capacity(ts.len() * ps.len());
        for &temperature in &ts {
            for &power in &ps {
                out.push(SurfacePoint {
                    temperature,
                    power,
                    heat: self.heat_input(temperature, power),
                });
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.heat_net.to_text();
        let _ = writeln!(out, "log_capacitance={:?}", self.log_capacitance);
        let _ = writeln!(out, "h={:?}", self.h);
        let _ = writeln!(out, "t_sink={:?}", self.t_sink);
        let _ = writeln!(out, "t0={:?}", self.t0);
        let _ = writeln!(out, "p0={:?}", self.p0);
        let _ = writeln!(out, "q0={:?}", self.q0());
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines();
        let mut line_no = 0;
        let net = Mlp::from_lines(&mut lines, &mut line_no).map_err(|(l, r)| err(l, r))?;
        let mut fields = std::collections::HashMap::new();
        for line in lines {
            line_no += 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key=value, got `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| err(line_no, format!("{}: {e}", k.trim())))?;
            fields.insert(k.trim().to_string(), (v, line_no));
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(|&(v, _)| v)
                .ok_or_else(|| err(line_no, format!("missing `{k}`")))
        };
        let q0 = get("q0")?;
        if q0 != net.output_scale() {
            return Err(err(
                fields["q0"].1,
                format!("q0 = {q0} disagrees with network output scale {}", net.output_scale()),
            ));
        }
        Self::from_parts(
            net,
            get("log_capacitance")?,
            get("h")?,
            get("t_sink")?,
            get("t0")?,
            get("p0")?,
        )
        .map_err(|e| err(line_no, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data_io::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Simulates the model under an arbitrary power law `power(t)`.
pub fn simulate_with<P>(
    power: P,
    model: &LumpedModel,
    t_init: f64,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<Trajectory>
where
    P: Fn(f64) -> f64,
{
    let rhs = |t: f64, x: &[f64], dx: &mut [f64]| {
        dx[0] = model.rate(x[0], power(t));
    };
    match config.method {
        Method::FixedRk4 => ode::integrate_fixed(rhs, &[t_init], grid, config),
        Method::AdaptiveRk45 => {
            ode::integrate_adaptive_through(rhs, &[t_init], &grid.times(), config)?.on_grid(grid)
        }
    }
}

fn linspace(range: (f64, f64), n: usize) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if n == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::InvalidParameter(format!(
            "empty range [{lo}, {hi}] with {n} points"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
        .collect())
}
