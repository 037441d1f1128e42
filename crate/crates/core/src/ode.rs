//! Initial-value-problem integration.
//!
//! Two integrators share one [`Trajectory`] type:
//!
//! * [`integrate_fixed`]: classical RK4 with a fixed number of substeps per
//!   grid interval. Every stage input is recorded so the exact step sequence
//!   can be replayed in reverse by the gradient engine.
//! * [`integrate_adaptive`]: Dormand-Prince 4(5) with PI step-size control,
//!   used for simulation and data generation.
//!
//! Off-knot values come from cubic Hermite interpolation between stored
//! knot values and derivatives.

use crate::error::{Error, Result};

/// Uniform time grid `t_start + j*dt`, `j = 0..n_points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    dt: f64,
    n_points: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !t_start.is_finite() || !t_end.is_finite() || !(t_end > t_start) {
            return Err(Error::InvalidGrid(format!(
                "need t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        let intervals = ((t_end - t_start) / dt * (1.0 + 1e-12) + 1e-9).floor() as usize;
        Ok(Self {
            t_start,
            t_end,
            dt,
            n_points: intervals + 1,
        })
    }

    /// Grid with `n_points` nodes spaced `dt` apart.
    pub fn with_points(t_start: f64, dt: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two points, got {n_points}"
            )));
        }
        Self::new(t_start, t_start + (n_points - 1) as f64 * dt, dt)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.time(j)).collect()
    }

    /// Time of the last node, which may fall short of `t_end` by less than `dt`.
    pub fn last_time(&self) -> f64 {
        self.time(self.n_points - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FixedRk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// RK4 steps per grid interval (fixed mode).
    pub substeps: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::FixedRk4,
            substeps: 5,
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn fixed(substeps: usize) -> Self {
        Self {
            method: Method::FixedRk4,
            substeps,
            ..Self::default()
        }
    }

    pub fn adaptive(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            method: Method::AdaptiveRk45,
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be >= 1".into()));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stage inputs of every RK4 step, in forward order.
///
/// Step `s` covers `[t0 + s*h, t0 + (s+1)*h]`; its four stage inputs are
/// stored contiguously, `dim` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub(crate) t0: f64,
    pub(crate) h: f64,
    pub(crate) substeps: usize,
    pub(crate) n_steps: usize,
    pub(crate) stage_inputs: Vec<f64>,
}

impl StageRecord {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Start time of step `s`.
    #[inline]
    pub fn step_time(&self, s: usize) -> f64 {
        self.t0 + s as f64 * self.h
    }

    #[inline]
    pub fn stage_input(&self, s: usize, stage: usize, dim: usize) -> &[f64] {
        let off = (s * 4 + stage) * dim;
        &self.stage_inputs[off..off + dim]
    }
}

/// Solution of an IVP: knot times, states and derivatives at the knots.
///
/// Fixed-step solutions have one knot per grid node and carry a
/// [`StageRecord`]; adaptive solutions have one knot per accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Option<TimeGrid>,
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    stages: Option<StageRecord>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Uniform grid the knots sit on, if any.
    pub fn grid(&self) -> Option<&TimeGrid> {
        self.grid.as_ref()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn derivative(&self, j: usize) -> &[f64] {
        &self.derivs[j * self.dim..(j + 1) * self.dim]
    }

    /// First component of every knot state.
    pub fn scalar_states(&self) -> Vec<f64> {
        self.states.iter().step_by(self.dim).copied().collect()
    }

    pub fn stage_record(&self) -> Option<&StageRecord> {
        self.stages.as_ref()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Values at the requested times. Knot times return stored states
    /// exactly; other times use cubic Hermite interpolation.
    pub fn sample_at(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times.iter().map(|&t| self.sample_one(t)).collect()
    }

    /// [`Trajectory::sample_at`] for scalar trajectories.
    pub fn sample_scalar(&self, times: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            out.push(self.sample_one(t)?[0]);
        }
        Ok(out)
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.t_start(), self.t_end());
        let slack = 1e-9 * (end - start).abs().max(1.0);
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::OutOfRange { t, start, end });
        }
        // index of the interval [times[i], times[i+1]] containing t
        let i = self.times.partition_point(|&k| k <= t);
        Ok(i.saturating_sub(1).min(self.times.len().saturating_sub(2)))
    }

    fn sample_one(&self, t: f64) -> Result<Vec<f64>> {
        let i = self.locate(t)?;
        if self.times.len() == 1 || t == self.times[i] {
            return Ok(self.state(i).to_vec());
        }
        if t == self.times[i + 1] {
            return Ok(self.state(i + 1).to_vec());
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = hermite_basis(s);
        let (x0, x1) = (self.state(i), self.state(i + 1));
        let (d0, d1) = (self.derivative(i), self.derivative(i + 1));
        Ok((0..self.dim)
            .map(|k| h00 * x0[k] + h10 * h * d0[k] + h01 * x1[k] + h11 * h * d1[k])
            .collect())
    }

    /// Resample onto a uniform grid, keeping interpolated derivatives.
    pub fn on_grid(&self, grid: &TimeGrid) -> Result<Trajectory> {
        let n = grid.n_points();
        let mut states = Vec::with_capacity(n * self.dim);
        let mut derivs = Vec::with_capacity(n * self.dim);
        for j in 0..n {
            let t = grid.time(j);
            let i = self.locate(t)?;
            if self.times.len() == 1 {
                states.extend_from_slice(self.state(0));
                derivs.extend_from_slice(self.derivative(0));
                continue;
            }
            let (t0, t1) = (self.times[i], self.times[i + 1]);
            let h = t1 - t0;
            let s = ((t - t0) / h).clamp(0.0, 1.0);
            if t == t0 {
                states.extend_from_slice(self.state(i));
                derivs.extend_from_slice(self.derivative(i));
                continue;
            }
            if t == t1 {
                states.extend_from_slice(self.state(i + 1));
                derivs.extend_from_slice(self.derivative(i + 1));
                continue;
            }
            let (h00, h10, h01, h11) = hermite_basis(s);
            let (g00, g10, g01, g11) = hermite_basis_deriv(s);
            let (x0, x1) = (self.state(i), self.state(i + 1));
            let (d0, d1) = (self.derivative(i), self.derivative(i + 1));
            for k in 0..self.dim {
                states.push(h00 * x0[k] + h10 * h * d0[k] + h01 * x1[k] + h11 * h * d1[k]);
                derivs.push((g00 * x0[k] + g01 * x1[k]) / h + g10 * d0[k] + g11 * d1[k]);
            }
        }
        Ok(Trajectory {
            grid: Some(*grid),
            dim: self.dim,
            times: grid.times(),
            states,
            derivs,
            stages: None,
        })
    }
}

#[inline]
fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

#[inline]
fn hermite_basis_deriv(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    (
        6.0 * s2 - 6.0 * s,
        3.0 * s2 - 4.0 * s + 1.0,
        -6.0 * s2 + 6.0 * s,
        3.0 * s2 - 2.0 * s,
    )
}

fn check_finite(t: f64, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Classical RK4 on `grid` with `config.substeps` steps per interval.
///
/// `rhs(t, x, dxdt)` writes the state derivative into `dxdt`.
pub fn integrate_fixed<F>(
    rhs: F,
    x0: &[f64],
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    config.validate()?;
    let dim = x0.len();
    check_finite(grid.t_start(), x0)?;
    let n = grid.n_points();
    let m = config.substeps;
    let h = grid.dt() / m as f64;
    let n_steps = (n - 1) * m;

    let mut states = Vec::with_capacity(n * dim);
    let mut derivs = Vec::with_capacity(n * dim);
    let mut stage_inputs = Vec::with_capacity(n_steps * 4 * dim);

    let mut x = x0.to_vec();
    let mut y = vec![0.0; dim];
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];

    states.extend_from_slice(&x);
    for s in 0..n_steps {
        let t = grid.t_start() + s as f64 * h;

        stage_inputs.extend_from_slice(&x);
        rhs(t, &x, &mut k1);
        check_finite(t, &k1)?;
        if s % m == 0 {
            derivs.extend_from_slice(&k1);
        }

        for k in 0..dim {
            y[k] = x[k] + 0.5 * h * k1[k];
        }
        stage_inputs.extend_from_slice(&y);
        rhs(t + 0.5 * h, &y, &mut k2);
        check_finite(t + 0.5 * h, &k2)?;

        for k in 0..dim {
            y[k] = x[k] + 0.5 * h * k2[k];
        }
        stage_inputs.extend_from_slice(&y);
        rhs(t + 0.5 * h, &y, &mut k3);
        check_finite(t + 0.5 * h, &k3)?;

        for k in 0..dim {
            y[k] = x[k] + h * k3[k];
        }
        stage_inputs.extend_from_slice(&y);
        rhs(t + h, &y, &mut k4);
        check_finite(t + h, &k4)?;

        for k in 0..dim {
            x[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        check_finite(t + h, &x)?;
        if (s + 1) % m == 0 {
            states.extend_from_slice(&x);
        }
    }
    let t_last = grid.last_time();
    rhs(t_last, &x, &mut k1);
    check_finite(t_last, &k1)?;
    derivs.extend_from_slice(&k1);

    Ok(Trajectory {
        grid: Some(*grid),
        dim,
        times: grid.times(),
        states,
        derivs,
        stages: Some(StageRecord {
            t0: grid.t_start(),
            h,
            substeps: m,
            n_steps,
            stage_inputs,
        }),
    })
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// error weights: 5th-order minus embedded 4th-order
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

/// Dormand-Prince 4(5) over `[t_start, t_end]`; knots are the accepted steps.
pub fn integrate_adaptive<F>(
    rhs: F,
    x0: &[f64],
    t_start: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    integrate_adaptive_through(rhs, x0, &[t_start, t_end], config)
}

/// Dormand-Prince 4(5) that lands exactly on every time in `stops`
/// (strictly increasing, at least two entries). Useful when the right-hand
/// side has kinks at known times or when outputs are needed on a grid.
pub fn integrate_adaptive_through<F>(
    rhs: F,
    x0: &[f64],
    stops: &[f64],
    config: &SolverConfig,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    config.validate()?;
    if stops.len() < 2 || stops.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid(
            "stop times must be strictly increasing with at least two entries".into(),
        ));
    }
    let dim = x0.len();
    let t_start = stops[0];
    let t_end = stops[stops.len() - 1];
    check_finite(t_start, x0)?;

    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; dim];
    rhs(t_start, &x, &mut k1);
    check_finite(t_start, &k1)?;

    let mut times = vec![t_start];
    let mut states = x.clone();
    let mut derivs = k1.clone();

    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    let mut x_new = vec![0.0; dim];

    let mut h = initial_step(&x, &k1, t_end - t_start, config);
    let mut err_prev: f64 = 1e-4;
    let mut t = t_start;
    let mut next_stop = 1;
    let mut steps = 0usize;
    let mut rejected_last = false;

    while next_stop < stops.len() {
        if steps >= config.max_steps {
            return Err(Error::StepLimitExceeded {
                max_steps: config.max_steps,
                t_end,
            });
        }
        steps += 1;

        let stop = stops[next_stop];
        let remaining = stop - t;
        let h_proposed = h;
        let mut hits_stop = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            hits_stop = true;
        }

        for k in 0..dim {
            y[k] = x[k] + h * A21 * k1[k];
        }
        rhs(t + C2 * h, &y, &mut k2);
        for k in 0..dim {
            y[k] = x[k] + h * (A31 * k1[k] + A32 * k2[k]);
        }
        rhs(t + C3 * h, &y, &mut k3);
        for k in 0..dim {
            y[k] = x[k] + h * (A41 * k1[k] + A42 * k2[k] + A43 * k3[k]);
        }
        rhs(t + C4 * h, &y, &mut k4);
        for k in 0..dim {
            y[k] = x[k] + h * (A51 * k1[k] + A52 * k2[k] + A53 * k3[k] + A54 * k4[k]);
        }
        rhs(t + C5 * h, &y, &mut k5);
        for k in 0..dim {
            y[k] = x[k]
                + h * (A61 * k1[k] + A62 * k2[k] + A63 * k3[k] + A64 * k4[k] + A65 * k5[k]);
        }
        let t_new = if hits_stop { stop } else { t + h };
        rhs(t_new, &y, &mut k6);
        for k in 0..dim {
            x_new[k] =
                x[k] + h * (B1 * k1[k] + B3 * k3[k] + B4 * k4[k] + B5 * k5[k] + B6 * k6[k]);
        }
        rhs(t_new, &x_new, &mut k7);

        let finite = [&k2, &k3, &k4, &k5, &k6, &k7, &x_new]
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()));

        let err = if finite {
            let mut acc = 0.0;
            for k in 0..dim {
                let e = h
                    * (E1 * k1[k]
                        + E3 * k3[k]
                        + E4 * k4[k]
                        + E5 * k5[k]
                        + E6 * k6[k]
                        + E7 * k7[k]);
                let sc = config.abs_tol + config.rel_tol * x[k].abs().max(x_new[k].abs());
                acc += (e / sc).powi(2);
            }
            (acc / dim.max(1) as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)).clamp(FAC_MIN, FAC_MAX)
            };
            let fac = if rejected_last { fac.min(1.0) } else { fac };
            err_prev = err.max(1e-4);
            t = t_new;
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut k1, &mut k7);
            times.push(t);
            states.extend_from_slice(&x);
            derivs.extend_from_slice(&k1);
            if hits_stop {
                next_stop += 1;
                // a truncated step says nothing about the next step size
                h = h_proposed.max(h * fac);
            } else {
                h *= fac;
            }
            rejected_last = false;
        } else {
            if !finite && h < 1e-14 * (t_end - t_start).abs().max(1.0) {
                return Err(Error::NonFiniteState { t });
            }
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-PI_ALPHA)).clamp(FAC_MIN, 1.0)
            } else {
                FAC_MIN
            };
            h *= fac;
            rejected_last = true;
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::NonFiniteState { t });
        }
    }

    Ok(Trajectory {
        grid: None,
        dim,
        times,
        states,
        derivs,
        stages: None,
    })
}

fn initial_step(x: &[f64], f: &[f64], span: f64, config: &SolverConfig) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for (xi, fi) in x.iter().zip(f) {
        let sc = config.abs_tol + config.rel_tol * xi.abs();
        d0 = d0.max((xi / sc).abs());
        d1 = d1.max((fi / sc).abs());
    }
    if d1 == 0.0 {
        return span;
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span)
}
