//! Exact gradients through the fixed-step RK4 solve.
//!
//! The forward pass records every stage input; the reverse sweep walks the
//! steps backwards and applies the transposed RK4 update, pulling stage
//! cotangents through the right-hand side with [`DifferentiableRhs::vjp`].
//! The result is the derivative of the discretized loss itself, so it
//! agrees with finite differences of the same discretization up to FD
//! truncation error.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{LumpedModel, PowerSignal};
use crate::nn::Mlp;
use crate::ode::{self, SolverConfig, TimeGrid, Trajectory};
use crate::training::ExperimentRun;

/// A right-hand side `f(t, x; p)` with a vector-Jacobian product.
pub trait DifferentiableRhs: Sync {
    fn n_params(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]);

    /// Adds `vᵀ ∂f/∂x` into `x_bar` and `vᵀ ∂f/∂p` into `p_bar`.
    fn vjp(&self, t: f64, x: &[f64], v: &[f64], x_bar: &mut [f64], p_bar: &mut [f64]);
}

/// Flat gradient in a model's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_finite(self) -> Result<Self> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFiniteGradient { index }),
            None => Ok(self),
        }
    }
}

/// Reverse-sweep state for one trajectory.
pub struct AdjointWorkspace {
    dim: usize,
    adj: Vec<f64>,
    k_bar: [Vec<f64>; 4],
    y_bar: Vec<f64>,
    p_bar: Vec<f64>,
}

impl AdjointWorkspace {
    pub fn new(dim: usize, n_params: usize) -> Self {
        Self {
            dim,
            adj: vec![0.0; dim],
            k_bar: std::array::from_fn(|_| vec![0.0; dim]),
            y_bar: vec![0.0; dim],
            p_bar: vec![0.0; n_params],
        }
    }

    /// Pulls `node_seeds` (`∂L/∂x_j` at every grid node, flattened) back
    /// through the recorded RK4 steps.
    ///
    /// Returns `(∂L/∂p, ∂L/∂x0)`.
    pub fn sweep<R: DifferentiableRhs>(
        mut self,
        rhs: &R,
        traj: &Trajectory,
        node_seeds: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.dim;
        let rec = traj.stage_record().ok_or_else(|| {
            Error::InvalidConfig("adjoint needs a fixed-step trajectory with a stage record".into())
        })?;
        if traj.dim() != dim || node_seeds.len() != traj.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: traj.len() * dim,
                got: node_seeds.len(),
            });
        }
        let m = rec.substeps();
        let h = rec.step_size();
        let n_steps = rec.n_steps();

        let last = traj.len() - 1;
        self.adj.copy_from_slice(&node_seeds[last * dim..]);

        // stage weights of the RK4 update, and the stage offsets in time
        const B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        const C: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        // coefficient of k_{i-1} in the input of stage i
        const A: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

        for s in (0..n_steps).rev() {
            let t = rec.step_time(s);
            for i in 0..4 {
                for k in 0..dim {
                    self.k_bar[i][k] = h * B[i] * self.adj[k];
                }
            }
            // x_{n+1} = x_n + ..., so adj carries through unchanged
            for i in (0..4).rev() {
                let y = rec.stage_input(s, i, dim);
                self.y_bar.iter_mut().for_each(|v| *v = 0.0);
                rhs.vjp(t + C[i] * h, y, &self.k_bar[i], &mut self.y_bar, &mut self.p_bar);
                for k in 0..dim {
                    self.adj[k] += self.y_bar[k];
                }
                if i > 0 {
                    for k in 0..dim {
                        self.k_bar[i - 1][k] += h * A[i] * self.y_bar[k];
                    }
                }
            }
            if s % m == 0 {
                let j = s / m;
                for k in 0..dim {
                    self.adj[k] += node_seeds[j * dim + k];
                }
            }
        }
        Ok((self.p_bar, self.adj))
    }
}

/// Convenience wrapper around [`AdjointWorkspace::sweep`].
pub fn adjoint<R: DifferentiableRhs>(
    rhs: &R,
    traj: &Trajectory,
    node_seeds: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    AdjointWorkspace::new(traj.dim(), rhs.n_params()).sweep(rhs, traj, node_seeds)
}

/// The lumped model driven by a recorded power signal; parameters are the
/// model's trainable vector (network, then `log C`).
pub struct RecordedPowerRhs<'a> {
    pub model: &'a LumpedModel,
    pub power: &'a PowerSignal,
}

impl DifferentiableRhs for RecordedPowerRhs<'_> {
    fn n_params(&self) -> usize {
        self.model.n_trainable()
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = self.model.rate(x[0], self.power.at(t));
    }

    fn vjp(&self, t: f64, x: &[f64], v: &[f64], x_bar: &mut [f64], p_bar: &mut [f64]) {
        let m = self.model;
        let c = m.capacitance();
        let temp = x[0];
        let input = [temp / m.t0, self.power.at(t) / m.p0];
        let n = m.heat_net.n_params();
        let mut grad_in = [0.0; 2];
        let q = m
            .heat_net
            .backward_accumulate(&input, v[0] / c, &mut p_bar[..n], &mut grad_in);
        let rate = (q - m.heat_loss(temp)) / c;
        x_bar[0] += grad_in[0] / m.t0 - v[0] * m.h / c;
        p_bar[n] -= v[0] * rate;
    }
}

/// The frozen lumped model driven by a time→power network; parameters are
/// the control network's weights and biases.
pub struct ControlledRhs<'a> {
    pub model: &'a LumpedModel,
    pub control: &'a Mlp,
    pub horizon: f64,
}

impl ControlledRhs<'_> {
    #[inline]
    pub fn power(&self, t: f64) -> f64 {
        self.control.forward_unchecked(&[t / self.horizon])
    }
}

impl DifferentiableRhs for ControlledRhs<'_> {
    fn n_params(&self) -> usize {
        self.control.n_params()
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = self.model.rate(x[0], self.power(t));
    }

    fn vjp(&self, t: f64, x: &[f64], v: &[f64], x_bar: &mut [f64], p_bar: &mut [f64]) {
        let m = self.model;
        let c = m.capacitance();
        let power = self.power(t);
        let input = [x[0] / m.t0, power / m.p0];
        let mut grad_in = [0.0; 2];
        m.heat_net.input_gradient(&input, v[0] / c, &mut grad_in);
        x_bar[0] += grad_in[0] / m.t0 - v[0] * m.h / c;
        let dpower = grad_in[1] / m.p0;
        let mut t_bar = [0.0];
        self.control
            .backward_accumulate(&[t / self.horizon], dpower, p_bar, &mut t_bar);
    }
}

/// Which scalar loss to differentiate and how to discretize it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub solver: SolverConfig,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            solver: SolverConfig::fixed(5),
        }
    }
}

impl LossSpec {
    fn check(&self) -> Result<()> {
        self.solver.validate()?;
        if self.solver.method != ode::Method::FixedRk4 {
            return Err(Error::InvalidConfig(
                "gradients require the fixed-step RK4 solver".into(),
            ));
        }
        Ok(())
    }
}

/// Sum of squared residuals of one run and the node seeds `2 (ŷ - y)`.
fn run_residuals(traj: &Trajectory, run: &ExperimentRun) -> (f64, Vec<f64>) {
    let mut sum = 0.0;
    let mut seeds = Vec::with_capacity(traj.len());
    for (j, &y) in run.temperatures().iter().enumerate() {
        let r = traj.state(j)[0] - y;
        sum += r * r;
        seeds.push(2.0 * r);
    }
    (sum, seeds)
}

fn simulate_run(model: &LumpedModel, run: &ExperimentRun, solver: &SolverConfig) -> Result<(Trajectory, PowerSignal)> {
    let power = run.power_signal()?;
    let traj = model.simulate(&power, run.initial_temperature(), run.grid(), solver)?;
    Ok((traj, power))
}

/// Per-run sums of squared residuals, in run order.
pub(crate) fn residual_sums(model: &LumpedModel, runs: &[ExperimentRun], spec: &LossSpec) -> Result<Vec<(f64, usize)>> {
    runs.par_iter()
        .map(|run| {
            let (traj, _) = simulate_run(model, run, &spec.solver)?;
            Ok((run_residuals(&traj, run).0, run.len()))
        })
        .collect()
}

/// System-identification loss `(1/N_runs) Σ_runs Σ_points (ŷ - y)²`.
pub fn mse_loss(model: &LumpedModel, runs: &[ExperimentRun], spec: &LossSpec) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("loss needs at least one run".into()));
    }
    spec.check()?;
    let sums = residual_sums(model, runs, spec)?;
    Ok(sums.iter().map(|(s, _)| s).sum::<f64>() / runs.len() as f64)
}

/// [`mse_loss`] and its exact gradient with respect to the model's trainable
/// parameters.
pub fn loss_and_gradient(
    model: &LumpedModel,
    runs: &[ExperimentRun],
    spec: &LossSpec,
) -> Result<(f64, GradientVector)> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("loss needs at least one run".into()));
    }
    spec.check()?;
    let n = model.n_trainable();
    let per_run: Vec<(f64, Vec<f64>)> = runs
        .par_iter()
        .map(|run| {
            let (traj, power) = simulate_run(model, run, &spec.solver)?;
            let (sum, seeds) = run_residuals(&traj, run);
            let rhs = RecordedPowerRhs { model, power: &power };
            let (g, _) = adjoint(&rhs, &traj, &seeds)?;
            Ok((sum, g))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / runs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (sum, g) in &per_run {
        loss += sum;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, GradientVector(grad).check_finite()?))
}

/// Set-point loss `Σ_j (T_set - T(t_j))²` under a control network.
pub fn control_loss(
    model: &LumpedModel,
    control: &Mlp,
    horizon: f64,
    t_set: f64,
    t_init: f64,
    grid: &TimeGrid,
    spec: &LossSpec,
) -> Result<f64> {
    spec.check()?;
    let rhs = ControlledRhs { model, control, horizon };
    let traj = ode::integrate_fixed(|t, x, dx| rhs.eval(t, x, dx), &[t_init], grid, &spec.solver)?;
    Ok(traj.scalar_states().iter().map(|&v| (t_set - v).powi(2)).sum())
}

/// [`control_loss`] and its exact gradient with respect to the control
/// network parameters. The model is only read.
pub fn control_loss_and_gradient(
    model: &LumpedModel,
    control: &Mlp,
    horizon: f64,
    t_set: f64,
    t_init: f64,
    grid: &TimeGrid,
    spec: &LossSpec,
) -> Result<(f64, GradientVector)> {
    spec.check()?;
    let rhs = ControlledRhs { model, control, horizon };
    let traj = ode::integrate_fixed(|t, x, dx| rhs.eval(t, x, dx), &[t_init], grid, &spec.solver)?;
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(traj.len());
    for v in traj.scalar_states() {
        let r = v - t_set;
        loss += r * r;
        seeds.push(2.0 * r);
    }
    let (g, _) = adjoint(&rhs, &traj, &seeds)?;
    Ok((loss, GradientVector(g).check_finite()?))
}

/// Central differences `(L(p + eps e_k) - L(p - eps e_k)) / (2 eps)`.
pub fn finite_difference<F>(loss: F, params: &[f64], eps: f64) -> Result<GradientVector>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("FD step must be positive, got {eps}")));
    }
    let g: Vec<f64> = (0..params.len())
        .into_par_iter()
        .map(|k| {
            let mut p = params.to_vec();
            p[k] = params[k] + eps;
            let up = loss(&p)?;
            p[k] = params[k] - eps;
            let down = loss(&p)?;
            Ok((up - down) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    GradientVector(g).check_finite()
}

/// Finite-difference oracle for [`loss_and_gradient`].
pub fn finite_difference_gradient(
    model: &LumpedModel,
    runs: &[ExperimentRun],
    spec: &LossSpec,
    eps: f64,
) -> Result<GradientVector> {
    finite_difference(
        |p| mse_loss(&model.with_trainable(p)?, runs, spec),
        &model.trainable(),
        eps,
    )
}
