//! Open-loop power synthesis on a frozen model.
//!
//! The recorded power signal is replaced by `P_max * NN(t / horizon)` and
//! the network is trained to minimize `Σ_j (T_set - T(t_j))²`.

use crate::error::{Error, Result};
use crate::gradient::{self, ControlledRhs, LossSpec};
use crate::model::LumpedModel;
use crate::nn::Mlp;
use crate::ode::{self, SolverConfig, TimeGrid};
use crate::optim::{self, Adam, LbfgsConfig};
use crate::training::{HistoryEntry, Phase};

pub const CONTROL_NET_DIMS: [usize; 4] = [1, 5, 5, 1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlProblem {
    pub t_set: f64,
    pub p_max: f64,
    pub horizon: f64,
    pub t_init: f64,
    pub dt: f64,
}

impl Default for ControlProblem {
    fn default() -> Self {
        Self {
            t_set: 700.0,
            p_max: 4000.0,
            horizon: 300.0,
            t_init: 23.0,
            dt: 1.0,
        }
    }
}

impl ControlProblem {
    pub fn validate(&self, model: &LumpedModel) -> Result<()> {
        if !(self.t_set > model.t_sink) {
            return Err(Error::InvalidParameter(format!(
                "set point {} must exceed the sink temperature {}",
                self.t_set, model.t_sink
            )));
        }
        for (name, v) in [("horizon", self.horizon), ("p_max", self.p_max), ("dt", self.dt)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.t_init.is_finite() || !self.t_set.is_finite() {
            return Err(Error::InvalidParameter("temperatures must be finite".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.horizon, self.dt)
    }
}

/// Time→power network with output bound `p_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNet {
    pub net: Mlp,
    pub horizon: f64,
}

impl ControlNet {
    pub fn new(problem: &ControlProblem, seed: u64) -> Result<Self> {
        Ok(Self {
            net: Mlp::init_glorot(&CONTROL_NET_DIMS, problem.p_max, seed)?,
            horizon: problem.horizon,
        })
    }

    pub fn zeros(problem: &ControlProblem) -> Result<Self> {
        Ok(Self {
            net: Mlp::zeros(&CONTROL_NET_DIMS, problem.p_max)?,
            horizon: problem.horizon,
        })
    }

    /// Power at time `t`, strictly inside `(0, p_max)`.
    pub fn power(&self, t: f64) -> f64 {
        self.net.forward_unchecked(&[t / self.horizon])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConfig {
    pub adam_epochs: usize,
    pub adam_lr: f64,
    pub lbfgs: LbfgsConfig,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            adam_epochs: 200,
            adam_lr: 1e-3,
            lbfgs: LbfgsConfig::default(),
            substeps: 5,
            seed: 0,
        }
    }
}

impl ControlConfig {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            solver: SolverConfig::fixed(self.substeps),
        }
    }
}

pub fn control_loss(control: &ControlNet, model: &LumpedModel, problem: &ControlProblem, spec: &LossSpec) -> Result<f64> {
    gradient::control_loss(model, &control.net, control.horizon, problem.t_set, problem.t_init, &problem.grid()?, spec)
}

pub fn control_loss_and_gradient(
    control: &ControlNet,
    model: &LumpedModel,
    problem: &ControlProblem,
    spec: &LossSpec,
) -> Result<(f64, gradient::GradientVector)> {
    gradient::control_loss_and_gradient(
        model,
        &control.net,
        control.horizon,
        problem.t_set,
        problem.t_init,
        &problem.grid()?,
        spec,
    )
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub control: ControlNet,
    pub times: Vec<f64>,
    pub profile: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub loss: f64,
    pub history: Vec<HistoryEntry>,
}

/// Profile and predicted temperatures of a control network on the
/// collocation grid.
pub fn rollout(control: &ControlNet, model: &LumpedModel, problem: &ControlProblem, substeps: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let grid = problem.grid()?;
    let rhs = ControlledRhs {
        model,
        control: &control.net,
        horizon: control.horizon,
    };
    let traj = ode::integrate_fixed(
        |t, x, dx| dx[0] = model.rate(x[0], rhs.power(t)),
        &[problem.t_init],
        &grid,
        &SolverConfig::fixed(substeps),
    )?;
    let times = grid.times();
    let profile = times.iter().map(|&t| control.power(t)).collect();
    Ok((times, profile, traj.scalar_states()))
}

fn diverged(e: Error) -> Error {
    match e {
        Error::NonFiniteState { .. } | Error::NonFiniteGradient { .. } => Error::DivergedFit(e.to_string()),
        other => other,
    }
}

/// Adam then L-BFGS on the control network; `model` is only borrowed.
pub fn synthesize_control(model: &LumpedModel, problem: &ControlProblem, config: &ControlConfig) -> Result<Synthesis> {
    problem.validate(model)?;
    let spec = config.loss_spec();
    let mut control = ControlNet::new(problem, config.seed)?;
    let mut history = Vec::new();

    let mut params = control.net.params().to_vec();
    let mut best = (f64::INFINITY, params.clone());
    let mut adam = Adam::new(params.len(), config.adam_lr);
    for epoch in 0..config.adam_epochs {
        control.net.set_params(&params)?;
        let (loss, grad) = control_loss_and_gradient(&control, model, problem, &spec).map_err(diverged)?;
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
    control.net.set_params(&params)?;
    let last = control_loss(&control, model, problem, &spec).map_err(diverged)?;
    if last < best.0 {
        best = (last, params.clone());
    }
    control.net.set_params(&best.1)?;

    let template = control.clone();
    let result = optim::lbfgs(
        |p| {
            let mut c = template.clone();
            c.net.set_params(p)?;
            control_loss_and_gradient(&c, model, problem, &spec).map(|(l, g)| (l, g.into_vec()))
        },
        &best.1,
        &config.lbfgs,
        |iteration, loss| {
            history.push(HistoryEntry {
                phase: Phase::Lbfgs,
                iteration,
                loss,
            })
        },
    )
    .map_err(diverged)?;
    if !result.loss.is_finite() {
        return Err(Error::DivergedFit(format!("control loss {}", result.loss)));
    }
    control.net.set_params(&result.x)?;
    let (times, profile, temperatures) = rollout(&control, model, problem, config.substeps)?;
    Ok(Synthesis {
        control,
        times,
        profile,
        temperatures,
        loss: result.loss,
        history,
    })
}

/// Index of the largest forward difference of `profile`.
pub fn max_rise_index(profile: &[f64]) -> Option<usize> {
    profile
        .windows(2)
        .enumerate()
        .max_by(|a, b| (a.1[1] - a.1[0]).total_cmp(&(b.1[1] - b.1[0])))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DEFAULT_Q0, HEAT_NET_DIMS};

    #[test]
    fn zero_network_profile_is_half_scale() {
        let c = ControlNet::zeros(&ControlProblem::default()).unwrap();
        for t in [0.0, 10.0, 150.0, 300.0, 1e6] {
            assert_eq!(c.power(t), 2000.0);
        }
        assert_eq!(c.net.n_params(), 46);
    }

    #[test]
    fn rejects_set_point_below_sink() {
        let m = LumpedModel::new(0, 4.0).unwrap();
        let p = ControlProblem {
            t_set: 23.0,
            ..Default::default()
        };
        assert!(p.validate(&m).is_err());
        let p = ControlProblem {
            horizon: 0.0,
            ..Default::default()
        };
        assert!(p.validate(&m).is_err());
    }

    /// Model whose heat input equals heat loss at `t_eq` for every power.
    fn equilibrium_model(t_eq: f64) -> LumpedModel {
        let mut net = Mlp::zeros(&HEAT_NET_DIMS, DEFAULT_Q0).unwrap();
        let s: f64 = (t_eq - 23.0) / DEFAULT_Q0;
        let idx = net.bias_index(1, 0);
        net.params_mut()[idx] = (s / (1.0 - s)).ln();
        LumpedModel::from_parts(net, 4f64.ln(), 1.0, 23.0, 1000.0, 4000.0).unwrap()
    }

    #[test]
    fn pinned_model_gives_zero_loss() {
        let model = equilibrium_model(700.0);
        let problem = ControlProblem {
            t_init: 700.0,
            ..Default::default()
        };
        let c = ControlNet::new(&problem, 1).unwrap();
        let loss = control_loss(&c, &model, &problem, &LossSpec::default()).unwrap();
        assert!(loss < 1e-12, "{loss}");
    }

    #[test]
    fn constant_offset_loss() {
        let model = equilibrium_model(699.0);
        let problem = ControlProblem {
            t_init: 699.0,
            horizon: 99.0,
            ..Default::default()
        };
        let c = ControlNet::new(&problem, 1).unwrap();
        let loss = control_loss(&c, &model, &problem, &LossSpec::default()).unwrap();
        assert!((loss - 100.0).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn max_rise() {
        assert_eq!(max_rise_index(&[0.0, 1.0, 5.0, 6.0]), Some(1));
        assert_eq!(max_rise_index(&[3.0]), None);
    }
}
