//! Neural lumped-parameter thermal models.
//!
//! A single temperature obeys `C dT/dt = Q0 * NN(T/T0, P/P0) - h (T - T_sink)`,
//! where the network closes the unknown internal heat generation. The crate
//! fits such models to temperature/power records with exact discrete-adjoint
//! gradients, and synthesizes open-loop power profiles that drive a fitted
//! model to a set point.

pub mod config;
pub mod control;
pub mod data_io;
pub mod error;
pub mod gradient;
pub mod model;
pub mod nn;
pub mod ode;
pub mod optim;
pub mod synth;
pub mod training;

pub use control::{synthesize_control, ControlConfig, ControlNet, ControlProblem, Synthesis};
pub use error::{Error, Result};
pub use gradient::{loss_and_gradient, GradientVector, LossSpec};
pub use model::{LumpedModel, PowerSignal};
pub use nn::Mlp;
pub use ode::{SolverConfig, TimeGrid, Trajectory};
pub use synth::GroundTruthSpec;
pub use training::{ExperimentRun, FitReport, TrainConfig};
