//! Fuel-optimal lunar vertical-landing guidance.
//!
//! The pipeline: solve the optimal landing problem by indirect shooting with
//! a terminal-attitude regularization, mass-produce optimal trajectories by
//! integrating the necessary conditions backward from touchdown, fit a small
//! neural network to the state-to-steering map, and fly it in closed loop.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod mlp;
pub mod odeint;
pub mod pipeline;
pub mod problem;
pub mod sampler;
pub mod shooting;
pub mod simulator;
pub mod steering;
pub mod verify;

pub use error::{ConfigError, DynamicsError, MlpError, OdeError, SamplerError, ShootingError, SimError, SteeringError};
pub use problem::{Costate, DimensionalState, PhysicalConstants, ProblemConfig, RegularizationConfig, ScalingSet, State};
