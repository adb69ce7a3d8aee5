use thiserror::Error;

use crate::odeint::Trajectory;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{name} must be finite and strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("non-finite derivative")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SteeringError {
    /// Zero primer vector with no regularization: every angle is stationary.
    #[error("steering undefined: (p_u, p_v) = (0, 0) and no regularization")]
    Undefined,
    #[error("no stationary steering angle found on [0, 2pi]")]
    NoStationary,
    #[error("non-finite steering inputs")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),
    #[error("steering failure at t = {t}: {source}")]
    Steering { t: f64, source: SteeringError },
    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("event not triggered before t = {t_end}")]
    EventTimeout { t_end: f64, partial: Box<Trajectory> },
    #[error("invalid integration request: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error("shooting residual not evaluable: {0}")]
    Propagation(#[from] OdeError),
    #[error("final time must be positive, got {0}")]
    NonPositiveFinalTime(f64),
    #[error("Newton iteration did not converge in {iterations} iterations (|psi| = {residual_norm:e})")]
    MaxIterations { iterations: usize, residual_norm: f64 },
    #[error("singular shooting Jacobian (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },
    #[error("line search failed at |psi| = {residual_norm:e}")]
    LineSearch { residual_norm: f64 },
    #[error("no converging initial guess found in the seed grid")]
    NoInitialGuess,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("infeasible touchdown: mass {m0} <= 0")]
    InfeasibleTouchdown { m0: f64 },
    #[error("touchdown boundary solve diverged after {0} iterations")]
    BoundaryDiverged(usize),
    #[error("touchdown steering is not the Hamiltonian minimizer (beta {found}, optimal {optimal})")]
    WrongBranch { found: f64, optimal: f64 },
    #[error("trajectory dips below the surface at tau = {tau}")]
    SubSurface { tau: f64 },
    #[error("propagation failed: {0}")]
    Propagation(#[from] OdeError),
    #[error("steering failed: {0}")]
    Steering(#[from] SteeringError),
    #[error("rejection rate {rejected}/{total} exceeds 50%")]
    RejectionRate { rejected: usize, total: usize },
    #[error("invalid sampling spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("model file version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("model dimension mismatch: {0}")]
    Dimension(String),
    #[error("model parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dataset has an empty {0} split")]
    EmptySplit(&'static str),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no touchdown gate crossing within {timeout_s} s (lowest altitude {min_altitude_m:.3} m)")]
    Timeout { timeout_s: f64, min_altitude_m: f64 },
    #[error("propagation failed: {0}")]
    Propagation(#[from] OdeError),
    #[error("initial conditions differ between compared runs")]
    MismatchedInitialConditions,
}
