//! State and costate right-hand sides, the terminal-attitude regularization
//! term and the augmented Hamiltonian.
//!
//! With `mu = 1` in canonical units the planar dynamics read
//!
//! ```text
//! r' = v
//! u' = -u v / r + (T/m) cos(beta)
//! v' = u^2 / r - 1 / r^2 + (T/m) sin(beta)
//! m' = -mdot
//! ```
//!
//! and the Hamiltonian is `H = p . f + 1 + Delta(r, beta)`.

use std::f64::consts::FRAC_PI_2;

use crate::error::DynamicsError;
use crate::problem::{Costate, ProblemConfig, RegularizationConfig, State};

/// Value of the regularization term and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegTerms {
    pub value: f64,
    pub d_dr: f64,
    pub d_dbeta: f64,
    /// `delta exp(1 - r) / (r - 1 + eps)`: the curvature of the term in beta.
    pub weight: f64,
}

/// Single source for the regularization term and its gradient.
///
/// Below the surface the radius offset is clamped to zero so the denominator
/// never drops under `eps`; the returned `d_dr` is the derivative of the
/// clamped function.
pub fn regularization(r: f64, beta: f64, reg: &RegularizationConfig) -> RegTerms {
    if reg.delta == 0.0 {
        return RegTerms { value: 0.0, d_dr: 0.0, d_dbeta: 0.0, weight: 0.0 };
    }
    let above = r >= 1.0;
    let denom = (r - 1.0).max(0.0) + reg.epsilon;
    let scale = reg.delta * (1.0 - r).exp();
    let weight = scale / denom;
    let off = beta - FRAC_PI_2;
    let value = 0.5 * weight * off * off;
    let d_dr = if above {
        // d/dr [e^{1-r} / (r-1+eps)] = -e^{1-r} (r + eps) / (r-1+eps)^2
        -0.5 * scale * off * off * (r + reg.epsilon) / (denom * denom)
    } else {
        -value
    };
    RegTerms { value, d_dr, d_dbeta: weight * off, weight }
}

pub fn regularization_term(r: f64, beta: f64, reg: &RegularizationConfig) -> f64 {
    regularization(r, beta, reg).value
}

fn check(values: [f64; 4]) -> Result<[f64; 4], DynamicsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(DynamicsError::NonFinite)
    }
}

/// Rates of the state at fixed steering angle.
pub fn state_rhs(x: &State, beta: f64, cfg: &ProblemConfig) -> Result<State, DynamicsError> {
    let acc = cfg.nondim_thrust / x.m;
    let (sb, cb) = beta.sin_cos();
    let rates = check([
        x.v,
        -x.u * x.v / x.r + acc * cb,
        x.u * x.u / x.r - 1.0 / (x.r * x.r) + acc * sb,
        -cfg.nondim_mdot,
    ])?;
    Ok(State::from_slice(&rates))
}

pub fn hamiltonian(x: &State, p: &Costate, beta: f64, cfg: &ProblemConfig) -> f64 {
    let acc = cfg.nondim_thrust / x.m;
    let (sb, cb) = beta.sin_cos();
    p.pr * x.v
        + p.pu * (-x.u * x.v / x.r + acc * cb)
        + p.pv * (x.u * x.u / x.r - 1.0 / (x.r * x.r) + acc * sb)
        - p.pm * cfg.nondim_mdot
        + 1.0
        + regularization_term(x.r, beta, &cfg.reg)
}

/// `-dH/dx` at fixed steering angle.
pub fn costate_rhs(x: &State, p: &Costate, beta: f64, cfg: &ProblemConfig) -> Result<Costate, DynamicsError> {
    let Costate { pr, pu, pv, .. } = *p;
    let State { r, u, v, m } = *x;
    let t = cfg.nondim_thrust;
    let (sb, cb) = beta.sin_cos();
    let reg = regularization(r, beta, &cfg.reg);
    let rates = check([
        -2.0 * pv / (r * r * r) + (pv * u * u - pu * u * v) / (r * r) - reg.d_dr,
        (pu * v - 2.0 * pv * u) / r,
        u * pu / r - pr,
        t / (m * m) * (pu * cb + pv * sb),
    ])?;
    Ok(Costate::from_slice(&rates))
}

/// State, costate and the running augmented cost `int (1 + Delta) dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtendedState {
    pub x: State,
    pub p: Costate,
    pub accumulated_cost: f64,
}

impl ExtendedState {
    pub fn new(x: State, p: Costate) -> Self {
        Self { x, p, accumulated_cost: 0.0 }
    }

    pub fn to_array(&self) -> [f64; 9] {
        let x = self.x;
        let p = self.p;
        [x.r, x.u, x.v, x.m, p.pr, p.pu, p.pv, p.pm, self.accumulated_cost]
    }

    pub fn from_array(y: &[f64; 9]) -> Self {
        Self { x: State::from_slice(&y[0..4]), p: Costate::from_slice(&y[4..8]), accumulated_cost: y[8] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivative {
    pub dx: State,
    pub dp: Costate,
    pub dcost: f64,
}

pub fn augmented_rhs(e: &ExtendedState, beta: f64, cfg: &ProblemConfig) -> Result<Derivative, DynamicsError> {
    let dx = state_rhs(&e.x, beta, cfg)?;
    let dp = costate_rhs(&e.x, &e.p, beta, cfg)?;
    let dcost = 1.0 + regularization_term(e.x.r, beta, &cfg.reg);
    Ok(Derivative { dx, dp, dcost })
}
