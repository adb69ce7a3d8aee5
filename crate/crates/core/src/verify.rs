//! Node-wise necessary-condition checks on a stored trajectory.

use serde::{Deserialize, Serialize};

use crate::dynamics::hamiltonian;
use crate::odeint::Trajectory;
use crate::problem::{ProblemConfig, State};
use crate::steering::stationarity_residual;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    pub hamiltonian: f64,
    pub stationarity: f64,
    /// Largest deviation of `m(t)` from a straight line at the engine's flow rate.
    pub mass_linearity: f64,
    pub boundary: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self { hamiltonian: 1e-6, stationarity: 1e-9, mass_linearity: 1e-9, boundary: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// Node with the worst value, when the check is node-wise.
    pub worst_node: Option<usize>,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64, worst_node: Option<usize>) -> Self {
        Self { name: name.into(), value, tolerance, worst_node, passed: value <= tolerance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub nodes: usize,
    pub delta: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn worst(values: impl Iterator<Item = f64>) -> (f64, Option<usize>) {
    values.enumerate().fold((0.0, None), |(m, k), (i, v)| {
        // NaN counts as a failure
        if v.is_nan() || v > m {
            (if v.is_nan() { f64::INFINITY } else { v }, Some(i))
        } else {
            (m, k)
        }
    })
}

/// Checks `|H|`, `dH/dbeta`, the mass profile and the touchdown conditions
/// `r = 1, u = v = 0, p_m = 0` at the last node. When `x0` is given the first
/// node must also match it.
pub fn verify_trajectory(traj: &Trajectory, cfg: &ProblemConfig, x0: Option<&State>, tol: &VerifyTolerances) -> VerificationReport {
    let nodes = &traj.nodes;
    let mut checks = Vec::new();
    if nodes.len() < 2 {
        checks.push(Check::new("node_count", f64::INFINITY, 0.0, None));
        return VerificationReport { nodes: nodes.len(), delta: cfg.reg.delta, checks, passed: false };
    }

    let (h, k) = worst(nodes.iter().map(|n| hamiltonian(&n.x, &n.p, n.beta, cfg).abs()));
    checks.push(Check::new("max_abs_hamiltonian", h, tol.hamiltonian, k));
    let (s, k) = worst(nodes.iter().map(|n| stationarity_residual(&n.x, &n.p, n.beta, cfg).abs()));
    checks.push(Check::new("max_abs_stationarity", s, tol.stationarity, k));

    let first = &nodes[0];
    let (ml, k) = worst(nodes.iter().map(|n| (n.x.m - (first.x.m - cfg.nondim_mdot * (n.t - first.t))).abs()));
    checks.push(Check::new("mass_linearity", ml, tol.mass_linearity, k));

    let last = nodes.last().expect("at least two nodes");
    for (name, v) in [
        ("final_r_minus_1", last.x.r - 1.0),
        ("final_u", last.x.u),
        ("final_v", last.x.v),
        ("final_pm", last.p.pm),
    ] {
        checks.push(Check::new(name, v.abs(), tol.boundary, Some(nodes.len() - 1)));
    }
    if let Some(x0) = x0 {
        let d = [first.x.r - x0.r, first.x.u - x0.u, first.x.v - x0.v, first.x.m - x0.m];
        let e = d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        checks.push(Check::new("initial_state", e, tol.boundary, Some(0)));
    }
    let passed = checks.iter().all(|c| c.passed);
    VerificationReport { nodes: nodes.len(), delta: cfg.reg.delta, checks, passed }
}
