//! Single shooting on the five boundary conditions at touchdown, with
//! continuation in the regularization weight.
//!
//! Unknowns are the initial costates and the final time; the residual is
//! `[r(tf) - 1, u(tf), v(tf), p_m(tf), H(tf)]`.

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ExtendedState;
use crate::error::{OdeError, ShootingError};
use crate::odeint::{propagate, propagate_final, Direction, IntegratorSettings, LandingSystem, Steering, Trajectory};
use crate::problem::{Costate, ProblemConfig, State};
use crate::steering::optimal_steering;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootingGuess {
    pub p0: Costate,
    pub tf: f64,
}

impl ShootingGuess {
    fn to_vector(self) -> Vector5<f64> {
        Vector5::new(self.p0.pr, self.p0.pu, self.p0.pv, self.p0.pm, self.tf)
    }

    fn from_vector(z: &Vector5<f64>) -> Self {
        Self { p0: Costate::new(z[0], z[1], z[2], z[3]), tf: z[4] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceScheme {
    Forward,
    Central,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootingOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the residual.
    pub tolerance: f64,
    /// Relative finite-difference step for the Jacobian.
    pub fd_step: f64,
    pub fd_scheme: DifferenceScheme,
    pub max_halvings: usize,
    pub max_condition: f64,
    pub integrator: IntegratorSettings,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-9,
            fd_step: 1e-8,
            fd_scheme: DifferenceScheme::Central,
            max_halvings: 20,
            max_condition: 1e14,
            integrator: IntegratorSettings::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShootingResult {
    pub delta: f64,
    pub solution: ShootingGuess,
    pub residual: [f64; 5],
    pub residual_norm: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
    pub converged: bool,
    pub iterations: usize,
}

fn inf_norm(v: &[f64; 5]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Boundary residual at the final time of a forward propagation.
pub fn shooting_residual(
    g: &ShootingGuess,
    x0: &State,
    cfg: &ProblemConfig,
    settings: &IntegratorSettings,
) -> Result<[f64; 5], ShootingError> {
    if !(g.tf > 0.0) {
        return Err(ShootingError::NonPositiveFinalTime(g.tf));
    }
    let sys = LandingSystem::new(cfg, Direction::Forward, Steering::Optimal);
    let end = propagate_final(&sys, &ExtendedState::new(*x0, g.p0), (0.0, g.tf), settings)?;
    let steer = optimal_steering(&end.x, &end.p, cfg).map_err(|source| OdeError::Steering { t: g.tf, source })?;
    Ok([end.x.r - 1.0, end.x.u, end.x.v, end.p.pm, steer.hamiltonian_value])
}

fn jacobian(
    z: &Vector5<f64>,
    f0: &[f64; 5],
    x0: &State,
    cfg: &ProblemConfig,
    opts: &ShootingOptions,
) -> Result<Matrix5<f64>, ShootingError> {
    let columns: Vec<Result<[f64; 5], ShootingError>> = (0..5)
        .into_par_iter()
        .map(|j| {
            let h = opts.fd_step * z[j].abs().max(1.0);
            let eval = |offset: f64| {
                let mut zp = *z;
                zp[j] += offset;
                shooting_residual(&ShootingGuess::from_vector(&zp), x0, cfg, &opts.integrator)
            };
            let fp = eval(h)?;
            Ok(match opts.fd_scheme {
                DifferenceScheme::Forward => std::array::from_fn(|i| (fp[i] - f0[i]) / h),
                DifferenceScheme::Central => {
                    let fm = eval(-h)?;
                    std::array::from_fn(|i| (fp[i] - fm[i]) / (2.0 * h))
                }
            })
        })
        .collect();
    let mut jac = Matrix5::zeros();
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for i in 0..5 {
            jac[(i, j)] = col[i];
        }
    }
    Ok(jac)
}

fn finish(
    x0: &State,
    cfg: &ProblemConfig,
    opts: &ShootingOptions,
    z: &Vector5<f64>,
    f: [f64; 5],
    iterations: usize,
) -> Result<ShootingResult, ShootingError> {
    let solution = ShootingGuess::from_vector(z);
    let sys = LandingSystem::new(cfg, Direction::Forward, Steering::Optimal);
    let trajectory = propagate(&sys, &ExtendedState::new(*x0, solution.p0), (0.0, solution.tf), &opts.integrator)?;
    Ok(ShootingResult {
        delta: cfg.reg.delta,
        solution,
        residual: f,
        residual_norm: inf_norm(&f),
        trajectory,
        converged: true,
        iterations,
    })
}

/// Fallback when backtracking along the Newton direction fails: damped
/// Gauss-Newton steps with growing damping, first strict decrease wins.
fn levenberg_marquardt_step(
    z: &Vector5<f64>,
    jac: &Matrix5<f64>,
    f: &[f64; 5],
    merit: f64,
    x0: &State,
    cfg: &ProblemConfig,
    opts: &ShootingOptions,
) -> Option<(Vector5<f64>, [f64; 5])> {
    let jtj = jac.transpose() * jac;
    let g = jac.transpose() * Vector5::from_column_slice(f);
    let scale = jtj.diagonal().max();
    let mut mu = 1e-8 * scale;
    while mu < 1e4 * scale {
        let damped = jtj + Matrix5::identity() * mu;
        if let Some(step) = damped.cholesky().map(|c| c.solve(&-g)) {
            let trial = z + step;
            if let Ok(ft) = shooting_residual(&ShootingGuess::from_vector(&trial), x0, cfg, &opts.integrator) {
                let m = 0.5 * ft.iter().map(|v| v * v).sum::<f64>();
                if m.is_finite() && m < merit {
                    log::debug!("damped step accepted with mu = {mu:e}");
                    return Some((trial, ft));
                }
            }
        }
        mu *= 10.0;
    }
    None
}

/// Damped Newton iteration with a forward-difference Jacobian and Armijo
/// backtracking on `|psi|^2 / 2`.
pub fn solve_tpbvp(
    x0: &State,
    g0: &ShootingGuess,
    cfg: &ProblemConfig,
    opts: &ShootingOptions,
) -> Result<ShootingResult, ShootingError> {
    let mut z = g0.to_vector();
    let mut f = shooting_residual(g0, x0, cfg, &opts.integrator)?;
    for iter in 0..opts.max_iterations {
        let norm = inf_norm(&f);
        log::debug!("shooting iter {iter}: |psi| = {norm:e}, guess = {:?}", z.as_slice());
        if norm < opts.tolerance {
            return finish(x0, cfg, opts, &z, f, iter);
        }
        let jac = jacobian(&z, &f, x0, cfg, opts)?;
        let sv = jac.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition < opts.max_condition) {
            return Err(ShootingError::SingularJacobian { condition });
        }
        let rhs = -Vector5::from_column_slice(&f);
        let step = jac.lu().solve(&rhs).ok_or(ShootingError::SingularJacobian { condition })?;

        let merit = 0.5 * f.iter().map(|v| v * v).sum::<f64>();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = z + step * lambda;
            let g = ShootingGuess::from_vector(&trial);
            if let Ok(ft) = shooting_residual(&g, x0, cfg, &opts.integrator) {
                let m = 0.5 * ft.iter().map(|v| v * v).sum::<f64>();
                if m.is_finite() && m <= (1.0 - 2e-4 * lambda) * merit {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            lambda *= 0.5;
        }
        if accepted.is_none() {
            accepted = levenberg_marquardt_step(&z, &jac, &f, merit, x0, cfg, opts);
        }
        match accepted {
            Some((trial, ft)) => {
                z = trial;
                f = ft;
            }
            None => return Err(ShootingError::LineSearch { residual_norm: norm }),
        }
    }
    let norm = inf_norm(&f);
    if norm < opts.tolerance {
        return finish(x0, cfg, opts, &z, f, opts.max_iterations);
    }
    Err(ShootingError::MaxIterations { iterations: opts.max_iterations, residual_norm: norm })
}

/// Base costate of the guess grid.
pub const GUESS_BASE: [f64; 4] = [-1.0, 0.5, -0.5, 0.0];
const GUESS_FACTORS: [f64; 3] = [1.0, -1.0, 0.5];
const GUESS_PM: [f64; 3] = [0.0, 0.5, 1.0];
pub const GUESS_FINAL_TIMES: [f64; 3] = [0.3, 0.5, 0.7];

/// Deterministic list of the 3^4 x 3 starting guesses, in trial order.
pub fn guess_grid() -> Vec<ShootingGuess> {
    let mut out = Vec::with_capacity(243);
    for &tf in &GUESS_FINAL_TIMES {
        for &a in &GUESS_FACTORS {
            for &b in &GUESS_FACTORS {
                for &c in &GUESS_FACTORS {
                    for &pm in &GUESS_PM {
                        let p0 = Costate::new(GUESS_BASE[0] * a, GUESS_BASE[1] * b, GUESS_BASE[2] * c, GUESS_BASE[3] + pm);
                        out.push(ShootingGuess { p0, tf });
                    }
                }
            }
        }
    }
    out
}

/// Tries the guess grid in order and returns the first converged solve.
pub fn search_initial_guess(x0: &State, cfg: &ProblemConfig, opts: &ShootingOptions) -> Result<ShootingResult, ShootingError> {
    for (k, g) in guess_grid().iter().enumerate() {
        match solve_tpbvp(x0, g, cfg, opts) {
            Ok(res) => {
                log::info!("guess {k} converged: p0 = {:?}, tf = {}", g.p0.to_array(), g.tf);
                return Ok(res);
            }
            Err(e) => log::debug!("guess {k} failed: {e}"),
        }
    }
    Err(ShootingError::NoInitialGuess)
}

/// Outcome of a continuation run: every solved stage in order, plus the
/// stage that could not be solved, if any.
#[derive(Debug)]
pub struct HomotopyOutcome {
    pub results: Vec<ShootingResult>,
    pub failure: Option<(f64, ShootingError)>,
}

impl HomotopyOutcome {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn last(&self) -> Option<&ShootingResult> {
        self.results.last()
    }
}

/// `count` uniform steps from zero to `delta`, both ends included.
pub fn uniform_schedule(delta: f64, count: usize) -> Vec<f64> {
    let n = count.max(1);
    (0..=n).map(|k| delta * k as f64 / n as f64).collect()
}

/// Solves the problem for each weight in `schedule`, warm-starting every
/// stage from the previous solution. A failing stage is retried through its
/// midpoint, up to `max_bisections` levels deep.
pub fn homotopy_delta(
    x0: &State,
    g0: &ShootingGuess,
    schedule: &[f64],
    cfg: &ProblemConfig,
    opts: &ShootingOptions,
    max_bisections: usize,
) -> HomotopyOutcome {
    let mut results: Vec<ShootingResult> = Vec::new();
    let mut guess = *g0;
    let mut prev_delta: Option<f64> = None;
    for &target in schedule {
        match solve_stage(x0, &guess, prev_delta, target, cfg, opts, max_bisections, &mut results) {
            Ok(()) => {
                let last = results.last().expect("stage pushed a result");
                guess = last.solution;
                prev_delta = Some(target);
            }
            Err(e) => return HomotopyOutcome { results, failure: Some((target, e)) },
        }
    }
    HomotopyOutcome { results, failure: None }
}

#[allow(clippy::too_many_arguments)]
fn solve_stage(
    x0: &State,
    guess: &ShootingGuess,
    from: Option<f64>,
    target: f64,
    cfg: &ProblemConfig,
    opts: &ShootingOptions,
    depth_left: usize,
    out: &mut Vec<ShootingResult>,
) -> Result<(), ShootingError> {
    let stage_cfg = cfg.with_delta(target)?;
    let first = solve_tpbvp(x0, guess, &stage_cfg, opts);
    match first {
        Ok(res) => {
            log::info!(
                "delta = {target:e}: converged in {} iterations, tf = {:.6} s",
                res.iterations,
                stage_cfg.time_s(res.solution.tf)
            );
            out.push(res);
            Ok(())
        }
        Err(e) => {
            let Some(from) = from else { return Err(e) };
            if depth_left == 0 {
                return Err(e);
            }
            let mid = 0.5 * (from + target);
            log::info!("delta = {target:e} failed ({e}); bisecting through {mid:e}");
            solve_stage(x0, guess, Some(from), mid, cfg, opts, depth_left - 1, out)?;
            let mid_guess = out.last().expect("midpoint solved").solution;
            solve_stage(x0, &mid_guess, Some(mid), target, cfg, opts, depth_left - 1, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DimensionalState;
    use crate::steering::primer_angle;
    use std::sync::OnceLock;

    fn nominal_x0(cfg: &ProblemConfig) -> State {
        cfg.scaling.nondimensionalize(&DimensionalState { r_m: 1.753e6, u_ms: 1679.5, v_ms: 0.0, m_kg: 600.0 })
    }

    fn unconstrained() -> &'static (ProblemConfig, State, ShootingResult) {
        static SOL: OnceLock<(ProblemConfig, State, ShootingResult)> = OnceLock::new();
        SOL.get_or_init(|| {
            let cfg = ProblemConfig::lunar_default().with_delta(0.0).unwrap();
            let x0 = nominal_x0(&cfg);
            let res = search_initial_guess(&x0, &cfg, &ShootingOptions::default()).unwrap();
            (cfg, x0, res)
        })
    }

    #[test]
    fn guess_grid_layout() {
        let grid = guess_grid();
        assert_eq!(grid.len(), 243);
        assert_eq!(grid[0].p0.to_array(), GUESS_BASE);
        assert_eq!(grid[0].tf, 0.3);
        assert!(grid.iter().all(|g| g.tf > 0.0));
    }

    #[test]
    fn unconstrained_nominal_final_time() {
        let (cfg, _, res) = unconstrained();
        assert!(res.converged);
        assert!(res.residual_norm < 1e-9);
        let tf = cfg.time_s(res.solution.tf);
        assert!((tf - 536.90).abs() / 536.90 < 0.01, "tf = {tf}");
        assert!(res.trajectory.max_abs_h() < 1e-6);
    }

    #[test]
    fn converged_guess_is_a_fixed_point() {
        let (cfg, x0, res) = unconstrained();
        let opts = ShootingOptions::default();
        let psi = shooting_residual(&res.solution, x0, cfg, &opts.integrator).unwrap();
        assert!(inf_norm(&psi) < 1e-9, "{psi:?}");
        let again = solve_tpbvp(x0, &res.solution, cfg, &opts).unwrap();
        assert!(again.iterations <= 1);
    }

    #[test]
    fn perturbed_final_time_breaks_the_boundary_conditions() {
        let (cfg, x0, res) = unconstrained();
        let mut g = res.solution;
        g.tf *= 1.01;
        let psi = shooting_residual(&g, x0, cfg, &IntegratorSettings::default()).unwrap();
        assert!(psi[0].abs() > 1e-6 && psi[2].abs() > 1e-6, "{psi:?}");
        // H is a first integral, so the last component stays at its t = 0 value
        assert!(psi[4].abs() < 1e-8);
    }

    #[test]
    fn unconstrained_steering_is_the_primer_direction() {
        let (_, _, res) = unconstrained();
        for n in &res.trajectory.nodes {
            let primer = primer_angle(n.p.pu, n.p.pv);
            let d = (n.beta - primer).rem_euclid(std::f64::consts::TAU);
            assert!(d.min(std::f64::consts::TAU - d) < 1e-8, "t = {}: {} vs {}", n.t, n.beta, primer);
        }
    }

    #[test]
    fn mass_decreases_linearly() {
        let (cfg, x0, res) = unconstrained();
        for n in &res.trajectory.nodes {
            assert!((n.x.m - (x0.m - cfg.nondim_mdot * n.t)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_entry_schedule_matches_direct_solve() {
        let (cfg, x0, res) = unconstrained();
        let guess = ShootingGuess { p0: Costate::new(-1.0, 0.5, -0.5, 0.0), tf: 0.5 };
        let opts = ShootingOptions::default();
        let direct = solve_tpbvp(x0, &guess, cfg, &opts).unwrap();
        let out = homotopy_delta(x0, &guess, &[0.0], cfg, &opts, 5);
        assert!(out.completed());
        assert_eq!(out.results.len(), 1);
        let h = out.last().unwrap();
        assert_eq!(h.solution, direct.solution);
        assert_eq!(h.iterations, direct.iterations);
        assert!((h.solution.tf - res.solution.tf).abs() < 1e-8);
    }

    #[test]
    fn short_homotopy_and_fuel_identity() {
        let (cfg, x0, res) = unconstrained();
        let opts = ShootingOptions::default();
        let out = homotopy_delta(x0, &res.solution, &[0.0, 1e-6], cfg, &opts, 3);
        assert!(out.completed(), "{:?}", out.failure);
        let (a, b) = (&out.results[0], out.last().unwrap());
        assert!(b.solution.tf >= a.solution.tf);
        assert!(b.residual_norm < 1e-9);
        assert!(b.trajectory.max_abs_h() < 1e-6);
        let beta_f = b.trajectory.last().unwrap().beta;
        assert!((beta_f - std::f64::consts::FRAC_PI_2).abs() < (a.trajectory.last().unwrap().beta - std::f64::consts::FRAC_PI_2).abs());

        let ma = cfg.scaling.dimensionalize(&a.trajectory.last().unwrap().x).m_kg;
        let mb = cfg.scaling.dimensionalize(&b.trajectory.last().unwrap().x).m_kg;
        let expected = cfg.constants.mass_flow_kg_s() * (cfg.time_s(b.solution.tf) - cfg.time_s(a.solution.tf));
        assert!(((ma - mb) - expected).abs() / expected < 1e-8, "{} vs {expected}", ma - mb);
        assert!(((cfg.fuel_kg(b.solution.tf - a.solution.tf)) - expected).abs() / expected < 1e-10);
    }

    #[test]
    fn uniform_schedule_endpoints() {
        let s = uniform_schedule(1e-5, 5);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[5], 1e-5);
        assert_eq!(uniform_schedule(1.0, 0), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_nonpositive_final_time() {
        let (cfg, x0, _) = unconstrained();
        let g = ShootingGuess { p0: Costate::default(), tf: 0.0 };
        assert!(matches!(
            shooting_residual(&g, x0, cfg, &IntegratorSettings::default()),
            Err(ShootingError::NonPositiveFinalTime(_))
        ));
    }
}
