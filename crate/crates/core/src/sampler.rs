//! Backward generation of optimal trajectories from touchdown.
//!
//! At touchdown the state is `(1, 0, 0, m0)` and `p_m = 0`; any choice of the
//! remaining costates `(p_r, p_u, p_v)` fixes `m0` and the touchdown angle
//! through `H = 0` and the stationarity condition. Integrating the necessary
//! conditions in time-to-go from there yields an optimal trajectory without
//! any boundary-value solve.

use std::f64::consts::FRAC_PI_2;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{hamiltonian, regularization, ExtendedState};
use crate::error::{OdeError, SamplerError};
use crate::odeint::{propagate_with_events, Crossing, Direction, Event, IntegratorSettings, LandingSystem, Steering, Trajectory};
use crate::problem::{Costate, ProblemConfig, State};
use crate::steering::{optimal_steering, stationarity_residual};

pub const BOUNDARY_MAX_ITER: usize = 100;
/// Residual level the touchdown boundary solve must reach.
pub const BOUNDARY_TOL: f64 = 1e-11;
/// Event offset below the surface that counts as a dip.
const SUBSURFACE_MARGIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchdownTriple {
    pub pr: f64,
    pub pu: f64,
    pub pv: f64,
}

impl TouchdownTriple {
    pub const fn new(pr: f64, pu: f64, pv: f64) -> Self {
        Self { pr, pu, pv }
    }

    pub fn from_costate(p: &Costate) -> Self {
        Self::new(p.pr, p.pu, p.pv)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.pr, self.pu, self.pv]
    }

    pub fn costate(self) -> Costate {
        Costate::new(self.pr, self.pu, self.pv, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchdownBoundary {
    pub m0_bar: f64,
    pub beta0_bar: f64,
    pub h_residual: f64,
    pub stationarity_residual: f64,
    pub iterations: usize,
}

fn touchdown_state(m: f64) -> State {
    State::new(1.0, 0.0, 0.0, m)
}

/// Touchdown mass and angle for `delta = 0` in closed form: the primer
/// direction and `m0 = T |(p_u, p_v)| / (1 - p_v)`.
pub fn unconstrained_touchdown(triple: &TouchdownTriple, cfg: &ProblemConfig) -> Option<(f64, f64)> {
    let norm = triple.pu.hypot(triple.pv);
    if norm == 0.0 {
        return None;
    }
    let m0 = cfg.nondim_thrust * norm / (1.0 - triple.pv);
    Some((m0, crate::steering::primer_angle(triple.pu, triple.pv)))
}

/// Newton iteration on `{H = 0, dH/dbeta = 0}` at the touchdown state.
fn boundary_newton(triple: &TouchdownTriple, cfg: &ProblemConfig, m_init: f64, beta_init: f64) -> Result<TouchdownBoundary, SamplerError> {
    let TouchdownTriple { pu, pv, .. } = *triple;
    let p = triple.costate();
    let t = cfg.nondim_thrust;
    let weight = regularization(1.0, FRAC_PI_2, &cfg.reg).weight;
    let eval = |m: f64, beta: f64| {
        let x = touchdown_state(m);
        (hamiltonian(&x, &p, beta, cfg), stationarity_residual(&x, &p, beta, cfg))
    };
    let (mut m, mut beta) = (m_init, beta_init);
    let (mut h, mut s) = eval(m, beta);
    for iter in 0..BOUNDARY_MAX_ITER {
        if h.abs() < 0.1 * BOUNDARY_TOL && s.abs() < 0.1 * BOUNDARY_TOL {
            return Ok(TouchdownBoundary { m0_bar: m, beta0_bar: beta, h_residual: h, stationarity_residual: s, iterations: iter });
        }
        let a = t / m;
        let (sb, cb) = beta.sin_cos();
        let along = pu * cb + pv * sb;
        let across = -pu * sb + pv * cb;
        // rows: H, S; columns: m, beta
        let j11 = -a / m * along;
        let j12 = s;
        let j21 = -a / m * across;
        let j22 = -a * along + weight;
        let det = j11 * j22 - j12 * j21;
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(SamplerError::BoundaryDiverged(iter));
        }
        let dm = -(j22 * h - j12 * s) / det;
        let db = -(-j21 * h + j11 * s) / det;
        let merit = h * h + s * s;
        let mut lambda = 1.0;
        loop {
            let (mt, bt) = (m + lambda * dm, beta + lambda * db);
            if mt > 0.0 {
                let (ht, st) = eval(mt, bt);
                if ht * ht + st * st < merit || lambda < 1e-6 {
                    m = mt;
                    beta = bt;
                    h = ht;
                    s = st;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(SamplerError::InfeasibleTouchdown { m0: m + dm });
            }
        }
        if !m.is_finite() || !beta.is_finite() {
            return Err(SamplerError::BoundaryDiverged(iter));
        }
    }
    if h.abs() < BOUNDARY_TOL && s.abs() < BOUNDARY_TOL {
        return Ok(TouchdownBoundary { m0_bar: m, beta0_bar: beta, h_residual: h, stationarity_residual: s, iterations: BOUNDARY_MAX_ITER });
    }
    Err(SamplerError::BoundaryDiverged(BOUNDARY_MAX_ITER))
}

/// Solves the touchdown pair `(m0, beta0)` for a costate triple.
///
/// The iteration starts at `beta = pi/2` with the unconstrained mass. If it
/// lands on a stationary angle that does not minimize the Hamiltonian, it is
/// restarted once from the minimizing angle at that mass.
pub fn touchdown_boundary(triple: &TouchdownTriple, cfg: &ProblemConfig) -> Result<TouchdownBoundary, SamplerError> {
    if !triple.to_array().iter().all(|v| v.is_finite()) {
        return Err(SamplerError::InvalidSpec(format!("non-finite touchdown triple {triple:?}")));
    }
    let Some((m_guess, _)) = unconstrained_touchdown(triple, cfg) else {
        if cfg.reg.delta == 0.0 {
            return Err(SamplerError::Steering(crate::SteeringError::Undefined));
        }
        return Err(SamplerError::InfeasibleTouchdown { m0: f64::NAN });
    };
    if !(m_guess > 0.0) {
        return Err(SamplerError::InfeasibleTouchdown { m0: m_guess });
    }
    let p = triple.costate();
    let mut sol = boundary_newton(triple, cfg, m_guess, FRAC_PI_2)?;
    let optimal = optimal_steering(&touchdown_state(sol.m0_bar), &p, cfg)?.beta;
    if angle_gap(optimal, sol.beta0_bar) > 1e-8 {
        sol = boundary_newton(triple, cfg, sol.m0_bar, optimal)?;
        let optimal = optimal_steering(&touchdown_state(sol.m0_bar), &p, cfg)?.beta;
        if angle_gap(optimal, sol.beta0_bar) > 1e-8 {
            return Err(SamplerError::WrongBranch { found: sol.beta0_bar, optimal });
        }
    }
    sol.beta0_bar = sol.beta0_bar.rem_euclid(std::f64::consts::TAU);
    if !(sol.m0_bar > 0.0) {
        return Err(SamplerError::InfeasibleTouchdown { m0: sol.m0_bar });
    }
    Ok(sol)
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Limits applied while integrating away from touchdown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationLimits {
    /// Radius above which the trajectory is truncated.
    pub radius_cap: Option<f64>,
    /// Mass above which the trajectory is truncated.
    pub mass_cap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    RadiusCap,
    MassCap,
}

#[derive(Clone, Debug)]
pub struct GeneratedTrajectory {
    /// Forward-time trajectory: `t = 0` at the top, touchdown last.
    pub trajectory: Trajectory,
    pub boundary: TouchdownBoundary,
    pub termination: Termination,
}

/// Integrates the necessary conditions in time-to-go from touchdown over
/// `[0, tau_max]` and returns the result in forward time.
pub fn generate_trajectory(
    triple: &TouchdownTriple,
    tau_max: f64,
    cfg: &ProblemConfig,
    limits: &GenerationLimits,
    settings: &IntegratorSettings,
) -> Result<GeneratedTrajectory, SamplerError> {
    if !(tau_max > 0.0) {
        return Err(SamplerError::InvalidSpec(format!("tau_max must be positive, got {tau_max}")));
    }
    let boundary = touchdown_boundary(triple, cfg)?;
    let start = ExtendedState::new(touchdown_state(boundary.m0_bar), triple.costate());
    let sys = LandingSystem::new(cfg, Direction::Backward, Steering::Optimal);

    let below = |x: &State| x.r - (1.0 - SUBSURFACE_MARGIN);
    let radius_cap = limits.radius_cap.unwrap_or(f64::INFINITY);
    let mass_cap = limits.mass_cap.unwrap_or(f64::INFINITY);
    let above = |x: &State| x.r - radius_cap;
    let heavy = |x: &State| x.m - mass_cap;
    let events = [
        Event { g: &below, crossing: Crossing::Falling },
        Event { g: &above, crossing: Crossing::Rising },
        Event { g: &heavy, crossing: Crossing::Rising },
    ];
    let (mut traj, stopped) = propagate_with_events(&sys, &start, (0.0, tau_max), settings, &events)?;
    let tau_end = traj.meta.final_time;
    let termination = match stopped {
        None => Termination::Horizon,
        Some(0) => return Err(SamplerError::SubSurface { tau: tau_end }),
        Some(1) => Termination::RadiusCap,
        Some(_) => Termination::MassCap,
    };
    if traj.nodes.len() < 2 {
        return Err(SamplerError::Propagation(OdeError::Invalid("trajectory stopped at touchdown".into())));
    }
    traj.meta.triple = Some(triple.to_array());
    let trajectory = traj.into_forward_time(tau_end);
    Ok(GeneratedTrajectory { trajectory, boundary, termination })
}

/// Relative half-width of the default sampling box. The backward flow is
/// strongly unstable over a full descent: at 1e-5 the states at the nominal
/// flight time spread by a few hundred metres and metres per second, at 1e-3
/// many trajectories leave the altitude cap early or hit the ground, while
/// the last few hundred metres barely spread at all below 1e-3.
pub const DEFAULT_RADIUS_FRACTION: f64 = 1e-3;
/// Draws shrink the box log-uniformly by up to this many decades, so the
/// data cover both the upper descent (small boxes) and the final approach
/// (large boxes).
pub const DEFAULT_SCALE_DECADES: f64 = 2.0;

/// How triples are drawn and trajectories integrated for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub nominal_triple: TouchdownTriple,
    /// Half-widths of the uniform box around the nominal triple.
    pub perturbation_radii: [f64; 3],
    /// When positive, each draw shrinks the box by `10^-U(0, scale_decades)`.
    #[serde(default)]
    pub scale_decades: f64,
    pub count: usize,
    pub tau_max: f64,
    pub rng_seed: u64,
    pub limits: GenerationLimits,
    pub integrator: IntegratorSettings,
}

impl SamplingSpec {
    /// Defaults around a nominal solution: radii at [`DEFAULT_RADIUS_FRACTION`]
    /// of each triple component, horizon at 1.2 times the nominal flight
    /// time, truncation at 1.15 times the nominal initial altitude, and nodes
    /// on a uniform 200-interval grid.
    pub fn around_nominal(nominal_triple: TouchdownTriple, nominal_tf: f64, nominal_x0: &State, count: usize, rng_seed: u64) -> Self {
        Self {
            nominal_triple,
            perturbation_radii: nominal_triple.to_array().map(|c| DEFAULT_RADIUS_FRACTION * c.abs()),
            scale_decades: DEFAULT_SCALE_DECADES,
            count,
            tau_max: 1.2 * nominal_tf,
            rng_seed,
            limits: GenerationLimits { radius_cap: Some(1.0 + 1.15 * (nominal_x0.r - 1.0)), mass_cap: None },
            integrator: IntegratorSettings { emit_step_endpoints: false, ..IntegratorSettings::default() },
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.count == 0 {
            return Err(SamplerError::InvalidSpec("count must be at least 1".into()));
        }
        if self.perturbation_radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(SamplerError::InvalidSpec(format!("radii must be finite and >= 0: {:?}", self.perturbation_radii)));
        }
        if !(self.scale_decades >= 0.0 && self.scale_decades.is_finite()) {
            return Err(SamplerError::InvalidSpec(format!("scale_decades must be finite and >= 0, got {}", self.scale_decades)));
        }
        if !(self.tau_max > 0.0) {
            return Err(SamplerError::InvalidSpec(format!("tau_max must be positive, got {}", self.tau_max)));
        }
        self.integrator.validate().map_err(SamplerError::Propagation)
    }

    /// The `count` triples in draw order.
    pub fn draw_triples(&self) -> Vec<TouchdownTriple> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let c = self.nominal_triple.to_array();
        (0..self.count)
            .map(|_| {
                let shrink = if self.scale_decades > 0.0 { 10f64.powf(-rng.gen_range(0.0..self.scale_decades)) } else { 1.0 };
                let v: [f64; 3] = std::array::from_fn(|i| {
                    let r = shrink * self.perturbation_radii[i];
                    if r == 0.0 {
                        c[i]
                    } else {
                        c[i] + rng.gen_range(-r..=r)
                    }
                });
                TouchdownTriple::new(v[0], v[1], v[2])
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub traj_id: usize,
    /// Forward time within its trajectory.
    pub t: f64,
    pub x: State,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub traj_id: usize,
    pub triple: TouchdownTriple,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Shuffles `0..n` and cuts it 70/15/15.
    pub fn seeded(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 70 / 100;
        let n_val = n * 15 / 100;
        let test = idx.split_off(n_train + n_val);
        let validation = idx.split_off(n_train);
        Self { train: idx, validation, test }
    }
}

/// Metadata written next to the dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub spec: SamplingSpec,
    pub config_hash: String,
    pub accepted: Vec<usize>,
    pub rejections: Vec<Rejection>,
    pub splits: Splits,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub sidecar: DatasetSidecar,
    /// Generated trajectories in triple order; not persisted.
    pub trajectories: Vec<Trajectory>,
}

pub const DATASET_CSV_HEADER: &str = "traj_id,t,r,u,v,m,beta";

/// Generates every triple of `spec` (in parallel, merged in triple order),
/// collects the state/angle pairs and splits them.
pub fn build_dataset(spec: &SamplingSpec, cfg: &ProblemConfig) -> Result<Dataset, SamplerError> {
    spec.validate()?;
    let triples = spec.draw_triples();
    let outcomes: Vec<Result<GeneratedTrajectory, SamplerError>> = triples
        .par_iter()
        .map(|t| generate_trajectory(t, spec.tau_max, cfg, &spec.limits, &spec.integrator))
        .collect();

    let mut samples = Vec::new();
    let mut trajectories = Vec::new();
    let mut accepted = Vec::new();
    let mut rejections = Vec::new();
    for (id, (triple, outcome)) in triples.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(g) => {
                samples.extend(g.trajectory.nodes.iter().map(|n| Sample { traj_id: id, t: n.t, x: n.x, beta: n.beta }));
                trajectories.push(g.trajectory);
                accepted.push(id);
            }
            Err(e) => {
                log::warn!("triple {id} rejected: {e}");
                rejections.push(Rejection { traj_id: id, triple: *triple, reason: e.to_string() });
            }
        }
    }
    if 2 * rejections.len() > triples.len() {
        return Err(SamplerError::RejectionRate { rejected: rejections.len(), total: triples.len() });
    }
    let splits = Splits::seeded(samples.len(), spec.rng_seed.wrapping_add(1));
    let sidecar = DatasetSidecar { spec: spec.clone(), config_hash: cfg.hash(), accepted, rejections, splits };
    Ok(Dataset { samples, sidecar, trajectories })
}

impl Dataset {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{DATASET_CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(w, "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", s.traj_id, s.t, s.x.r, s.x.u, s.x.v, s.x.m, s.beta)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<Sample>, String> {
        let mut lines = r.lines();
        let header = lines.next().ok_or("empty dataset file")?.map_err(|e| e.to_string())?;
        if header.trim() != DATASET_CSV_HEADER {
            return Err(format!("unexpected dataset header: {header}"));
        }
        let mut out = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields, found {}", k + 2, f.len()));
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|e| format!("line {}: {e}", k + 2));
            let traj_id = f[0].trim().parse::<usize>().map_err(|e| format!("line {}: {e}", k + 2))?;
            out.push(Sample { traj_id, t: num(1)?, x: State::new(num(2)?, num(3)?, num(4)?, num(5)?), beta: num(6)? });
        }
        Ok(out)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(csv))?;
        let json = serde_json::to_string_pretty(&self.sidecar).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)
    }

    /// Reads a dataset written by [`Dataset::save`]; trajectories are not restored.
    pub fn load(dir: &Path, stem: &str) -> Result<Self, String> {
        let csv = std::fs::File::open(dir.join(format!("{stem}.csv"))).map_err(|e| e.to_string())?;
        let samples = Self::read_csv(std::io::BufReader::new(csv))?;
        let json = std::fs::read_to_string(dir.join(format!("{stem}.json"))).map_err(|e| e.to_string())?;
        let sidecar: DatasetSidecar = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        let n = samples.len();
        let s = &sidecar.splits;
        if s.train.len() + s.validation.len() + s.test.len() != n || s.train.iter().chain(&s.validation).chain(&s.test).any(|&i| i >= n) {
            return Err(format!("split indices do not match the {n} samples"));
        }
        Ok(Self { samples, sidecar, trajectories: Vec::new() })
    }

    pub fn split_samples(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| self.samples[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odeint::{propagate_final, Direction};
    use crate::steering::primer_angle;
    use rand::Rng;

    // touchdown costates of converged nominal solves
    const UNCONSTRAINED: TouchdownTriple = TouchdownTriple::new(0.690_592_301_291_946_6, 0.366_664_764_045_068_65, -0.238_199_858_116_499_07);
    const UNCONSTRAINED_TF: f64 = 0.518_855_761_212_409_6;
    const REGULARIZED: TouchdownTriple = TouchdownTriple::new(135.727_690_322_262_9, 0.365_416_726_148_308_4, -0.543_334_497_354_558_5);
    const REGULARIZED_TF: f64 = 0.520_527_5;

    fn cfg(delta: f64) -> ProblemConfig {
        ProblemConfig::lunar_default().with_delta(delta).unwrap()
    }

    #[test]
    fn unconstrained_boundary_matches_closed_form() {
        let c = cfg(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let t = TouchdownTriple::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..0.9));
            let (m, beta) = unconstrained_touchdown(&t, &c).unwrap();
            let b = touchdown_boundary(&t, &c).unwrap();
            assert!((b.m0_bar - m).abs() < 1e-10, "{t:?}: {} vs {m}", b.m0_bar);
            assert!(angle_gap(b.beta0_bar, beta) < 1e-10);
            assert!(b.h_residual.abs() < BOUNDARY_TOL && b.stationarity_residual.abs() < BOUNDARY_TOL);
        }
    }

    #[test]
    fn radial_primer_symmetry() {
        let c = cfg(0.0);
        let t = TouchdownTriple::new(0.3, 0.0, -0.7);
        let b = touchdown_boundary(&t, &c).unwrap();
        assert_eq!(b.beta0_bar, FRAC_PI_2);
        assert!((b.m0_bar - c.nondim_thrust * 0.7 / 1.7).abs() < 1e-14);
    }

    #[test]
    fn regularized_boundary_is_nearly_vertical() {
        let c = cfg(1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t = TouchdownTriple::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..-0.2));
            let b = match touchdown_boundary(&t, &c) {
                Ok(b) => b,
                Err(SamplerError::InfeasibleTouchdown { .. }) => continue,
                Err(e) => panic!("{t:?}: {e}"),
            };
            assert!((b.beta0_bar - FRAC_PI_2).abs() < 1e-2, "{t:?}: {}", b.beta0_bar);
            assert!(b.h_residual.abs() < BOUNDARY_TOL && b.stationarity_residual.abs() < BOUNDARY_TOL);
        }
    }

    #[test]
    fn regularized_boundary_agrees_with_grid_search() {
        let c = cfg(1e-5);
        let t = REGULARIZED;
        let b = touchdown_boundary(&t, &c).unwrap();
        let p = t.costate();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            let m = 0.3 + 0.5 * i as f64 / 400.0;
            for j in 0..=400 {
                let beta = FRAC_PI_2 - 0.05 + 0.1 * j as f64 / 400.0;
                let x = touchdown_state(m);
                let h = hamiltonian(&x, &p, beta, &c);
                let s = stationarity_residual(&x, &p, beta, &c);
                let merit = h.abs() + s.abs() / 1e3;
                if merit < best.0 {
                    best = (merit, m, beta);
                }
            }
        }
        assert!((best.1 - b.m0_bar).abs() < 2.0 * 0.5 / 400.0, "{best:?} vs {b:?}");
        assert!((best.2 - b.beta0_bar).abs() < 2.0 * 0.1 / 400.0);
    }

    #[test]
    fn infeasible_touchdown_is_rejected() {
        let c = cfg(0.0);
        assert!(matches!(
            touchdown_boundary(&TouchdownTriple::new(0.1, 0.2, 1.5), &c),
            Err(SamplerError::InfeasibleTouchdown { .. })
        ));
        assert!(matches!(touchdown_boundary(&TouchdownTriple::new(0.1, 0.0, 0.0), &c), Err(SamplerError::Steering(_))));
    }

    fn check_trajectory(g: &GeneratedTrajectory, c: &ProblemConfig) {
        let n = &g.trajectory.nodes;
        let end = n.last().unwrap();
        assert_eq!([end.x.r, end.x.u, end.x.v], [1.0, 0.0, 0.0]);
        assert_eq!(end.p.pm, 0.0);
        assert_eq!(n[0].t, 0.0);
        assert!(n.windows(2).all(|w| w[1].t > w[0].t));
        assert!(g.trajectory.max_abs_h() < 1e-6);
        for q in n {
            assert!(stationarity_residual(&q.x, &q.p, q.beta, c).abs() < 1e-9);
        }
    }

    #[test]
    fn unconstrained_trajectory_round_trip() {
        let c = cfg(0.0);
        let g = generate_trajectory(&UNCONSTRAINED, UNCONSTRAINED_TF, &c, &GenerationLimits::default(), &IntegratorSettings::default()).unwrap();
        assert_eq!(g.termination, Termination::Horizon);
        check_trajectory(&g, &c);
        // the t = 0 end is the nominal initial state
        let top = g.trajectory.first().unwrap();
        let x0 = c.scaling.nondimensionalize(&crate::DimensionalState { r_m: 1.753e6, u_ms: 1679.5, v_ms: 0.0, m_kg: 600.0 });
        for (a, b) in top.x.to_array().iter().zip(x0.to_array()) {
            assert!((a - b).abs() < 1e-6, "{:?} vs {x0:?}", top.x);
        }
        let sys = LandingSystem::new(&c, Direction::Forward, Steering::Optimal);
        let e = propagate_final(&sys, &ExtendedState::new(top.x, top.p), (0.0, g.trajectory.duration()), &IntegratorSettings::default()).unwrap();
        assert!((e.x.r - 1.0).abs() < 1e-6 && e.x.u.abs() < 1e-6 && e.x.v.abs() < 1e-6, "{:?}", e.x);
        // primer steering throughout
        for q in &g.trajectory.nodes {
            assert!(angle_gap(q.beta, primer_angle(q.p.pu, q.p.pv)) < 1e-8);
        }
    }

    #[test]
    fn regularized_trajectory_lands_vertically() {
        let c = cfg(1e-5);
        let g = generate_trajectory(&REGULARIZED, REGULARIZED_TF, &c, &GenerationLimits::default(), &IntegratorSettings::default()).unwrap();
        check_trajectory(&g, &c);
        let end = g.trajectory.last().unwrap();
        assert!((end.beta - FRAC_PI_2).abs() < 1e-2);
        let top = g.trajectory.first().unwrap();
        let sys = LandingSystem::new(&c, Direction::Forward, Steering::Optimal);
        let e = propagate_final(&sys, &ExtendedState::new(top.x, top.p), (0.0, g.trajectory.duration()), &IntegratorSettings::default()).unwrap();
        assert!((e.x.r - 1.0).abs() < 1e-6 && e.x.u.abs() < 1e-6 && e.x.v.abs() < 1e-6, "{:?}", e.x);
    }

    #[test]
    fn caps_truncate_and_dips_reject() {
        let c = cfg(0.0);
        let limits = GenerationLimits { radius_cap: Some(1.0 + 1e-3), mass_cap: None };
        let g = generate_trajectory(&UNCONSTRAINED, UNCONSTRAINED_TF, &c, &limits, &IntegratorSettings::default()).unwrap();
        assert_eq!(g.termination, Termination::RadiusCap);
        assert!((g.trajectory.first().unwrap().x.r - (1.0 + 1e-3)).abs() < 1e-9);

        let limits = GenerationLimits { radius_cap: None, mass_cap: Some(0.7) };
        let g = generate_trajectory(&UNCONSTRAINED, UNCONSTRAINED_TF, &c, &limits, &IntegratorSettings::default()).unwrap();
        assert_eq!(g.termination, Termination::MassCap);
        assert!((g.trajectory.first().unwrap().x.m - 0.7).abs() < 1e-9);

        let steep = TouchdownTriple::new(2.0, UNCONSTRAINED.pu, UNCONSTRAINED.pv);
        let err = generate_trajectory(&steep, UNCONSTRAINED_TF, &c, &GenerationLimits::default(), &IntegratorSettings::default());
        assert!(matches!(err, Err(SamplerError::SubSurface { .. })), "{err:?}");
    }

    fn small_spec(count: usize, fraction: f64) -> SamplingSpec {
        let x0 = State::new(1753.0 / 1738.0, 1.0, 0.0, 1.0);
        let mut spec = SamplingSpec::around_nominal(UNCONSTRAINED, UNCONSTRAINED_TF, &x0, count, 11);
        spec.perturbation_radii = UNCONSTRAINED.to_array().map(|v| fraction * v.abs());
        spec
    }

    #[test]
    fn single_unperturbed_sample_is_the_nominal() {
        let c = cfg(0.0);
        let spec = small_spec(1, 0.0);
        let ds = build_dataset(&spec, &c).unwrap();
        let g = generate_trajectory(&UNCONSTRAINED, spec.tau_max, &c, &spec.limits, &spec.integrator).unwrap();
        assert_eq!(ds.samples.len(), g.trajectory.nodes.len());
        for (s, n) in ds.samples.iter().zip(&g.trajectory.nodes) {
            assert_eq!((s.x, s.beta, s.t), (n.x, n.beta, n.t));
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let s = Splits::seeded(1000, 1);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (700, 150, 150));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(s, Splits::seeded(1000, 1));
        assert_ne!(s, Splits::seeded(1000, 2));
    }

    #[test]
    fn dataset_is_deterministic_and_round_trips() {
        let c = cfg(0.0);
        let spec = small_spec(12, 1e-4);
        let a = build_dataset(&spec, &c).unwrap();
        let b = build_dataset(&spec, &c).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.sidecar, b.sidecar);
        assert_eq!(a.sidecar.accepted.len(), 12);

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), "ds").unwrap();
        let back = Dataset::load(dir.path(), "ds").unwrap();
        assert_eq!(back.sidecar, a.sidecar);
        for (x, y) in back.samples.iter().zip(&a.samples) {
            assert_eq!(x.traj_id, y.traj_id);
            for (u, v) in x.x.to_array().iter().zip(y.x.to_array()) {
                assert!((u - v).abs() < 1e-6);
            }
            assert!((x.beta - y.beta).abs() < 1e-6);
        }
        for t in &a.trajectories {
            for q in &t.nodes {
                assert!(stationarity_residual(&q.x, &q.p, q.beta, &c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn excessive_rejection_is_an_error() {
        let c = cfg(0.0);
        let mut spec = small_spec(20, 0.0);
        // p_v > 1 everywhere: no feasible touchdown mass
        spec.nominal_triple.pv = 2.0;
        assert!(matches!(build_dataset(&spec, &c), Err(SamplerError::RejectionRate { rejected: 20, total: 20 })));
    }

    #[test]
    fn truncated_dataset_file_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.csv"), format!("{DATASET_CSV_HEADER}\n0,1.0,1.0\n")).unwrap();
        std::fs::write(dir.path().join("x.json"), "{}").unwrap();
        assert!(Dataset::load(dir.path(), "x").is_err());
    }
}
