//! Dormand–Prince 5(4) propagation of the coupled state/costate system.
//!
//! The integrator itself is generic over a fixed-size state; the landing
//! system adds steering resolution, node emission on a uniform grid plus step
//! endpoints, and terminal events located on the dense-output polynomial.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{costate_rhs, hamiltonian, regularization_term, state_rhs, ExtendedState};
use crate::error::{DynamicsError, OdeError};
use crate::problem::{Costate, ProblemConfig, State};
use crate::steering::optimal_beta;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step in integration time.
    pub max_step: f64,
    /// Uniform node spacing; `None` means one two-hundredth of the span.
    pub dense_output_dt: Option<f64>,
    /// Also emit a node at every accepted step.
    pub emit_step_endpoints: bool,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            dense_output_dt: None,
            emit_step_endpoints: true,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<(), OdeError> {
        for (name, tol) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(tol > 0.0 && tol <= 1e-2) {
                return Err(OdeError::Invalid(format!("{name} must lie in (0, 1e-2], got {tol}")));
            }
        }
        if !(self.max_step > 0.0) {
            return Err(OdeError::Invalid(format!("max_step must be positive, got {}", self.max_step)));
        }
        if let Some(dt) = self.dense_output_dt {
            if !(dt > 0.0) {
                return Err(OdeError::Invalid(format!("dense_output_dt must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

// Dormand–Prince tableau.
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const PI_BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Continuous extension of one accepted step.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t1 {
            return self.y1;
        }
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        std::array::from_fn(|i| r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i]))))
    }
}

/// What the step callback asks of the integrator.
pub enum StepControl<const N: usize> {
    Continue,
    Stop { t: f64, y: [f64; N] },
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

fn initial_step<const N: usize, F>(
    f: &mut F,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    s: &IntegratorSettings,
    span: f64,
) -> Result<f64, OdeError>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], OdeError>,
{
    let sk: [f64; N] = std::array::from_fn(|i| s.abs_tol + s.rel_tol * y0[i].abs());
    let dnf: f64 = (0..N).map(|i| (f0[i] / sk[i]).powi(2)).sum();
    let dny: f64 = (0..N).map(|i| (y0[i] / sk[i]).powi(2)).sum();
    let hmax = s.max_step.min(span);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
    h = h.min(hmax);
    let y1 = axpy(y0, h, &[(1.0, f0)]);
    let f1 = f(t0 + h, &y1)?;
    let der2 = (0..N).map(|i| ((f1[i] - f0[i]) / sk[i]).powi(2)).sum::<f64>().sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    Ok((100.0 * h).min(h1).min(hmax))
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end > t0`.
///
/// `on_step` sees every accepted step and may stop the integration at any
/// point inside it. Returns the final time and state.
pub fn integrate<const N: usize, F, S>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    settings: &IntegratorSettings,
    mut on_step: S,
) -> Result<(f64, [f64; N]), OdeError>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], OdeError>,
    S: FnMut(&DenseStep<N>) -> Result<StepControl<N>, OdeError>,
{
    settings.validate()?;
    if !(t_end > t0) {
        return if t_end == t0 { Ok((t0, y0)) } else { Err(OdeError::Invalid(format!("t_end {t_end} < t0 {t0}"))) };
    }
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y)?;
    let mut h = initial_step(&mut f, t, &y, &k1, settings, t_end - t0)?;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let expo = 0.2 - PI_BETA * 0.75;

    for _ in 0..settings.max_steps {
        if t_end - t <= 1e-15 * t_end.abs().max(1.0) {
            return Ok((t, y));
        }
        let mut last = false;
        if t + 1.01 * h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h < 1e-15 * t.abs().max(1.0) {
            return Err(OdeError::StepSizeUnderflow { t });
        }

        let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]))?;
        let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(t + C5 * h, &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = f(t + h, &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t_end } else { t + h };
        let k7 = f(t_new, &y_new)?;

        let err = ((0..N)
            .map(|i| {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sk = settings.abs_tol + settings.rel_tol * y[i].abs().max(y_new[i].abs());
                (e / sk).powi(2)
            })
            .sum::<f64>()
            / N as f64)
            .sqrt();
        if !err.is_finite() {
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(expo);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            fac_old = err.max(1e-4);

            let ydiff: [f64; N] = std::array::from_fn(|i| y_new[i] - y[i]);
            let bspl: [f64; N] = std::array::from_fn(|i| h * k1[i] - ydiff[i]);
            let dense = DenseStep {
                t0: t,
                t1: t_new,
                y0: y,
                y1: y_new,
                rcont: [
                    y,
                    ydiff,
                    bspl,
                    std::array::from_fn(|i| ydiff[i] - h * k7[i] - bspl[i]),
                    std::array::from_fn(|i| {
                        h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                    }),
                ],
            };
            if let StepControl::Stop { t: ts, y: ys } = on_step(&dense)? {
                return Ok((ts, ys));
            }
            k1 = k7;
            t = t_new;
            y = y_new;
            if last {
                return Ok((t, y));
            }
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new.min(settings.max_step);
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
    Err(OdeError::MaxSteps(settings.max_steps))
}

/// Sense of the integration variable relative to physical time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Integration variable is physical time.
    Forward,
    /// Integration variable is time-to-go: states and costates run in reverse.
    Backward,
}

/// How the steering angle is obtained at each derivative evaluation.
#[derive(Clone, Copy)]
pub enum Steering<'a> {
    /// Hamiltonian-minimizing angle from the current state and costate.
    Optimal,
    Fixed(f64),
    /// Prescribed angle as a function of the integration variable.
    Schedule(&'a (dyn Fn(f64) -> f64 + Sync)),
}

/// The nine-dimensional state/costate/cost system.
#[derive(Clone, Copy)]
pub struct LandingSystem<'a> {
    pub cfg: &'a ProblemConfig,
    pub direction: Direction,
    pub steering: Steering<'a>,
}

impl<'a> LandingSystem<'a> {
    pub fn new(cfg: &'a ProblemConfig, direction: Direction, steering: Steering<'a>) -> Self {
        Self { cfg, direction, steering }
    }

    pub fn beta(&self, t: f64, x: &State, p: &Costate) -> Result<f64, OdeError> {
        match self.steering {
            Steering::Optimal => optimal_beta(x, p, self.cfg).map_err(|source| OdeError::Steering { t, source }),
            Steering::Fixed(b) => Ok(b),
            Steering::Schedule(f) => Ok(f(t)),
        }
    }

    pub fn rhs(&self, t: f64, y: &[f64; 9]) -> Result<[f64; 9], OdeError> {
        let x = State::from_slice(&y[0..4]);
        let p = Costate::from_slice(&y[4..8]);
        let beta = self.beta(t, &x, &p)?;
        let nf = |_: DynamicsError| OdeError::NonFinite { t };
        let dx = state_rhs(&x, beta, self.cfg).map_err(nf)?;
        let dp = costate_rhs(&x, &p, beta, self.cfg).map_err(nf)?;
        let dcost = 1.0 + regularization_term(x.r, beta, &self.cfg.reg);
        let s = match self.direction {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        };
        Ok([
            s * dx.r,
            s * dx.u,
            s * dx.v,
            s * dx.m,
            s * dp.pr,
            s * dp.pu,
            s * dp.pv,
            s * dp.pm,
            dcost,
        ])
    }

    pub fn node(&self, t: f64, y: &[f64; 9]) -> Result<TrajectoryNode, OdeError> {
        let x = State::from_slice(&y[0..4]);
        let p = Costate::from_slice(&y[4..8]);
        let beta = self.beta(t, &x, &p)?;
        Ok(TrajectoryNode {
            t,
            x,
            p,
            beta,
            h: hamiltonian(&x, &p, beta, self.cfg),
            delta_term: regularization_term(x.r, beta, &self.cfg.reg),
            cost: y[8],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryNode {
    pub t: f64,
    pub x: State,
    pub p: Costate,
    pub beta: f64,
    pub h: f64,
    pub delta_term: f64,
    /// Augmented cost accumulated since the start of the integration.
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// Touchdown costates the trajectory was generated from, if any.
    pub triple: Option<[f64; 3]>,
    pub final_time: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub nodes: Vec<TrajectoryNode>,
    pub meta: TrajectoryMeta,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,r,u,v,m,pr,pu,pv,pm,beta,H,delta_term";

impl Trajectory {
    pub fn first(&self) -> Option<&TrajectoryNode> {
        self.nodes.first()
    }

    pub fn last(&self) -> Option<&TrajectoryNode> {
        self.nodes.last()
    }

    pub fn duration(&self) -> f64 {
        match (self.nodes.first(), self.nodes.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn max_abs_h(&self) -> f64 {
        self.nodes.iter().map(|n| n.h.abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAJECTORY_CSV_HEADER}")?;
        for n in &self.nodes {
            let vals = [
                n.t, n.x.r, n.x.u, n.x.v, n.x.m, n.p.pr, n.p.pu, n.p.pv, n.p.pm, n.beta, n.h, n.delta_term,
            ];
            let line: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Parses the CSV written by [`Trajectory::write_csv`]. Costs are not
    /// stored in the file and come back as NaN.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, String> {
        let mut lines = r.lines();
        let header = lines.next().ok_or("empty trajectory file")?.map_err(|e| e.to_string())?;
        if header.trim() != TRAJECTORY_CSV_HEADER {
            return Err(format!("unexpected header '{}'", header.trim()));
        }
        let mut nodes = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 2))?;
            if vals.len() != 12 {
                return Err(format!("line {}: expected 12 columns, found {}", i + 2, vals.len()));
            }
            nodes.push(TrajectoryNode {
                t: vals[0],
                x: State::from_slice(&vals[1..5]),
                p: Costate::from_slice(&vals[5..9]),
                beta: vals[9],
                h: vals[10],
                delta_term: vals[11],
                cost: f64::NAN,
            });
        }
        let final_time = nodes.last().map_or(0.0, |n| n.t);
        Ok(Self { nodes, meta: TrajectoryMeta { final_time, ..Default::default() } })
    }

    /// Converts a time-to-go trajectory into physical time `t = total - tau`,
    /// reversing node order. Costs are re-based to run forward from zero.
    pub fn into_forward_time(mut self, total: f64) -> Self {
        let total_cost = self.nodes.last().map_or(0.0, |n| n.cost);
        self.nodes.reverse();
        for n in &mut self.nodes {
            n.t = total - n.t;
            n.cost = total_cost - n.cost;
        }
        // the end point lands exactly on zero
        if let Some(first) = self.nodes.first_mut() {
            first.t = 0.0;
        }
        self.meta.final_time = total;
        self
    }
}

/// Which way an event function has to cross zero to fire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Crossing {
    /// From positive to non-positive.
    Falling,
    /// From negative to non-negative.
    Rising,
    Either,
}

impl Crossing {
    fn fired(self, before: f64, after: f64) -> bool {
        match self {
            Crossing::Falling => before > 0.0 && after <= 0.0,
            Crossing::Rising => before < 0.0 && after >= 0.0,
            Crossing::Either => (before > 0.0 && after <= 0.0) || (before < 0.0 && after >= 0.0),
        }
    }

    fn already(self, g0: f64) -> bool {
        match self {
            Crossing::Falling => g0 <= 0.0,
            Crossing::Rising => g0 >= 0.0,
            Crossing::Either => g0 == 0.0,
        }
    }
}

/// Terminal condition on the physical state.
pub struct Event<'a> {
    pub g: &'a dyn Fn(&State) -> f64,
    pub crossing: Crossing,
}

pub const EVENT_TOL: f64 = 1e-10;

fn state_of(y: &[f64; 9]) -> State {
    State::from_slice(&y[0..4])
}

/// Earliest event inside a step, located by bisection on the dense output.
fn locate_event(step: &DenseStep<9>, events: &[Event<'_>]) -> Option<(usize, f64, [f64; 9])> {
    let mut found: Option<(usize, f64, [f64; 9])> = None;
    for (idx, ev) in events.iter().enumerate() {
        let g0 = (ev.g)(&state_of(&step.y0));
        let g1 = (ev.g)(&state_of(&step.y1));
        if !ev.crossing.fired(g0, g1) {
            continue;
        }
        let (mut lo, mut hi) = (step.t0, step.t1);
        let mut g_lo = g0;
        let mut best = (step.t1, step.y1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let y_mid = step.eval(mid);
            let g_mid = (ev.g)(&state_of(&y_mid));
            if g_mid.abs() < EVENT_TOL {
                best = (mid, y_mid);
                break;
            }
            if ev.crossing.fired(g_lo, g_mid) {
                hi = mid;
                best = (mid, y_mid);
            } else {
                lo = mid;
                g_lo = g_mid;
            }
        }
        if found.as_ref().is_none_or(|f| best.0 < f.1) {
            found = Some((idx, best.0, best.1));
        }
    }
    found
}

fn emit_grid(
    sys: &LandingSystem<'_>,
    step: &DenseStep<9>,
    t_origin: f64,
    dt: f64,
    next_k: &mut u64,
    upto: f64,
    nodes: &mut Vec<TrajectoryNode>,
) -> Result<(), OdeError> {
    loop {
        let tg = t_origin + *next_k as f64 * dt;
        if tg > upto {
            return Ok(());
        }
        *next_k += 1;
        let last_t = nodes.last().map_or(f64::NEG_INFINITY, |n| n.t);
        if tg - last_t > 1e-13 * tg.abs().max(1.0) {
            nodes.push(sys.node(tg, &step.eval(tg))?);
        }
    }
}

fn push_node(sys: &LandingSystem<'_>, t: f64, y: &[f64; 9], nodes: &mut Vec<TrajectoryNode>) -> Result<(), OdeError> {
    let last_t = nodes.last().map_or(f64::NEG_INFINITY, |n| n.t);
    if t - last_t > 1e-13 * t.abs().max(1.0) {
        nodes.push(sys.node(t, y)?);
    } else if let Some(last) = nodes.last_mut() {
        // an endpoint coinciding with a grid node replaces it
        *last = sys.node(t, y)?;
    }
    Ok(())
}

/// Propagates with node emission and optional terminal events.
///
/// Returns the trajectory (in integration time) and the index of the event
/// that stopped it, if any.
pub fn propagate_with_events(
    sys: &LandingSystem<'_>,
    start: &ExtendedState,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
    events: &[Event<'_>],
) -> Result<(Trajectory, Option<usize>), OdeError> {
    let (t0, t1) = t_span;
    let y0 = start.to_array();
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(OdeError::NonFinite { t: t0 });
    }
    let meta = TrajectoryMeta { final_time: t0, config_hash: sys.cfg.hash(), ..Default::default() };
    let mut nodes = vec![sys.node(t0, &y0)?];
    for (idx, ev) in events.iter().enumerate() {
        if ev.crossing.already((ev.g)(&start.x)) {
            return Ok((Trajectory { nodes, meta }, Some(idx)));
        }
    }
    let dt = settings.dense_output_dt.unwrap_or((t1 - t0) / 200.0);
    let mut next_k = 1u64;
    let mut stopped_by = None;

    let (t_final, y_final) = integrate(
        |t, y| sys.rhs(t, y),
        t0,
        y0,
        t1,
        settings,
        |step| {
            if let Some((idx, te, ye)) = locate_event(step, events) {
                emit_grid(sys, step, t0, dt, &mut next_k, te, &mut nodes)?;
                push_node(sys, te, &ye, &mut nodes)?;
                stopped_by = Some(idx);
                return Ok(StepControl::Stop { t: te, y: ye });
            }
            emit_grid(sys, step, t0, dt, &mut next_k, step.t1, &mut nodes)?;
            if settings.emit_step_endpoints {
                push_node(sys, step.t1, &step.y1, &mut nodes)?;
            }
            Ok(StepControl::Continue)
        },
    )?;
    push_node(sys, t_final, &y_final, &mut nodes)?;
    let meta = TrajectoryMeta { final_time: t_final, ..meta };
    Ok((Trajectory { nodes, meta }, stopped_by))
}

/// Propagates over `t_span`, emitting nodes.
pub fn propagate(
    sys: &LandingSystem<'_>,
    start: &ExtendedState,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<Trajectory, OdeError> {
    propagate_with_events(sys, start, t_span, settings, &[]).map(|(traj, _)| traj)
}

/// Propagates until `event` crosses zero in the given sense. Fails with
/// [`OdeError::EventTimeout`] (carrying the partial trajectory) if the end of
/// `t_span` is reached first.
pub fn propagate_to_event(
    sys: &LandingSystem<'_>,
    start: &ExtendedState,
    event: &dyn Fn(&State) -> f64,
    crossing: Crossing,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<Trajectory, OdeError> {
    let events = [Event { g: event, crossing }];
    match propagate_with_events(sys, start, t_span, settings, &events)? {
        (traj, Some(_)) => Ok(traj),
        (traj, None) => Err(OdeError::EventTimeout { t_end: t_span.1, partial: Box::new(traj) }),
    }
}

/// Final extended state only; no nodes are built.
pub fn propagate_final(
    sys: &LandingSystem<'_>,
    start: &ExtendedState,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<ExtendedState, OdeError> {
    let (_, y) = integrate(|t, y| sys.rhs(t, y), t_span.0, start.to_array(), t_span.1, settings, |_| {
        Ok(StepControl::Continue)
    })?;
    Ok(ExtendedState::from_array(&y))
}
