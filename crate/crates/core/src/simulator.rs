//! Closed-loop flights under a steering law, stopped at an altitude gate.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{state_rhs, ExtendedState};
use crate::error::{OdeError, SimError};
use crate::mlp::MlpModel;
use crate::odeint::{integrate, propagate_with_events, Crossing, DenseStep, Direction, Event, IntegratorSettings, LandingSystem, Steering, StepControl, Trajectory};
use crate::problem::{Costate, ProblemConfig, State};

pub const DEFAULT_GATE_ALTITUDE_M: f64 = 5.0;
pub const DEFAULT_CONTROL_DT_S: f64 = 0.1;
pub const FLIGHT_LOG_CSV_HEADER: &str = "t_s,altitude_m,u_ms,v_ms,mass_kg,beta_deg";

/// A steering law: angle (rad) from nondimensional time and state.
pub trait Guidance {
    fn command(&self, t: f64, x: &State) -> f64;
    fn source(&self) -> FlightSource;
}

pub struct NnGuidance<'a>(pub &'a MlpModel);

impl Guidance for NnGuidance<'_> {
    fn command(&self, _t: f64, x: &State) -> f64 {
        self.0.forward(x)
    }

    fn source(&self) -> FlightSource {
        FlightSource::Nn
    }
}

/// Piecewise-linear angle schedule in time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleGuidance {
    pub times: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ScheduleGuidance {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self { times: traj.nodes.iter().map(|n| n.t).collect(), betas: traj.nodes.iter().map(|n| n.beta).collect() }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.betas[0];
        }
        if k == self.times.len() {
            return *self.betas.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.betas[k - 1] + w * (self.betas[k] - self.betas[k - 1])
    }
}

impl Guidance for ScheduleGuidance {
    fn command(&self, t: f64, _x: &State) -> f64 {
        self.at(t)
    }

    fn source(&self) -> FlightSource {
        FlightSource::Schedule
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightSource {
    Nn,
    OpenLoopOptimal,
    Schedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightSample {
    pub t: f64,
    pub x: State,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalSummary {
    pub flight_time_s: f64,
    pub altitude_m: f64,
    pub u_ms: f64,
    pub v_ms: f64,
    pub mass_kg: f64,
    pub fuel_kg: f64,
    pub beta_deg: f64,
}

/// Samples at every command update plus the terminal point. `beta` of the
/// terminal sample is the command the law issues at the terminal state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightLog {
    pub source: FlightSource,
    pub x0: State,
    pub samples: Vec<FlightSample>,
    pub terminal: TerminalSummary,
    /// Commands that fell outside [0, 2pi] and were clamped.
    pub clamped_commands: usize,
    pub config_hash: String,
}

impl FlightLog {
    pub fn write_csv<W: Write>(&self, mut w: W, cfg: &ProblemConfig) -> std::io::Result<()> {
        writeln!(w, "{FLIGHT_LOG_CSV_HEADER}")?;
        for s in &self.samples {
            let d = cfg.scaling.dimensionalize(&s.x);
            writeln!(
                w,
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                cfg.time_s(s.t),
                cfg.scaling.altitude_m(s.x.r),
                d.u_ms,
                d.v_ms,
                d.m_kg,
                s.beta.to_degrees()
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "source": self.source,
            "terminal": self.terminal,
            "clamped_commands": self.clamped_commands,
            "config_hash": self.config_hash,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Zero-order-hold period in seconds; `None` evaluates the law continuously.
    pub control_dt_s: Option<f64>,
    pub gate_altitude_m: f64,
    /// Nondimensional time limit.
    pub timeout: f64,
    pub integrator: IntegratorSettings,
}

impl SimOptions {
    /// Hold period 0.1 s; timeout twice the nominal flight time.
    pub fn for_nominal(nominal_tf: f64) -> Self {
        Self {
            control_dt_s: Some(DEFAULT_CONTROL_DT_S),
            gate_altitude_m: DEFAULT_GATE_ALTITUDE_M,
            timeout: 2.0 * nominal_tf,
            integrator: IntegratorSettings { emit_step_endpoints: false, ..IntegratorSettings::default() },
        }
    }
}

fn gate_radius(cfg: &ProblemConfig, altitude_m: f64) -> f64 {
    1.0 + altitude_m / cfg.scaling.length_unit
}

fn summary(cfg: &ProblemConfig, x0: &State, t: f64, x: &State, beta: f64) -> TerminalSummary {
    let d = cfg.scaling.dimensionalize(x);
    TerminalSummary {
        flight_time_s: cfg.time_s(t),
        altitude_m: cfg.scaling.altitude_m(x.r),
        u_ms: d.u_ms,
        v_ms: d.v_ms,
        mass_kg: d.m_kg,
        fuel_kg: (x0.m - x.m) * cfg.scaling.mass_unit,
        beta_deg: beta.to_degrees(),
    }
}

fn clamp_command(beta: f64, clamped: &mut usize) -> f64 {
    if (0.0..=TAU).contains(&beta) {
        beta
    } else {
        *clamped += 1;
        if beta.is_nan() {
            0.0
        } else {
            beta.clamp(0.0, TAU)
        }
    }
}

/// Gate crossing inside a step, by bisection on the dense output.
fn gate_crossing(step: &DenseStep<4>, r_gate: f64) -> Option<(f64, [f64; 4])> {
    if !(step.y0[0] > r_gate && step.y1[0] <= r_gate) {
        return None;
    }
    let (mut lo, mut hi) = (step.t0, step.t1);
    let mut best = (step.t1, step.y1);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let y = step.eval(mid);
        if y[0] <= r_gate {
            hi = mid;
            best = (mid, y);
        } else {
            lo = mid;
        }
        if (y[0] - r_gate).abs() < 1e-13 {
            best = (mid, y);
            break;
        }
    }
    Some(best)
}

fn state_system<'a>(cfg: &'a ProblemConfig, beta: impl Fn(f64, &State) -> f64 + 'a) -> impl FnMut(f64, &[f64; 4]) -> Result<[f64; 4], OdeError> + 'a {
    move |t, y| {
        let x = State::from_slice(y);
        state_rhs(&x, beta(t, &x), cfg).map(|d| d.to_array()).map_err(|_| OdeError::NonFinite { t })
    }
}

/// Flies `guidance` from `x0` until the altitude gate or the timeout.
pub fn fly_closed_loop(x0: &State, guidance: &dyn Guidance, cfg: &ProblemConfig, opts: &SimOptions) -> Result<FlightLog, SimError> {
    let r_gate = gate_radius(cfg, opts.gate_altitude_m);
    let mut clamped = 0usize;
    let mut samples = Vec::new();
    let log = |samples: Vec<FlightSample>, clamped: usize, t: f64, x: &State, beta: f64| FlightLog {
        source: guidance.source(),
        x0: *x0,
        samples,
        terminal: summary(cfg, x0, t, x, beta),
        clamped_commands: clamped,
        config_hash: cfg.hash(),
    };
    if x0.r <= r_gate {
        let beta = guidance.command(0.0, x0);
        return Ok(log(samples, clamped, 0.0, x0, beta));
    }

    match opts.control_dt_s {
        None => {
            let counter = std::cell::Cell::new(0usize);
            let law = |t: f64, x: &State| {
                let mut c = counter.get();
                let b = clamp_command(guidance.command(t, x), &mut c);
                counter.set(c);
                b
            };
            let mut hit = None;
            let mut grid = Vec::new();
            let dt = opts.integrator.dense_output_dt.unwrap_or(opts.timeout / 2000.0);
            let mut next = 0.0;
            let mut lowest = x0.r;
            integrate(state_system(cfg, law), 0.0, x0.to_array(), opts.timeout, &opts.integrator, |step| {
                lowest = lowest.min(step.y1[0]);
                let stop = gate_crossing(step, r_gate);
                let upto = stop.map_or(step.t1, |s| s.0);
                while next <= upto {
                    let x = State::from_slice(&step.eval(next));
                    grid.push((next, x));
                    next += dt;
                }
                if let Some((t, y)) = stop {
                    hit = Some((t, State::from_slice(&y)));
                    return Ok(StepControl::Stop { t, y });
                }
                Ok(StepControl::Continue)
            })?;
            clamped = counter.get();
            for (t, x) in grid {
                let beta = guidance.command(t, &x);
                samples.push(FlightSample { t, x, beta });
            }
            match hit {
                Some((t, x)) => {
                    let beta = clamp_command(guidance.command(t, &x), &mut clamped);
                    samples.push(FlightSample { t, x, beta });
                    Ok(log(samples, clamped, t, &x, beta))
                }
                None => Err(SimError::Timeout { timeout_s: cfg.time_s(opts.timeout), min_altitude_m: cfg.scaling.altitude_m(lowest) }),
            }
        }
        Some(dt_s) => {
            let dt = dt_s / cfg.scaling.time_unit;
            let mut t = 0.0;
            let mut x = *x0;
            let mut k = 0u64;
            let mut lowest = x0.r;
            while t < opts.timeout {
                let beta = clamp_command(guidance.command(t, &x), &mut clamped);
                samples.push(FlightSample { t, x, beta });
                let t_next = ((k + 1) as f64 * dt).min(opts.timeout);
                let mut hit = None;
                let (_, y) = integrate(state_system(cfg, move |_, _| beta), t, x.to_array(), t_next, &opts.integrator, |step| {
                    lowest = lowest.min(step.y1[0]);
                    if let Some((te, ye)) = gate_crossing(step, r_gate) {
                        hit = Some(te);
                        return Ok(StepControl::Stop { t: te, y: ye });
                    }
                    Ok(StepControl::Continue)
                })?;
                x = State::from_slice(&y);
                if let Some(te) = hit {
                    let beta = clamp_command(guidance.command(te, &x), &mut clamped);
                    samples.push(FlightSample { t: te, x, beta });
                    return Ok(log(samples, clamped, te, &x, beta));
                }
                t = t_next;
                k += 1;
            }
            Err(SimError::Timeout { timeout_s: cfg.time_s(opts.timeout), min_altitude_m: cfg.scaling.altitude_m(lowest) })
        }
    }
}

/// Propagates the extremal from `(x0, p0)` with optimal steering down to the
/// altitude gate.
pub fn fly_open_loop(x0: &State, p0: &Costate, cfg: &ProblemConfig, opts: &SimOptions) -> Result<(FlightLog, Trajectory), SimError> {
    let r_gate = gate_radius(cfg, opts.gate_altitude_m);
    let sys = LandingSystem::new(cfg, Direction::Forward, Steering::Optimal);
    let gate = move |x: &State| x.r - r_gate;
    let events = [Event { g: &gate, crossing: Crossing::Falling }];
    let (traj, stop) = propagate_with_events(&sys, &ExtendedState::new(*x0, *p0), (0.0, opts.timeout), &opts.integrator, &events)?;
    if stop.is_none() {
        let lowest = traj.nodes.iter().map(|n| n.x.r).fold(f64::INFINITY, f64::min);
        return Err(SimError::Timeout { timeout_s: cfg.time_s(opts.timeout), min_altitude_m: cfg.scaling.altitude_m(lowest) });
    }
    let end = traj.last().expect("propagation emits nodes");
    let samples = if traj.nodes.len() > 1 { traj.nodes.iter().map(|n| FlightSample { t: n.t, x: n.x, beta: n.beta }).collect() } else { Vec::new() };
    let log = FlightLog {
        source: FlightSource::OpenLoopOptimal,
        x0: *x0,
        samples,
        terminal: summary(cfg, x0, end.t, &end.x, end.beta),
        clamped_commands: 0,
        config_hash: cfg.hash(),
    };
    Ok((log, traj))
}

/// Terminal differences `b - a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalDeltas {
    pub flight_time_s: f64,
    pub fuel_kg: f64,
    pub beta_deg: f64,
    pub u_ms: f64,
    pub v_ms: f64,
    pub altitude_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub deltas: TerminalDeltas,
    pub a: TerminalSummary,
    pub b: TerminalSummary,
    pub same_config: bool,
}

pub const COMPARISON_CSV_HEADER: &str =
    "t_s,a_altitude_m,a_u_ms,a_v_ms,a_mass_kg,a_beta_deg,b_altitude_m,b_u_ms,b_v_ms,b_mass_kg,b_beta_deg";

/// Deltas of the terminal summaries. Runs must share the initial state;
/// differing configs are allowed (e.g. two regularization weights) and
/// reported in `same_config`.
pub fn compare_runs(a: &FlightLog, b: &FlightLog) -> Result<Comparison, SimError> {
    let same_x0 = a.x0.to_array().iter().zip(b.x0.to_array()).all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs().max(1.0));
    if !same_x0 {
        return Err(SimError::MismatchedInitialConditions);
    }
    let (ta, tb) = (a.terminal, b.terminal);
    Ok(Comparison {
        deltas: TerminalDeltas {
            flight_time_s: tb.flight_time_s - ta.flight_time_s,
            fuel_kg: tb.fuel_kg - ta.fuel_kg,
            beta_deg: tb.beta_deg - ta.beta_deg,
            u_ms: tb.u_ms - ta.u_ms,
            v_ms: tb.v_ms - ta.v_ms,
            altitude_m: tb.altitude_m - ta.altitude_m,
        },
        a: ta,
        b: tb,
        same_config: a.config_hash == b.config_hash,
    })
}

fn interpolate(log: &FlightLog, t: f64) -> Option<(State, f64)> {
    let s = &log.samples;
    if s.is_empty() || t < s[0].t || t > s[s.len() - 1].t {
        return None;
    }
    let k = s.partition_point(|q| q.t <= t).clamp(1, s.len() - 1);
    let (p, q) = (&s[k - 1], &s[k]);
    let w = if q.t > p.t { (t - p.t) / (q.t - p.t) } else { 0.0 };
    let lerp = |a: f64, b: f64| a + w * (b - a);
    let x = State::new(lerp(p.x.r, q.x.r), lerp(p.x.u, q.x.u), lerp(p.x.v, q.x.v), lerp(p.x.m, q.x.m));
    Some((x, lerp(p.beta, q.beta)))
}

/// Both runs resampled on a common grid of `dt_s` seconds; a run that has
/// ended leaves its columns empty.
pub fn write_aligned_csv<W: Write>(a: &FlightLog, b: &FlightLog, cfg: &ProblemConfig, dt_s: f64, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{COMPARISON_CSV_HEADER}")?;
    let end = a.terminal.flight_time_s.max(b.terminal.flight_time_s);
    let n = (end / dt_s).floor() as usize;
    let fields = |log: &FlightLog, t_s: f64| match interpolate(log, t_s / cfg.scaling.time_unit) {
        Some((x, beta)) => {
            let d = cfg.scaling.dimensionalize(&x);
            format!("{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}", cfg.scaling.altitude_m(x.r), d.u_ms, d.v_ms, d.m_kg, beta.to_degrees())
        }
        None => ",,,,".to_string(),
    };
    for i in 0..=n {
        let t_s = i as f64 * dt_s;
        writeln!(w, "{t_s:.6e},{},{}", fields(a, t_s), fields(b, t_s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shooting::{solve_tpbvp, ShootingGuess, ShootingOptions};
    use crate::DimensionalState;
    use std::sync::OnceLock;

    fn x0(cfg: &ProblemConfig) -> State {
        cfg.scaling.nondimensionalize(&DimensionalState { r_m: 1.753e6, u_ms: 1679.5, v_ms: 0.0, m_kg: 600.0 })
    }

    /// Unconstrained nominal solution: (p0, tf).
    fn nominal() -> &'static (Costate, f64) {
        static N: OnceLock<(Costate, f64)> = OnceLock::new();
        N.get_or_init(|| {
            let cfg = ProblemConfig::lunar_default().with_delta(0.0).unwrap();
            let g = ShootingGuess { p0: Costate::new(-1.0, 0.5, -0.5, 0.0), tf: 0.3 };
            let r = solve_tpbvp(&x0(&cfg), &g, &cfg, &ShootingOptions::default()).unwrap();
            (r.solution.p0, r.solution.tf)
        })
    }

    struct Constant(f64);

    impl Guidance for Constant {
        fn command(&self, _t: f64, _x: &State) -> f64 {
            self.0
        }

        fn source(&self) -> FlightSource {
            FlightSource::Schedule
        }
    }

    fn cfg0() -> ProblemConfig {
        ProblemConfig::lunar_default().with_delta(0.0).unwrap()
    }

    #[test]
    fn below_gate_terminates_immediately() {
        let cfg = cfg0();
        let x = State::new(1.0 + 1.0 / cfg.scaling.length_unit, 0.0, -0.001, 0.9);
        let log = fly_closed_loop(&x, &Constant(1.0), &cfg, &SimOptions::for_nominal(0.52)).unwrap();
        assert!(log.samples.is_empty());
        assert_eq!(log.terminal.flight_time_s, 0.0);
        assert_eq!(log.terminal.fuel_kg, 0.0);
    }

    #[test]
    fn schedule_reproduces_open_loop_reference() {
        let cfg = cfg0();
        let (p0, tf) = *nominal();
        let mut opts = SimOptions::for_nominal(tf);
        opts.integrator.emit_step_endpoints = true;
        opts.integrator.dense_output_dt = Some(1e-5);
        let (reference, traj) = fly_open_loop(&x0(&cfg), &p0, &cfg, &opts).unwrap();
        assert!((reference.terminal.altitude_m - 5.0).abs() < 1e-3, "{:?}", reference.terminal);
        let schedule = ScheduleGuidance::from_trajectory(&traj);
        let opts = SimOptions { control_dt_s: None, integrator: IntegratorSettings { dense_output_dt: Some(1e-4), ..opts.integrator }, ..opts };
        let flown = fly_closed_loop(&x0(&cfg), &schedule, &cfg, &opts).unwrap();
        let (a, b) = (reference.terminal, flown.terminal);
        assert!((a.flight_time_s - b.flight_time_s).abs() < 1e-4, "{a:?} vs {b:?}");
        assert!((a.u_ms - b.u_ms).abs() < 1e-4 && (a.v_ms - b.v_ms).abs() < 1e-4, "{a:?} vs {b:?}");
        assert!((a.beta_deg - b.beta_deg).abs() < 1e-4);
        assert_eq!(flown.clamped_commands, 0);
    }

    #[test]
    fn hold_period_convergence_and_linear_mass() {
        let cfg = cfg0();
        let (p0, tf) = *nominal();
        let (_, traj) = fly_open_loop(&x0(&cfg), &p0, &cfg, &SimOptions::for_nominal(tf)).unwrap();
        let schedule = ScheduleGuidance::from_trajectory(&traj);
        let run = |dt: f64| {
            let opts = SimOptions { control_dt_s: Some(dt), ..SimOptions::for_nominal(tf) };
            fly_closed_loop(&x0(&cfg), &schedule, &cfg, &opts).unwrap()
        };
        let logs: Vec<FlightLog> = [1.0, 0.25, 0.0625].iter().map(|&dt| run(dt)).collect();
        let diff = |a: &FlightLog, b: &FlightLog| {
            let (a, b) = (a.terminal, b.terminal);
            (a.flight_time_s - b.flight_time_s).abs() + (a.u_ms - b.u_ms).abs() + (a.v_ms - b.v_ms).abs()
        };
        let fine = run(0.015625);
        let errs: Vec<f64> = logs.iter().map(|l| diff(l, &fine)).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        for log in &logs {
            assert!((log.terminal.altitude_m - 5.0).abs() < 1e-6);
            for s in &log.samples {
                let expected = x0(&cfg).m - cfg.nondim_mdot * s.t;
                assert!((s.x.m - expected).abs() < 1e-10, "{} vs {expected}", s.x.m);
            }
            // samples at every hold boundary
            assert!(log.samples.windows(2).all(|w| w[1].t > w[0].t));
        }
        assert_eq!(logs[1].samples.len() as f64, (logs[1].terminal.flight_time_s / 0.25).ceil() + 1.0);
    }

    #[test]
    fn out_of_range_commands_are_clamped() {
        let cfg = cfg0();
        // thrust pointing down with a negative command never reaches [0, 2pi]
        let x = State::new(1.0 + 100.0 / cfg.scaling.length_unit, 0.0, 0.0, 1.0);
        let log = fly_closed_loop(&x, &Constant(-0.5), &cfg, &SimOptions::for_nominal(0.52)).unwrap();
        assert!(log.clamped_commands > 0);
        assert!(log.samples.iter().all(|s| s.beta == 0.0));
    }

    #[test]
    fn hovering_times_out() {
        let cfg = cfg0();
        let x = State::new(1.0 + 100.0 / cfg.scaling.length_unit, 0.0, 0.0, 1.0);
        let err = fly_closed_loop(&x, &Constant(std::f64::consts::FRAC_PI_2), &cfg, &SimOptions::for_nominal(0.01));
        assert!(matches!(err, Err(SimError::Timeout { .. })), "{err:?}");
    }

    #[test]
    fn comparison_deltas() {
        let cfg = cfg0();
        let (p0, tf) = *nominal();
        let (a, traj) = fly_open_loop(&x0(&cfg), &p0, &cfg, &SimOptions::for_nominal(tf)).unwrap();
        let c = compare_runs(&a, &a).unwrap();
        assert_eq!(c.deltas, TerminalDeltas { flight_time_s: 0.0, fuel_kg: 0.0, beta_deg: 0.0, u_ms: 0.0, v_ms: 0.0, altitude_m: 0.0 });
        assert!(c.same_config);

        let opts = SimOptions { control_dt_s: Some(0.5), ..SimOptions::for_nominal(tf) };
        let b = fly_closed_loop(&x0(&cfg), &ScheduleGuidance::from_trajectory(&traj), &cfg, &opts).unwrap();
        let c = compare_runs(&a, &b).unwrap();
        let mdot = cfg.constants.mass_flow_kg_s();
        assert!((c.deltas.fuel_kg - mdot * c.deltas.flight_time_s).abs() <= 1e-10 * c.deltas.fuel_kg.abs().max(1.0));

        let mut other = b.clone();
        other.x0.u += 1e-6;
        assert!(matches!(compare_runs(&a, &other), Err(SimError::MismatchedInitialConditions)));

        let mut csv = Vec::new();
        write_aligned_csv(&a, &b, &cfg, 1.0, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), COMPARISON_CSV_HEADER);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 11));
    }

    #[test]
    fn flight_log_csv() {
        let cfg = cfg0();
        let x = State::new(1.0 + 50.0 / cfg.scaling.length_unit, 0.0, -20.0 / cfg.scaling.speed_unit, 0.9);
        let log = fly_closed_loop(&x, &Constant(1.2), &cfg, &SimOptions::for_nominal(0.52)).unwrap();
        let mut out = Vec::new();
        log.write_csv(&mut out, &cfg).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), FLIGHT_LOG_CSV_HEADER);
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((first[1] - 50.0).abs() < 1e-6 && (first[3] + 20.0).abs() < 1e-6);
        assert!((first[4] - 540.0).abs() < 1e-9 && (first[5] - 1.2f64.to_degrees()).abs() < 1e-6);
        assert_eq!(log.summary_json()["source"], "schedule");
    }
}
