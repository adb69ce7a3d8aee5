//! C ABI over `pdg_core`.
//!
//! Objects cross the boundary as opaque heap handles. Each is created by
//! a `pdg_config_*`, `pdg_nominal_solve` or `pdg_model_*` call and released
//! by the matching `_free`.
//! Every fallible call returns a [`PdgStatus`]; on failure the message is
//! available from [`pdg_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pdg_core::config::RunConfig;
use pdg_core::mlp::MlpModel;
use pdg_core::pipeline::{solve_nominal, NominalError, NominalSummary};
use pdg_core::simulator::{fly_closed_loop, NnGuidance, TerminalSummary};
use pdg_core::steering::optimal_beta;
use pdg_core::{Costate, DimensionalState, SimError, State};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidInput = 2,
    NotConverged = 3,
    Io = 4,
    Panic = 5,
}

/// Run configuration.
pub struct PdgConfig(RunConfig);
/// Converged nominal solution.
pub struct PdgNominal(NominalSummary);
/// Trained steering network.
pub struct PdgModel(MlpModel);

/// Lander state in SI units.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdgState {
    pub r_m: f64,
    pub u_ms: f64,
    pub v_ms: f64,
    pub m_kg: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdgNominalInfo {
    pub tf_delta0_s: f64,
    pub tf_final_s: f64,
    pub extra_fuel_kg: f64,
    pub final_delta: f64,
    pub final_beta_deg: f64,
    /// Nondimensional final time.
    pub final_tf: f64,
    pub p0: [f64; 4],
    pub touchdown_triple: [f64; 3],
    pub stages: usize,
}

/// State when the flight crossed the touchdown gate.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdgTerminal {
    pub flight_time_s: f64,
    pub altitude_m: f64,
    pub u_ms: f64,
    pub v_ms: f64,
    pub mass_kg: f64,
    pub fuel_kg: f64,
    pub beta_deg: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(PdgStatus, String);

fn fail<E: std::fmt::Display>(status: PdgStatus) -> impl Fn(E) -> Fail {
    move |e| Fail(status, e.to_string())
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PdgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PdgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            PdgStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(PdgStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(PdgStatus::NullArgument, format!("{name} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(PdgStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail(PdgStatus::InvalidInput, format!("{name}: {e}")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    let slot = out_ptr(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `pdg_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pdg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pdg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pdg_config_default(out: *mut *mut PdgConfig) -> PdgStatus {
    guard(|| store(out, PdgConfig(RunConfig::default())))
}

/// Parses a JSON run configuration (same format as the CLI's `--config`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` as in [`pdg_config_default`].
#[no_mangle]
pub unsafe extern "C" fn pdg_config_from_json(json: *const c_char, out: *mut *mut PdgConfig) -> PdgStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let rc = RunConfig::from_json_str(text).map_err(fail(PdgStatus::InvalidInput))?;
        store(out, PdgConfig(rc))
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdg_config_free(cfg: *mut PdgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solves the nominal landing with weight continuation.
///
/// # Safety
/// `cfg` must be a live config handle; `out` as in [`pdg_config_default`].
#[no_mangle]
pub unsafe extern "C" fn pdg_nominal_solve(cfg: *const PdgConfig, out: *mut *mut PdgNominal) -> PdgStatus {
    guard(|| {
        let rc = &deref(cfg, "cfg")?.0;
        out_ptr(out, "out")?;
        let run = solve_nominal(rc).map_err(|e| match e {
            NominalError::Config(c) => Fail(PdgStatus::InvalidInput, c.to_string()),
            other => Fail(PdgStatus::NotConverged, other.to_string()),
        })?;
        store(out, PdgNominal(run.summary))
    })
}

/// # Safety
/// `nominal` must be a live handle; `info` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn pdg_nominal_info(nominal: *const PdgNominal, info: *mut PdgNominalInfo) -> PdgStatus {
    guard(|| {
        let s = &deref(nominal, "nominal")?.0;
        *out_ptr(info, "info")? = PdgNominalInfo {
            tf_delta0_s: s.tf_delta0_s,
            tf_final_s: s.tf_final_s,
            extra_fuel_kg: s.extra_fuel_kg,
            final_delta: s.final_delta,
            final_beta_deg: s.final_beta_deg,
            final_tf: s.final_tf,
            p0: s.final_p0,
            touchdown_triple: s.touchdown_triple,
            stages: s.stages.len(),
        };
        Ok(())
    })
}

/// # Safety
/// `nominal` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdg_nominal_free(nominal: *mut PdgNominal) {
    if !nominal.is_null() {
        drop(Box::from_raw(nominal));
    }
}

/// Loads a model file written by `pdg train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as in [`pdg_config_default`].
#[no_mangle]
pub unsafe extern "C" fn pdg_model_load(path: *const c_char, out: *mut *mut PdgModel) -> PdgStatus {
    guard(|| {
        let p = c_str(path, "path")?;
        let model = MlpModel::load(Path::new(p)).map_err(|e| match e {
            pdg_core::MlpError::Io(io) => Fail(PdgStatus::Io, format!("{p}: {io}")),
            other => Fail(PdgStatus::InvalidInput, format!("{p}: {other}")),
        })?;
        store(out, PdgModel(model))
    })
}

/// Parses a model from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` as in [`pdg_config_default`].
#[no_mangle]
pub unsafe extern "C" fn pdg_model_from_json(json: *const c_char, out: *mut *mut PdgModel) -> PdgStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let model = MlpModel::read_json(text.as_bytes()).map_err(fail(PdgStatus::InvalidInput))?;
        store(out, PdgModel(model))
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdg_model_free(model: *mut PdgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn nondim(rc: &RunConfig, x: &PdgState) -> Result<(pdg_core::ProblemConfig, State), Fail> {
    let cfg = rc.problem().map_err(fail(PdgStatus::InvalidInput))?;
    let d = DimensionalState { r_m: x.r_m, u_ms: x.u_ms, v_ms: x.v_ms, m_kg: x.m_kg };
    let s = cfg.scaling.nondimensionalize(&d);
    if !s.is_finite() || s.m <= 0.0 {
        return Err(Fail(PdgStatus::InvalidInput, format!("invalid state {x:?}")));
    }
    Ok((cfg, s))
}

/// Network steering command, radians, for a state in SI units.
///
/// # Safety
/// Handles must be live; `state` and `beta_rad` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pdg_model_command(
    model: *const PdgModel,
    cfg: *const PdgConfig,
    state: *const PdgState,
    beta_rad: *mut f64,
) -> PdgStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let (_, x) = nondim(&deref(cfg, "cfg")?.0, deref(state, "state")?)?;
        *out_ptr(beta_rad, "beta_rad")? = m.forward(&x);
        Ok(())
    })
}

/// Hamiltonian-minimizing steering angle for nondimensional state
/// `(r, u, v, m)` and costate `(p_r, p_u, p_v, p_m)` at weight `delta`.
///
/// # Safety
/// `cfg` must be live; `state` and `costate` must point to four doubles each.
#[no_mangle]
pub unsafe extern "C" fn pdg_optimal_steering(
    cfg: *const PdgConfig,
    delta: f64,
    state: *const f64,
    costate: *const f64,
    beta_rad: *mut f64,
) -> PdgStatus {
    guard(|| {
        let rc = &deref(cfg, "cfg")?.0;
        let x = std::slice::from_raw_parts(deref(state, "state")?, 4);
        let p = std::slice::from_raw_parts(deref(costate, "costate")?, 4);
        let c = rc.problem().and_then(|c| c.with_delta(delta)).map_err(fail(PdgStatus::InvalidInput))?;
        let beta = optimal_beta(&State::from_slice(x), &Costate::from_slice(p), &c).map_err(fail(PdgStatus::InvalidInput))?;
        *out_ptr(beta_rad, "beta_rad")? = beta;
        Ok(())
    })
}

/// Flies the network from `x0` (SI units) to the touchdown gate.
/// `nominal` supplies the flight-time scale for the timeout.
///
/// # Safety
/// Handles must be live; `x0` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pdg_simulate(
    model: *const PdgModel,
    cfg: *const PdgConfig,
    nominal: *const PdgNominal,
    x0: *const PdgState,
    out: *mut PdgTerminal,
) -> PdgStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let rc = &deref(cfg, "cfg")?.0;
        let nom = &deref(nominal, "nominal")?.0;
        let (c, x) = nondim(rc, deref(x0, "x0")?)?;
        let out = out_ptr(out, "out")?;
        let log = fly_closed_loop(&x, &NnGuidance(m), &c, &rc.sim_options(nom.final_tf)).map_err(|e| match e {
            SimError::Timeout { .. } => Fail(PdgStatus::NotConverged, e.to_string()),
            other => Fail(PdgStatus::InvalidInput, other.to_string()),
        })?;
        let TerminalSummary { flight_time_s, altitude_m, u_ms, v_ms, mass_kg, fuel_kg, beta_deg } = log.terminal;
        *out = PdgTerminal { flight_time_s, altitude_m, u_ms, v_ms, mass_kg, fuel_kg, beta_deg };
        Ok(())
    })
}
