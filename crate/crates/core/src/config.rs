//! Flat JSON run configuration.
//!
//! Every key carries its unit in the name. Keys starting with `_` are
//! comments and are dropped before parsing; any other unknown key is an
//! error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::mlp::{LrSchedule, TrainHyper};
use crate::odeint::IntegratorSettings;
use crate::problem::{DimensionalState, PhysicalConstants, ProblemConfig, RegularizationConfig, State};
use crate::sampler::{SamplingSpec, TouchdownTriple, DEFAULT_RADIUS_FRACTION, DEFAULT_SCALE_DECADES};
use crate::shooting::{uniform_schedule, DifferenceScheme, ShootingOptions};
use crate::simulator::SimOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduleKind {
    Constant,
    Step,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub moon_radius_km: f64,
    pub moon_mu_m3s2: f64,
    pub earth_g0_ms2: f64,
    pub thrust_n: f64,
    pub isp_s: f64,
    pub initial_mass_kg: f64,

    pub initial_radius_km: f64,
    pub initial_u_ms: f64,
    pub initial_v_ms: f64,

    pub delta: f64,
    pub epsilon: f64,
    /// Number of equal steps from 0 to `delta`.
    pub homotopy_steps: usize,
    pub homotopy_max_bisections: usize,

    pub integrator_rel_tol: f64,
    pub integrator_abs_tol: f64,
    pub integrator_max_step: f64,
    pub integrator_max_steps: usize,

    pub shooting_tolerance: f64,
    pub shooting_max_iterations: usize,
    pub shooting_fd_step: f64,
    pub shooting_fd_scheme: DifferenceScheme,
    pub shooting_guess_p0: [f64; 4],
    pub shooting_guess_tf: f64,

    /// Triples drawn; rejected ones are dropped, so fewer trajectories may result.
    pub sampling_count: usize,
    pub sampling_radius_fraction: f64,
    pub sampling_scale_decades: f64,
    /// Backward horizon as a multiple of the nominal flight time.
    pub sampling_horizon_factor: f64,
    /// Truncation altitude as a multiple of the nominal initial altitude.
    pub sampling_altitude_cap_factor: f64,
    pub sampling_mass_cap_kg: Option<f64>,

    pub nn_epochs: usize,
    pub nn_batch_size: usize,
    pub nn_learning_rate: f64,
    pub nn_lr_schedule: LrScheduleKind,
    pub nn_final_learning_rate: f64,
    pub nn_lr_step_epochs: usize,
    pub nn_lr_step_factor: f64,

    pub control_dt_s: f64,
    pub gate_altitude_m: f64,
    /// Flight time limit as a multiple of the nominal flight time.
    pub timeout_factor: f64,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pc = PhysicalConstants::lunar_default();
        let shoot = ShootingOptions::default();
        let integ = IntegratorSettings::default();
        let hyper = TrainHyper::default();
        Self {
            moon_radius_km: pc.moon_radius_m / 1e3,
            moon_mu_m3s2: pc.moon_mu_m3s2,
            earth_g0_ms2: pc.earth_g0_ms2,
            thrust_n: pc.thrust_n,
            isp_s: pc.isp_s,
            initial_mass_kg: pc.initial_mass_kg,
            initial_radius_km: 1753.0,
            initial_u_ms: 1679.5,
            initial_v_ms: 0.0,
            delta: 1e-5,
            epsilon: 1e-8,
            homotopy_steps: 5,
            homotopy_max_bisections: 6,
            integrator_rel_tol: integ.rel_tol,
            integrator_abs_tol: integ.abs_tol,
            integrator_max_step: integ.max_step,
            integrator_max_steps: integ.max_steps,
            shooting_tolerance: shoot.tolerance,
            shooting_max_iterations: shoot.max_iterations,
            shooting_fd_step: shoot.fd_step,
            shooting_fd_scheme: shoot.fd_scheme,
            shooting_guess_p0: [-1.0, 0.5, -0.5, 0.0],
            shooting_guess_tf: 0.3,
            sampling_count: 1100,
            sampling_radius_fraction: DEFAULT_RADIUS_FRACTION,
            sampling_scale_decades: DEFAULT_SCALE_DECADES,
            sampling_horizon_factor: 1.2,
            sampling_altitude_cap_factor: 1.15,
            sampling_mass_cap_kg: None,
            nn_epochs: hyper.epochs,
            nn_batch_size: hyper.batch_size,
            nn_learning_rate: hyper.learning_rate,
            nn_lr_schedule: LrScheduleKind::Cosine,
            nn_final_learning_rate: 1e-5,
            nn_lr_step_epochs: 250,
            nn_lr_step_factor: 0.5,
            control_dt_s: 0.1,
            gate_altitude_m: 5.0,
            timeout_factor: 2.0,
            seed: 1,
        }
    }
}

fn strip_comments(v: &mut serde_json::Value) {
    if let serde_json::Value::Object(map) = v {
        map.retain(|k, _| !k.starts_with('_'));
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::NonPositive { name, value })
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let mut v: serde_json::Value = serde_json::from_str(text)?;
        if !v.is_object() {
            return Err(ConfigError::Invalid("config must be a JSON object".into()));
        }
        strip_comments(&mut v);
        let cfg: Self = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem()?;
        for (name, v) in [
            ("initial_radius_km", self.initial_radius_km),
            ("integrator_rel_tol", self.integrator_rel_tol),
            ("integrator_abs_tol", self.integrator_abs_tol),
            ("integrator_max_step", self.integrator_max_step),
            ("shooting_tolerance", self.shooting_tolerance),
            ("shooting_fd_step", self.shooting_fd_step),
            ("shooting_guess_tf", self.shooting_guess_tf),
            ("sampling_horizon_factor", self.sampling_horizon_factor),
            ("sampling_altitude_cap_factor", self.sampling_altitude_cap_factor),
            ("nn_learning_rate", self.nn_learning_rate),
            ("control_dt_s", self.control_dt_s),
            ("timeout_factor", self.timeout_factor),
        ] {
            positive(name, v)?;
        }
        if self.initial_radius_km <= self.moon_radius_km {
            return Err(ConfigError::Invalid(format!(
                "initial_radius_km {} must exceed moon_radius_km {}",
                self.initial_radius_km, self.moon_radius_km
            )));
        }
        if !(self.sampling_radius_fraction >= 0.0) || !(self.sampling_scale_decades >= 0.0) {
            return Err(ConfigError::Invalid("sampling radius fraction and scale decades must be >= 0".into()));
        }
        if self.sampling_count == 0 || self.nn_batch_size == 0 || self.homotopy_steps == 0 {
            return Err(ConfigError::Invalid("sampling_count, nn_batch_size and homotopy_steps must be >= 1".into()));
        }
        if self.gate_altitude_m < 0.0 || !self.gate_altitude_m.is_finite() {
            return Err(ConfigError::Invalid(format!("gate_altitude_m must be >= 0, got {}", self.gate_altitude_m)));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants {
            moon_radius_m: self.moon_radius_km * 1e3,
            moon_mu_m3s2: self.moon_mu_m3s2,
            earth_g0_ms2: self.earth_g0_ms2,
            thrust_n: self.thrust_n,
            isp_s: self.isp_s,
            initial_mass_kg: self.initial_mass_kg,
        }
    }

    /// Problem at the configured final weight.
    pub fn problem(&self) -> Result<ProblemConfig, ConfigError> {
        ProblemConfig::new(self.constants(), RegularizationConfig::new(self.delta, self.epsilon)?)
    }

    pub fn initial_dimensional(&self) -> DimensionalState {
        DimensionalState {
            r_m: self.initial_radius_km * 1e3,
            u_ms: self.initial_u_ms,
            v_ms: self.initial_v_ms,
            m_kg: self.initial_mass_kg,
        }
    }

    pub fn initial_state(&self, cfg: &ProblemConfig) -> State {
        cfg.scaling.nondimensionalize(&self.initial_dimensional())
    }

    pub fn delta_schedule(&self) -> Vec<f64> {
        if self.delta == 0.0 {
            vec![0.0]
        } else {
            uniform_schedule(self.delta, self.homotopy_steps)
        }
    }

    pub fn integrator(&self) -> IntegratorSettings {
        IntegratorSettings {
            rel_tol: self.integrator_rel_tol,
            abs_tol: self.integrator_abs_tol,
            max_step: self.integrator_max_step,
            max_steps: self.integrator_max_steps,
            ..IntegratorSettings::default()
        }
    }

    pub fn shooting(&self) -> ShootingOptions {
        ShootingOptions {
            max_iterations: self.shooting_max_iterations,
            tolerance: self.shooting_tolerance,
            fd_step: self.shooting_fd_step,
            fd_scheme: self.shooting_fd_scheme,
            integrator: self.integrator(),
            ..ShootingOptions::default()
        }
    }

    pub fn sampling(&self, nominal_triple: TouchdownTriple, nominal_tf: f64, cfg: &ProblemConfig) -> SamplingSpec {
        let x0 = self.initial_state(cfg);
        let mut spec = SamplingSpec::around_nominal(nominal_triple, nominal_tf, &x0, self.sampling_count, self.seed);
        spec.perturbation_radii = nominal_triple.to_array().map(|c| self.sampling_radius_fraction * c.abs());
        spec.scale_decades = self.sampling_scale_decades;
        spec.tau_max = self.sampling_horizon_factor * nominal_tf;
        spec.limits.radius_cap = Some(1.0 + self.sampling_altitude_cap_factor * (x0.r - 1.0));
        spec.limits.mass_cap = self.sampling_mass_cap_kg.map(|kg| kg / cfg.scaling.mass_unit);
        spec.integrator = IntegratorSettings { emit_step_endpoints: false, ..self.integrator() };
        spec
    }

    pub fn train_hyper(&self) -> TrainHyper {
        let schedule = match self.nn_lr_schedule {
            LrScheduleKind::Constant => LrSchedule::Constant,
            LrScheduleKind::Step => LrSchedule::Step { every: self.nn_lr_step_epochs, factor: self.nn_lr_step_factor },
            LrScheduleKind::Cosine => LrSchedule::Cosine { final_lr: self.nn_final_learning_rate },
        };
        TrainHyper {
            epochs: self.nn_epochs,
            batch_size: self.nn_batch_size,
            learning_rate: self.nn_learning_rate,
            schedule,
            seed: self.seed,
        }
    }

    pub fn sim_options(&self, nominal_tf: f64) -> SimOptions {
        SimOptions {
            control_dt_s: Some(self.control_dt_s),
            gate_altitude_m: self.gate_altitude_m,
            timeout: self.timeout_factor * nominal_tf,
            integrator: IntegratorSettings { emit_step_endpoints: false, ..self.integrator() },
        }
    }
}

/// One named initial condition in an initial-condition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub name: String,
    pub radius_km: f64,
    pub u_ms: f64,
    pub v_ms: f64,
    pub mass_kg: f64,
}

impl InitialCondition {
    pub fn dimensional(&self) -> DimensionalState {
        DimensionalState { r_m: self.radius_km * 1e3, u_ms: self.u_ms, v_ms: self.v_ms, m_kg: self.mass_kg }
    }
}

/// `{"cases": [...]}`, `_`-prefixed keys ignored at both levels.
pub fn load_initial_conditions(text: &str) -> Result<Vec<InitialCondition>, ConfigError> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    strip_comments(&mut v);
    let cases = v
        .get_mut("cases")
        .and_then(|c| c.as_array_mut())
        .ok_or_else(|| ConfigError::Invalid("initial-condition file needs a \"cases\" array".into()))?;
    let mut out = Vec::with_capacity(cases.len());
    for c in cases.iter_mut() {
        strip_comments(c);
        let ic: InitialCondition = serde_json::from_value(c.clone())?;
        for (name, val) in [("radius_km", ic.radius_km), ("mass_kg", ic.mass_kg)] {
            positive(name, val)?;
        }
        if !(ic.u_ms.is_finite() && ic.v_ms.is_finite()) {
            return Err(ConfigError::Invalid(format!("case {}: non-finite speed", ic.name)));
        }
        out.push(ic);
    }
    Ok(out)
}
