//! Physical constants, canonical units and the shared state types.
//!
//! Everything downstream of this module works in nondimensional units:
//! lengths in lunar radii, speeds in circular speed at the surface, time in
//! `sqrt(R0^3 / mu)`, mass in the initial lander mass. Dimensional values only
//! appear at I/O boundaries.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

/// Dimensional constants of the landing problem (SI units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub moon_radius_m: f64,
    pub moon_mu_m3s2: f64,
    pub earth_g0_ms2: f64,
    pub thrust_n: f64,
    pub isp_s: f64,
    /// Reference mass used for the mass unit.
    pub initial_mass_kg: f64,
}

impl PhysicalConstants {
    /// Lunar lander used throughout the examples: 1,500 N engine at 300 s,
    /// 600 kg at ignition.
    pub fn lunar_default() -> Self {
        Self {
            moon_radius_m: 1.738e6,
            moon_mu_m3s2: 4.9028e12,
            earth_g0_ms2: 9.81,
            thrust_n: 1500.0,
            isp_s: 300.0,
            initial_mass_kg: 600.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("moon_radius_m", self.moon_radius_m),
            ("moon_mu_m3s2", self.moon_mu_m3s2),
            ("earth_g0_ms2", self.earth_g0_ms2),
            ("thrust_n", self.thrust_n),
            ("isp_s", self.isp_s),
            ("initial_mass_kg", self.initial_mass_kg),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// Constant propellant flow `T / (Isp g0)` in kg/s.
    pub fn mass_flow_kg_s(&self) -> f64 {
        self.thrust_n / (self.isp_s * self.earth_g0_ms2)
    }
}

/// Weights of the terminal-attitude regularization term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    /// Overall weight; zero recovers the problem with a free final angle.
    pub delta: f64,
    /// Guard keeping the `1 / (r - 1 + eps)` factor finite at the surface.
    pub epsilon: f64,
}

impl RegularizationConfig {
    pub fn new(delta: f64, epsilon: f64) -> Result<Self, ConfigError> {
        let reg = Self { delta, epsilon };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(ConfigError::Invalid(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(ConfigError::Invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self { delta: 1.0e-5, epsilon: 1.0e-8 }
    }
}

/// Canonical units derived from `R0`, `mu` and the reference mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSet {
    pub length_unit: f64,
    pub speed_unit: f64,
    pub time_unit: f64,
    pub mass_unit: f64,
    pub thrust_unit: f64,
}

pub fn make_scaling(pc: &PhysicalConstants) -> Result<ScalingSet, ConfigError> {
    pc.validate()?;
    let length_unit = pc.moon_radius_m;
    let speed_unit = (pc.moon_mu_m3s2 / length_unit).sqrt();
    let time_unit = (length_unit.powi(3) / pc.moon_mu_m3s2).sqrt();
    let mass_unit = pc.initial_mass_kg;
    let thrust_unit = mass_unit * pc.moon_mu_m3s2 / (length_unit * length_unit);
    Ok(ScalingSet { length_unit, speed_unit, time_unit, mass_unit, thrust_unit })
}

impl ScalingSet {
    pub fn nondimensionalize(&self, s: &DimensionalState) -> State {
        State {
            r: s.r_m / self.length_unit,
            u: s.u_ms / self.speed_unit,
            v: s.v_ms / self.speed_unit,
            m: s.m_kg / self.mass_unit,
        }
    }

    pub fn dimensionalize(&self, s: &State) -> DimensionalState {
        DimensionalState {
            r_m: s.r * self.length_unit,
            u_ms: s.u * self.speed_unit,
            v_ms: s.v * self.speed_unit,
            m_kg: s.m * self.mass_unit,
        }
    }

    /// Altitude in meters of a nondimensional radius.
    pub fn altitude_m(&self, r: f64) -> f64 {
        (r - 1.0) * self.length_unit
    }
}

/// Lander state in SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionalState {
    pub r_m: f64,
    pub u_ms: f64,
    pub v_ms: f64,
    pub m_kg: f64,
}

/// Nondimensional lander state: radius, transverse speed, radial speed, mass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub r: f64,
    pub u: f64,
    pub v: f64,
    pub m: f64,
}

impl State {
    pub const fn new(r: f64, u: f64, v: f64, m: f64) -> Self {
        Self { r, u, v, m }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.u, self.v, self.m]
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self { r: a[0], u: a[1], v: a[2], m: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Adjoint variables paired one-to-one with [`State`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Costate {
    pub pr: f64,
    pub pu: f64,
    pub pv: f64,
    pub pm: f64,
}

impl Costate {
    pub const fn new(pr: f64, pu: f64, pv: f64, pm: f64) -> Self {
        Self { pr, pu, pv, pm }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.pr, self.pu, self.pv, self.pm]
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self { pr: a[0], pu: a[1], pv: a[2], pm: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Everything the dynamics need, fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub constants: PhysicalConstants,
    pub reg: RegularizationConfig,
    pub scaling: ScalingSet,
    /// Thrust in units of `m0 mu / R0^2`.
    pub nondim_thrust: f64,
    /// Mass flow in units of `m0 / time_unit`.
    pub nondim_mdot: f64,
}

impl ProblemConfig {
    pub fn new(constants: PhysicalConstants, reg: RegularizationConfig) -> Result<Self, ConfigError> {
        reg.validate()?;
        let scaling = make_scaling(&constants)?;
        let nondim_thrust = constants.thrust_n / scaling.thrust_unit;
        let nondim_mdot = constants.mass_flow_kg_s() * scaling.time_unit / scaling.mass_unit;
        Ok(Self { constants, reg, scaling, nondim_thrust, nondim_mdot })
    }

    pub fn lunar_default() -> Self {
        Self::new(PhysicalConstants::lunar_default(), RegularizationConfig::default())
            .expect("default constants are valid")
    }

    /// Same problem with a different regularization weight.
    pub fn with_delta(&self, delta: f64) -> Result<Self, ConfigError> {
        let reg = RegularizationConfig::new(delta, self.reg.epsilon)?;
        Ok(Self { reg, ..*self })
    }

    /// Dimensional mass consumed over a nondimensional time span.
    pub fn fuel_kg(&self, nondim_duration: f64) -> f64 {
        self.constants.mass_flow_kg_s() * nondim_duration * self.scaling.time_unit
    }

    pub fn time_s(&self, nondim_t: f64) -> f64 {
        nondim_t * self.scaling.time_unit
    }

    /// Short content hash identifying this configuration in output metadata.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
