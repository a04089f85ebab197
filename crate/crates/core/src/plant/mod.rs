//! Eleven-state wheel-loader model.
//!
//! States: engine speed, intake manifold pressure, boom angle and rate,
//! planar position, longitudinal speed, heading, steering angle, and the two
//! augmented actuator states (lift pressure and steering rate). Controls:
//! lift pressure rate, steering acceleration, fuel per cycle, brake force.
//! Everything the optimizer sees is nondimensional; the physical model is
//! available through [`WheelLoader::physical`].

mod dynamics;
mod integrate;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dynamics::{
    cylinder_angle, engine_load_power, heading_rate, holding_pressure, lift_flow, lift_torques, nondimensionalize,
    pump_torque, redimensionalize, traction_force, turning_radius, LiftTorques, LoadPower, PhysicalWheelLoader,
    WheelLoader,
};
pub use integrate::{integrate, integrate_rk4, step_euler, Method, SimulationError};
pub use params::{ParamsError, WlParams};

pub const N_STATES: usize = 11;
pub const N_CONTROLS: usize = 4;

/// State indices (0-based).
pub mod idx {
    pub const OMEGA_E: usize = 0;
    pub const P_IM: usize = 1;
    pub const THETA: usize = 2;
    pub const OMEGA: usize = 3;
    pub const X: usize = 4;
    pub const Y: usize = 5;
    pub const V: usize = 6;
    pub const BETA: usize = 7;
    pub const DELTA: usize = 8;
    pub const U_P: usize = 9;
    pub const U_S: usize = 10;
}

/// Control indices (0-based).
pub mod cidx {
    pub const DU_P: usize = 0;
    pub const DU_S: usize = 1;
    pub const U_F: usize = 2;
    pub const U_B: usize = 3;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("engine stall guard: normalized engine speed {0} outside [{1}, {2}]")]
    EngineStall(f64, f64, f64),
    #[error("steering limit: |delta| = {0} rad reaches delta_max = {1} rad")]
    SteeringLimit(f64, f64),
    #[error("boom range: theta = {0} rad outside [{1}, {2}]")]
    BoomRange(f64, f64, f64),
    #[error("manifold time constant tau_p = {tau} is not positive at omega_e = {omega_e}")]
    ManifoldTimeConstant { tau: f64, omega_e: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown mode {0}")]
    UnknownMode(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Gear direction of the transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Backward,
    Stop,
    Forward,
}

impl Mode {
    /// Gear ratio gamma.
    pub fn gamma(self) -> f64 {
        match self {
            Mode::Backward => -60.0,
            Mode::Stop => 0.0,
            Mode::Forward => 60.0,
        }
    }

    pub fn from_gamma(gamma: i32) -> Result<Self, PlantError> {
        match gamma {
            -60 => Ok(Mode::Backward),
            0 => Ok(Mode::Stop),
            60 => Ok(Mode::Forward),
            g => Err(PlantError::InvalidArgument(format!(
                "gear ratio must be -60, 0 or 60, got {g}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Backward => "backward",
            Mode::Stop => "stop",
            Mode::Forward => "forward",
        }
    }

    /// Short-loading-cycle sequence.
    pub fn slc_sequence() -> [Mode; 4] {
        [Mode::Backward, Mode::Stop, Mode::Forward, Mode::Stop]
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PlantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "backward" | "backwarding" => Ok(Mode::Backward),
            "stop" | "stopping" => Ok(Mode::Stop),
            "forward" | "forwarding" => Ok(Mode::Forward),
            other => other
                .parse::<i32>()
                .map_err(|_| PlantError::InvalidArgument(format!("unknown mode `{s}`")))
                .and_then(Mode::from_gamma),
        }
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
