//! Optimal switching-time control for a wheel loader short loading cycle.
//!
//! The crate is organised bottom-up:
//!
//! * [`engine_fit`] identifies the mean-value engine model (torque map and
//!   intake-manifold dynamics) from excitation data.
//! * [`plant`] holds the 11-state control-affine wheel-loader dynamics and the
//!   fixed-step integrators.
//! * [`transform`] maps switching instants onto the hat-time axis, where every
//!   phase occupies a unit interval, and defines the discretized cost.
//! * [`adp`] trains per-step costate networks backward in time, extracts the
//!   feedback policy and sweeps the free switching time.
//!
//! Batch work (training samples, switching-time sweeps) runs on rayon when the
//! `parallel` feature is enabled; see [`par`].

pub mod adp;
pub mod engine_fit;
pub mod linalg;
pub mod par;
pub mod plant;
pub mod slc;
pub mod system;
pub mod trajectory;
pub mod transform;

pub use adp::{CostateNetwork, OcProblem, TrainingConfig};
pub use plant::{Mode, WheelLoader, WlParams};
pub use system::{LinearSwitchedSystem, SwitchedSystem};
pub use trajectory::Trajectory;
pub use transform::{CostWeights, HatGrid, ModeSchedule, Reference, ScheduleTemplate};
