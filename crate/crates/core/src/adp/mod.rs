//! Approximate dynamic programming over the hat-time grid.
//!
//! For every grid step `k` a linear-in-parameter network maps
//! `phi(t1, x_k)` to the next costate `lambda_{k+1}`; the control follows
//! from stationarity, `u_k = -R^-1 g(x_k)' lambda_{k+1}` (the phase-length
//! factors of `R` and `g` cancel). Networks are fitted backward in time from
//! the terminal costate, then the free switching time is chosen by sweeping
//! closed-loop rollouts.

mod basis;
mod lqr;
mod network;
mod problem;
mod sweep;
mod train;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::plant::PlantError;
use crate::trajectory::Trajectory;
use crate::transform::TransformError;

pub use basis::PolynomialBasis;
pub use lqr::{lqr_oracle, riccati, LqrSolution, OracleSolution};
pub use network::{CostateNetwork, TrainingReport, WeightHistoryRow};
pub use problem::{OcProblem, Stationarity, TrainingConfig};
pub use sweep::{candidate_grid, sweep_switching_times, write_cost_curve, SweepResult};
pub use train::{
    closed_loop_from, closed_loop_simulate, costate_at, costate_target, policy, train_backward, ControlTarget,
};

#[derive(Debug, Error)]
pub enum AdpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step {k}: active phase has zero length, policy undefined")]
    DegeneratePhase { k: usize },
    #[error("step {k}: regression ill-conditioned (condition number {condition:e})")]
    Conditioning { k: usize, condition: f64 },
    #[error("step {k}: training diverged (non-finite costate target)")]
    Diverged { k: usize },
    #[error("step {k}: {source}")]
    Plant { k: usize, source: PlantError },
    #[error("step {k}: regression failed: {source}")]
    Regression { k: usize, source: LinalgError },
    #[error("closed-loop simulation stopped at step {step}: {source}")]
    Simulation {
        step: usize,
        source: Box<AdpError>,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("network file: {0}")]
    Json(#[from] serde_json::Error),
}
