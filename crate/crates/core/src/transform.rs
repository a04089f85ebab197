//! Hat-time reparametrization of a fixed mode sequence.
//!
//! Phase `i` of a schedule with switching instants `t_0 <= t_1 <= ... <= t_P`
//! is stretched onto the unit interval `[i, i + 1)` of the hat-time axis, so
//! the switching instants become ordinary parameters of the dynamics and the
//! cost. The module also holds the Euler discretization on the hat-time grid
//! and the quadratic tracking cost evaluated on it.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::plant::PlantError;
use crate::system::SwitchedSystem;
use crate::trajectory::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time {0} lies inside a zero-length phase; hat time is ambiguous")]
    AmbiguousInverse(f64),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Fixed mode sequence with its switching instants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule<M> {
    pub modes: Vec<M>,
    /// Interior switching instants `t_1 .. t_{P-1}`.
    pub switch_times: Vec<f64>,
    pub t0: f64,
    pub tf: f64,
}

impl<M: Copy + fmt::Debug> ModeSchedule<M> {
    pub fn new(modes: Vec<M>, switch_times: Vec<f64>, t0: f64, tf: f64) -> Result<Self, TransformError> {
        let s = Self {
            modes,
            switch_times,
            t0,
            tf,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.modes.is_empty() {
            return Err(TransformError::InvalidArgument("empty mode sequence".into()));
        }
        if self.modes.len() != self.switch_times.len() + 1 {
            return Err(TransformError::InvalidArgument(format!(
                "{} modes need {} switching times, got {}",
                self.modes.len(),
                self.modes.len() - 1,
                self.switch_times.len()
            )));
        }
        let mut prev = self.t0;
        for (i, &t) in self.switch_times.iter().chain(std::iter::once(&self.tf)).enumerate() {
            if !t.is_finite() || !prev.is_finite() || t < prev {
                return Err(TransformError::InvalidArgument(format!(
                    "switching instants must be nondecreasing (boundary {} = {t} < {prev})",
                    i + 1
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Number of phases `P`.
    pub fn phase_count(&self) -> usize {
        self.modes.len()
    }

    /// Phase boundary `t_i`, with `t_0` the start and `t_P` the final time.
    pub fn boundary(&self, i: usize) -> f64 {
        if i == 0 {
            self.t0
        } else if i >= self.phase_count() {
            self.tf
        } else {
            self.switch_times[i - 1]
        }
    }

    pub fn phase_length(&self, i: usize) -> f64 {
        self.boundary(i + 1) - self.boundary(i)
    }

    /// Phase active at real time `t`. The new mode owns its switching instant.
    pub fn phase_at_time(&self, t: f64) -> usize {
        let last = self.phase_count() - 1;
        (0..=last).rev().find(|&i| self.boundary(i) <= t).unwrap_or(0)
    }

    pub fn mode_at_time(&self, t: f64) -> M {
        self.modes[self.phase_at_time(t)]
    }

    /// Phase containing hat time `t_hat`; `t_hat = P` belongs to the last phase.
    pub fn phase_at_hat(&self, t_hat: f64) -> usize {
        (t_hat.floor().max(0.0) as usize).min(self.phase_count() - 1)
    }

    /// Real time of hat time `t_hat` in `[0, P]`.
    pub fn hat_to_time(&self, t_hat: f64) -> Result<f64, TransformError> {
        let p = self.phase_count() as f64;
        if !(0.0..=p).contains(&t_hat) {
            return Err(TransformError::InvalidArgument(format!(
                "hat time {t_hat} outside [0, {p}]"
            )));
        }
        let i = self.phase_at_hat(t_hat);
        Ok(self.boundary(i) + self.phase_length(i) * (t_hat - i as f64))
    }

    /// Inverse of [`hat_to_time`](Self::hat_to_time).
    pub fn time_to_hat(&self, t: f64) -> Result<f64, TransformError> {
        if !(self.t0..=self.tf).contains(&t) {
            return Err(TransformError::InvalidArgument(format!(
                "time {t} outside [{}, {}]",
                self.t0, self.tf
            )));
        }
        let p = self.phase_count();
        if (0..p).any(|i| self.phase_length(i) == 0.0 && self.boundary(i) == t) {
            return Err(TransformError::AmbiguousInverse(t));
        }
        let i = self.phase_at_time(t);
        let len = self.phase_length(i);
        if len == 0.0 {
            // Only reachable for t == tf behind a trailing empty phase.
            return Err(TransformError::AmbiguousInverse(t));
        }
        Ok(i as f64 + (t - self.boundary(i)) / len)
    }
}

/// Schedule whose interior switching instant `free_index` is left free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTemplate<M> {
    pub modes: Vec<M>,
    /// Interior switching instants; the entry at `free_index` is a placeholder.
    pub switch_times: Vec<f64>,
    pub free_index: usize,
    pub t0: f64,
    pub tf: f64,
}

impl<M: Copy + fmt::Debug> ScheduleTemplate<M> {
    /// Two-phase template with a single free switching time.
    pub fn single_switch(first: M, second: M, t0: f64, tf: f64) -> Self {
        Self {
            modes: vec![first, second],
            switch_times: vec![0.5 * (t0 + tf)],
            free_index: 0,
            t0,
            tf,
        }
    }

    pub fn phase_count(&self) -> usize {
        self.modes.len()
    }

    pub fn instantiate(&self, t1: f64) -> Result<ModeSchedule<M>, TransformError> {
        if self.free_index >= self.switch_times.len() {
            return Err(TransformError::InvalidArgument(format!(
                "free switch index {} but only {} switching times",
                self.free_index,
                self.switch_times.len()
            )));
        }
        let mut times = self.switch_times.clone();
        times[self.free_index] = t1;
        ModeSchedule::new(self.modes.clone(), times, self.t0, self.tf)
    }
}

/// Uniform grid on the hat-time axis: `N' = P / delta_hat` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HatGrid {
    pub delta_hat: f64,
    pub steps_per_phase: usize,
    pub phase_count: usize,
}

impl HatGrid {
    pub fn new(delta_hat: f64, phase_count: usize) -> Result<Self, TransformError> {
        if !(delta_hat > 0.0 && delta_hat <= 1.0) {
            return Err(TransformError::InvalidArgument(format!(
                "delta_hat must lie in (0, 1], got {delta_hat}"
            )));
        }
        if phase_count == 0 {
            return Err(TransformError::InvalidArgument("zero phases".into()));
        }
        let steps = (1.0 / delta_hat).round();
        if (steps * delta_hat - 1.0).abs() > 1e-9 {
            return Err(TransformError::InvalidArgument(format!(
                "delta_hat {delta_hat} does not divide the unit phase"
            )));
        }
        Ok(Self {
            delta_hat,
            steps_per_phase: steps as usize,
            phase_count,
        })
    }

    /// Total number of steps `N'`.
    pub fn n_prime(&self) -> usize {
        self.steps_per_phase * self.phase_count
    }

    /// Phase owning step `k` (half-open blocks of `steps_per_phase`).
    pub fn phase_of(&self, k: usize) -> usize {
        (k / self.steps_per_phase).min(self.phase_count - 1)
    }

    /// Hat time of grid index `k`; exact at phase boundaries.
    pub fn hat_time(&self, k: usize) -> f64 {
        k as f64 / self.steps_per_phase as f64
    }

    /// Grid indices of the phase boundaries `0, N'/P, ..., N'`.
    pub fn phase_boundaries(&self) -> Vec<usize> {
        (0..=self.phase_count).map(|i| i * self.steps_per_phase).collect()
    }
}

/// Quadratic tracking weights: terminal `S`, running `Q_bar`, control `R_bar`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    pub s: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(s: DMatrix<f64>, q_bar: DMatrix<f64>, r_bar: DMatrix<f64>) -> Result<Self, TransformError> {
        let n = s.nrows();
        if !s.is_square() || q_bar.shape() != (n, n) || !r_bar.is_square() {
            return Err(TransformError::InvalidArgument(
                "S and Q_bar must be n x n and R_bar m x m".into(),
            ));
        }
        if !linalg::is_psd(&s, 1e-10) {
            return Err(TransformError::InvalidArgument("S is not symmetric PSD".into()));
        }
        if !linalg::is_psd(&q_bar, 1e-10) {
            return Err(TransformError::InvalidArgument("Q_bar is not symmetric PSD".into()));
        }
        if !linalg::is_pd(&r_bar) {
            return Err(TransformError::InvalidArgument("R_bar is not symmetric PD".into()));
        }
        Ok(Self { s, q_bar, r_bar })
    }

    pub fn from_diagonals(s: &[f64], q_bar: &[f64], r_bar: &[f64]) -> Result<Self, TransformError> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(s)),
            DMatrix::from_diagonal(&DVector::from_column_slice(q_bar)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r_bar)),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.r_bar.nrows()
    }
}

/// Reference signal `r(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Constant {
        value: Vec<f64>,
    },
    /// `r(t) = r0` plus, on each listed channel, the exact integral of
    /// `sin(pi t)` from 0: `(1 - cos(pi t)) / pi`.
    ClosedFormSine {
        r0: Vec<f64>,
        channels: Vec<usize>,
    },
    /// Piecewise-linear interpolation through samples, held at the ends.
    Samples {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Reference {
    pub fn zero(n: usize) -> Self {
        Reference::Constant { value: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Reference::Constant { value } => value.len(),
            Reference::ClosedFormSine { r0, .. } => r0.len(),
            Reference::Samples { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        match self {
            Reference::Constant { .. } => Ok(()),
            Reference::ClosedFormSine { r0, channels } => match channels.iter().find(|&&c| c >= r0.len()) {
                Some(c) => Err(TransformError::InvalidArgument(format!(
                    "reference channel {c} outside state dimension {}",
                    r0.len()
                ))),
                None => Ok(()),
            },
            Reference::Samples { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(TransformError::InvalidArgument(
                        "reference samples need matching, nonempty times and values".into(),
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(TransformError::InvalidArgument(
                        "reference sample times must be increasing".into(),
                    ));
                }
                let n = values[0].len();
                if values.iter().any(|v| v.len() != n) {
                    return Err(TransformError::InvalidArgument(
                        "reference samples have inconsistent lengths".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            Reference::Constant { value } => DVector::from_column_slice(value),
            Reference::ClosedFormSine { r0, channels } => {
                let mut r = DVector::from_column_slice(r0);
                let rise = (1.0 - (PI * t).cos()) / PI;
                for &c in channels {
                    r[c] += rise;
                }
                r
            }
            Reference::Samples { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return DVector::from_column_slice(&values[0]);
                }
                if t >= times[last] {
                    return DVector::from_column_slice(&values[last]);
                }
                let j = times.partition_point(|&s| s <= t);
                let (t_a, t_b) = (times[j - 1], times[j]);
                let w = (t - t_a) / (t_b - t_a);
                let a = DVector::from_column_slice(&values[j - 1]);
                let b = DVector::from_column_slice(&values[j]);
                a * (1.0 - w) + b * w
            }
        }
    }
}

/// Hat-time derivative `x'(t_hat) = (f_v + g_v u) (t_{i+1} - t_i)`.
pub fn transformed_derivative<S: SwitchedSystem>(
    system: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t_hat: f64,
    sched: &ModeSchedule<S::Mode>,
) -> Result<DVector<f64>, TransformError> {
    let p = sched.phase_count() as f64;
    if !(0.0..=p).contains(&t_hat) {
        return Err(TransformError::InvalidArgument(format!(
            "hat time {t_hat} outside [0, {p}]"
        )));
    }
    let i = sched.phase_at_hat(t_hat);
    let len = sched.phase_length(i);
    if len == 0.0 {
        return Ok(DVector::zeros(x.len()));
    }
    Ok(system.derivative(sched.modes[i], x, u)? * len)
}

/// One Euler step on the hat-time grid.
pub fn discretize_step<S: SwitchedSystem>(
    system: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
    sched: &ModeSchedule<S::Mode>,
    grid: &HatGrid,
) -> Result<DVector<f64>, TransformError> {
    if k >= grid.n_prime() {
        return Err(TransformError::InvalidArgument(format!(
            "step {k} outside [0, {})",
            grid.n_prime()
        )));
    }
    let i = grid.phase_of(k);
    let h = sched.phase_length(i) * grid.delta_hat;
    if h == 0.0 {
        return Ok(x.clone());
    }
    Ok(x + system.derivative(sched.modes[i], x, u)? * h)
}

/// Running cost of step `k`: `1/2 (e' Q e + u' R u) * len_i * delta_hat`.
pub fn stage_cost<M: Copy + fmt::Debug>(
    x: &DVector<f64>,
    u: &DVector<f64>,
    r: &DVector<f64>,
    k: usize,
    sched: &ModeSchedule<M>,
    grid: &HatGrid,
    weights: &CostWeights,
) -> f64 {
    let h = sched.phase_length(grid.phase_of(k)) * grid.delta_hat;
    let e = x - r;
    0.5 * h * (e.dot(&(&weights.q_bar * &e)) + u.dot(&(&weights.r_bar * u)))
}

/// Terminal cost `(x - r)' S (x - r)`.
pub fn terminal_cost(x: &DVector<f64>, r: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let e = x - r;
    e.dot(&(s * &e))
}

/// Reference at grid index `k`, read through the time map of `sched`.
pub fn reference_at_step<M: Copy + fmt::Debug>(
    reference: &Reference,
    k: usize,
    sched: &ModeSchedule<M>,
    grid: &HatGrid,
) -> DVector<f64> {
    // k <= N' keeps the hat time inside [0, P].
    let t = sched
        .hat_to_time(grid.hat_time(k))
        .expect("grid index inside the schedule");
    reference.at(t)
}

/// Recomputes the discretized cost of a trajectory on `grid`.
pub fn total_cost<M: Copy + fmt::Debug>(
    traj: &Trajectory,
    sched: &ModeSchedule<M>,
    grid: &HatGrid,
    weights: &CostWeights,
    reference: &Reference,
) -> Result<f64, TransformError> {
    let n = grid.n_prime();
    if traj.states.len() != n + 1 || traj.controls.len() != n {
        return Err(TransformError::InvalidArgument(format!(
            "trajectory has {} states and {} controls, grid needs {} and {}",
            traj.states.len(),
            traj.controls.len(),
            n + 1,
            n
        )));
    }
    let mut total = 0.0;
    for k in 0..n {
        let r = reference_at_step(reference, k, sched, grid);
        total += stage_cost(&traj.states[k], &traj.controls[k], &r, k, sched, grid, weights);
    }
    let r_n = reference_at_step(reference, n, sched, grid);
    total += terminal_cost(&traj.states[n], &r_n, &weights.s);
    Ok(total)
}
