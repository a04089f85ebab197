//! Open-loop short loading cycle: manual switching times and piecewise
//! constant control segments on the four-phase mode sequence.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::plant::{
    cidx, engine_load_power, holding_pressure, idx, integrate, Method, Mode, PlantError, SimulationError, WheelLoader,
    WlParams, N_CONTROLS,
};
use crate::trajectory::Trajectory;
use crate::transform::ModeSchedule;

/// Adds `value` to control `channel` (0-based, normalized) on `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSegment {
    pub channel: usize,
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenLoopScenario {
    pub modes: Vec<Mode>,
    pub switch_times: Vec<f64>,
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    /// Normalized initial state.
    pub x0: Vec<f64>,
    pub segments: Vec<ControlSegment>,
}

/// Per-phase speed and heading figures of an open-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub mode: Mode,
    pub t_start: f64,
    pub t_end: f64,
    /// Normalized speed extremes and final value.
    pub v_min: f64,
    pub v_max: f64,
    pub v_end: f64,
    /// Heading at the phase end, degrees.
    pub heading_end_deg: f64,
    /// Largest traction power drawn during the phase, W.
    pub traction_power_max: f64,
}

impl OpenLoopScenario {
    /// Four-phase demo: reverse out of the pile while steering, brake to a
    /// stop, drive forward while straightening the wheels and lifting, stop.
    pub fn demo(params: &WlParams) -> Self {
        let hold = holding_pressure(0.0, params).expect("boom angle 0 is in range");
        let x0 = vec![
            0.7,
            3.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            hold / params.state_scales[idx::U_P],
            0.0,
        ];
        let seg = |channel, start, end, value| ControlSegment {
            channel,
            start,
            end,
            value,
        };
        Self {
            modes: Mode::slc_sequence().to_vec(),
            switch_times: vec![5.0, 7.0, 12.0],
            t0: 0.0,
            tf: 15.0,
            dt: 1e-3,
            x0,
            segments: vec![
                seg(cidx::U_F, 0.0, 15.0, 0.8),
                seg(cidx::DU_S, 0.3, 1.3, 1.0),
                seg(cidx::DU_S, 1.3, 2.3, -1.0),
                seg(cidx::U_B, 5.0, 7.0, 0.1),
                seg(cidx::DU_S, 7.5, 8.5, -1.0),
                seg(cidx::DU_S, 8.5, 9.5, 1.0),
                seg(cidx::DU_P, 7.0, 9.0, 0.05),
                seg(cidx::U_B, 12.0, 15.0, 0.1),
            ],
        }
    }

    pub fn schedule(&self) -> Result<ModeSchedule<Mode>, PlantError> {
        ModeSchedule::new(self.modes.clone(), self.switch_times.clone(), self.t0, self.tf)
            .map_err(|e| PlantError::InvalidArgument(e.to_string()))
    }

    pub fn steps(&self) -> usize {
        ((self.tf - self.t0) / self.dt).round() as usize
    }

    pub fn control_at(&self, t: f64) -> DVector<f64> {
        let mut u = DVector::zeros(N_CONTROLS);
        for s in &self.segments {
            if s.start <= t && t < s.end {
                u[s.channel] += s.value;
            }
        }
        u
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.schedule()?;
        if !(self.dt > 0.0) {
            return Err(PlantError::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.x0.len() != crate::plant::N_STATES {
            return Err(PlantError::InvalidArgument(format!(
                "x0 has {} entries, need 11",
                self.x0.len()
            )));
        }
        if let Some(s) = self.segments.iter().find(|s| s.channel >= N_CONTROLS) {
            return Err(PlantError::InvalidArgument(format!(
                "control channel {} out of range",
                s.channel
            )));
        }
        Ok(())
    }

    /// RK4 simulation; the error carries the rows computed before a guard fired.
    pub fn run(&self, plant: &WheelLoader) -> Result<Trajectory, Box<SimulationError>> {
        let sched = self.schedule().map_err(|source| {
            Box::new(SimulationError {
                step: 0,
                time: self.t0,
                source,
                partial: Trajectory::default(),
            })
        })?;
        let x0 = DVector::from_column_slice(&self.x0);
        integrate(
            plant,
            &x0,
            |_, t, _| self.control_at(t),
            &sched,
            self.dt,
            self.steps(),
            Method::Rk4,
        )
        .map_err(Box::new)
    }
}

/// Speed, heading and traction figures for each phase of `traj`.
pub fn summarize(traj: &Trajectory, sched: &ModeSchedule<Mode>, plant: &WheelLoader) -> Vec<PhaseSummary> {
    let mut out = Vec::new();
    for i in 0..sched.phase_count() {
        let (a, b) = (sched.boundary(i), sched.boundary(i + 1));
        let rows: Vec<usize> = (0..traj.states.len())
            .filter(|&k| {
                let t = traj.times[k];
                t >= a - 1e-12 && t <= b + 1e-12
            })
            .collect();
        let Some(&last) = rows.last() else { continue };
        let v: Vec<f64> = rows.iter().map(|&k| traj.states[k][idx::V]).collect();
        let traction = rows
            .iter()
            .filter(|&&k| sched.phase_at_time(traj.times[k]) == i)
            .map(|&k| {
                let phys = plant.to_physical(&traj.states[k]).expect("scales are positive");
                engine_load_power(phys.as_slice(), sched.modes[i], &plant.params).traction
            })
            .fold(0.0, f64::max);
        out.push(PhaseSummary {
            mode: sched.modes[i],
            t_start: a,
            t_end: b,
            v_min: v.iter().copied().fold(f64::INFINITY, f64::min),
            v_max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            v_end: traj.states[last][idx::V],
            heading_end_deg: traj.states[last][idx::BETA] * plant.params.state_scales[idx::BETA] * 180.0 / PI,
            traction_power_max: traction,
        });
    }
    out
}
