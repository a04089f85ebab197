//! Sampled state/control histories and their CSV form.
//!
//! Row `k` of the CSV holds `t_k`, `x_k`, the control applied on
//! `[t_k, t_{k+1})`, the active mode and the stage cost of that step. The
//! final row has zero controls and carries the terminal cost in the
//! `stage_cost` column.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory csv: {0}")]
    Format(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// One control per step, `states.len() - 1` entries.
    pub controls: Vec<DVector<f64>>,
    /// Mode label per row.
    pub modes: Vec<String>,
    /// One stage cost per step.
    pub stage_costs: Vec<f64>,
    /// Costate used by the policy at each step, when recorded. Not exported.
    pub costates: Vec<DVector<f64>>,
    pub terminal_cost: f64,
}

impl Trajectory {
    pub fn start(t0: f64, x0: DVector<f64>, mode: impl ToString) -> Self {
        Self {
            times: vec![t0],
            states: vec![x0],
            modes: vec![mode.to_string()],
            ..Default::default()
        }
    }

    /// Appends a step: the control and cost applied from the current last
    /// row, and the state reached at `t`.
    pub fn push(&mut self, u: DVector<f64>, stage_cost: f64, t: f64, x: DVector<f64>, mode: impl ToString) {
        self.controls.push(u);
        self.stage_costs.push(stage_cost);
        self.times.push(t);
        self.states.push(x);
        self.modes.push(mode.to_string());
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum::<f64>() + self.terminal_cost
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, DVector::len)
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, DVector::len)
    }

    /// Column `i` of the state history.
    pub fn state_series(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[i]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W, control_dim: usize) -> Result<(), TrajectoryError> {
        let n = self.state_dim();
        let m = if self.controls.is_empty() {
            control_dim
        } else {
            self.control_dim()
        };
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|j| format!("u{j}")));
        header.push("mode".into());
        header.push("stage_cost".into());
        out.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut row = Vec::with_capacity(n + m + 3);
            row.push(self.times[k].to_string());
            row.extend(self.states[k].iter().map(f64::to_string));
            match self.controls.get(k) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n("0".to_string(), m)),
            }
            row.push(self.modes[k].clone());
            let cost = self.stage_costs.get(k).copied().unwrap_or(self.terminal_cost);
            row.push(cost.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, control_dim: usize) -> Result<(), TrajectoryError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), control_dim)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TrajectoryError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if header.len() != n + m + 3 || header.get(0) != Some("t") {
            return Err(TrajectoryError::Format(format!("unexpected header {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| TrajectoryError::Format(format!("not a number: `{s}`")))
        };
        let mut traj = Trajectory::default();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?);
        }
        let last = rows
            .len()
            .checked_sub(1)
            .ok_or_else(|| TrajectoryError::Format("no rows".into()))?;
        for (k, rec) in rows.iter().enumerate() {
            traj.times.push(num(&rec[0])?);
            let x = (1..=n).map(|i| num(&rec[i])).collect::<Result<Vec<_>, _>>()?;
            traj.states.push(DVector::from_vec(x));
            traj.modes.push(rec[n + m + 1].to_string());
            let cost = num(&rec[n + m + 2])?;
            if k < last {
                let u = (n + 1..=n + m).map(|j| num(&rec[j])).collect::<Result<Vec<_>, _>>()?;
                traj.controls.push(DVector::from_vec(u));
                traj.stage_costs.push(cost);
            } else {
                traj.terminal_cost = cost;
            }
        }
        Ok(traj)
    }

    pub fn load_csv(path: &Path) -> Result<Self, TrajectoryError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
