use nalgebra::DVector;
use thiserror::Error;

use super::PlantError;
use crate::system::SwitchedSystem;
use crate::trajectory::Trajectory;
use crate::transform::ModeSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

/// Simulation aborted by a plant guard; `partial` holds the rows computed so far.
#[derive(Debug, Error)]
#[error("simulation stopped at step {step} (t = {time}): {source}")]
pub struct SimulationError {
    pub step: usize,
    pub time: f64,
    pub source: PlantError,
    pub partial: Trajectory,
}

/// `x + dt f(x, u)`, followed by the plant's step constraint.
pub fn step_euler<S: SwitchedSystem>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mode: S::Mode,
    dt: f64,
) -> Result<DVector<f64>, PlantError> {
    if dt == 0.0 {
        return Ok(x.clone());
    }
    let mut next = x + sys.derivative(mode, x, u)? * dt;
    sys.constrain(mode, u, x, &mut next);
    Ok(next)
}

/// Classical four-stage Runge-Kutta step with `u` and `mode` held. All
/// stages use the sign branch of `x`, so a step that reaches a
/// discontinuity lands past it and the plant constraint can resolve it.
pub fn step_rk4<S: SwitchedSystem>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mode: S::Mode,
    dt: f64,
) -> Result<DVector<f64>, PlantError> {
    if dt == 0.0 {
        return Ok(x.clone());
    }
    let k1 = sys.derivative(mode, x, u)?;
    let k2 = sys.derivative_on_branch(mode, &(x + &k1 * (0.5 * dt)), u, x)?;
    let k3 = sys.derivative_on_branch(mode, &(x + &k2 * (0.5 * dt)), u, x)?;
    let k4 = sys.derivative_on_branch(mode, &(x + &k3 * dt), u, x)?;
    let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    sys.constrain(mode, u, x, &mut next);
    Ok(next)
}

/// Fixed-step simulation over `steps` steps starting at `sched.t0`.
///
/// `control(k, t, x)` is held over step `k`; the mode is the one active at the
/// start of the step.
pub fn integrate<S, F>(
    sys: &S,
    x0: &DVector<f64>,
    mut control: F,
    sched: &ModeSchedule<S::Mode>,
    dt: f64,
    steps: usize,
    method: Method,
) -> Result<Trajectory, SimulationError>
where
    S: SwitchedSystem,
    F: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
{
    let t0 = sched.t0;
    let mut traj = Trajectory::start(t0, x0.clone(), sched.mode_at_time(t0));
    let fail = |step: usize, time: f64, source: PlantError, partial: Trajectory| SimulationError {
        step,
        time,
        source,
        partial,
    };
    if !(dt > 0.0) {
        return Err(fail(
            0,
            t0,
            PlantError::InvalidArgument(format!("dt must be positive, got {dt}")),
            traj,
        ));
    }
    let mut x = x0.clone();
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let mode = sched.mode_at_time(t);
        let u = control(k, t, &x);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(fail(k, t, PlantError::NonFinite("control"), traj));
        }
        let next = match method {
            Method::Euler => step_euler(sys, &x, &u, mode, dt),
            Method::Rk4 => step_rk4(sys, &x, &u, mode, dt),
        };
        let next = match next {
            Ok(n) if n.iter().all(|v| v.is_finite()) => n,
            Ok(_) => return Err(fail(k, t, PlantError::NonFinite("state"), traj)),
            Err(e) => return Err(fail(k, t, e, traj)),
        };
        let t_next = t0 + (k + 1) as f64 * dt;
        traj.push(u, 0.0, t_next, next.clone(), sched.mode_at_time(t_next));
        x = next;
    }
    Ok(traj)
}

/// [`integrate`] with the RK4 method.
pub fn integrate_rk4<S, F>(
    sys: &S,
    x0: &DVector<f64>,
    control: F,
    sched: &ModeSchedule<S::Mode>,
    dt: f64,
    steps: usize,
) -> Result<Trajectory, SimulationError>
where
    S: SwitchedSystem,
    F: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
{
    integrate(sys, x0, control, sched, dt, steps, Method::Rk4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::LinearSwitchedSystem;
    use nalgebra::DMatrix;

    fn decay() -> (LinearSwitchedSystem, ModeSchedule<usize>) {
        let sys = LinearSwitchedSystem::new(vec![DMatrix::from_element(1, 1, -1.0)], vec![DMatrix::zeros(1, 1)]);
        (sys, ModeSchedule::new(vec![0], vec![], 0.0, 1.0).unwrap())
    }

    #[test]
    fn zero_step_is_identity() {
        let (sys, _) = decay();
        let x = DVector::from_element(1, 0.7);
        let u = DVector::zeros(1);
        assert_eq!(step_euler(&sys, &x, &u, 0, 0.0).unwrap(), x);
        assert_eq!(step_rk4(&sys, &x, &u, 0, 0.0).unwrap(), x);
    }

    #[test]
    fn euler_decay() {
        let (sys, sched) = decay();
        let x0 = DVector::from_element(1, 1.0);
        let tr = integrate(
            &sys,
            &x0,
            |_, _, _| DVector::zeros(1),
            &sched,
            1e-3,
            1000,
            Method::Euler,
        )
        .unwrap();
        let end = tr.final_state()[0];
        assert!((end - 0.3677).abs() < 1e-3, "{end}");
        assert!((end - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn rk4_decay() {
        let (sys, sched) = decay();
        let x0 = DVector::from_element(1, 1.0);
        let tr = integrate_rk4(&sys, &x0, |_, _, _| DVector::zeros(1), &sched, 1e-3, 1000).unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert_eq!(tr.states.len(), 1001);
        assert_eq!(tr.controls.len(), 1000);
    }

    #[test]
    fn bad_step_rejected() {
        let (sys, sched) = decay();
        let x0 = DVector::from_element(1, 1.0);
        assert!(integrate_rk4(&sys, &x0, |_, _, _| DVector::zeros(1), &sched, -1.0, 3).is_err());
    }
}
