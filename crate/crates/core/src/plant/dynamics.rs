use nalgebra::{DMatrix, DVector};

use super::{cidx, idx, sign, Mode, PlantError, WlParams, N_CONTROLS, N_STATES};
use crate::engine_fit::EngineWeights;
use crate::system::SwitchedSystem;

/// Moments about the boom hinge, N m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftTorques {
    /// `F_cyl R sin(alpha)`.
    pub cylinder: f64,
    pub bucket: f64,
    pub arm: f64,
}

impl LiftTorques {
    pub fn net(&self) -> f64 {
        self.cylinder - self.bucket - self.arm
    }
}

/// Engine load split by consumer, W.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadPower {
    pub lift: f64,
    pub steering: f64,
    pub traction: f64,
}

impl LoadPower {
    pub fn total(&self) -> f64 {
        self.lift + self.steering + self.traction
    }
}

fn check_boom(theta: f64, p: &WlParams) -> Result<(), PlantError> {
    if !(p.theta_min..=p.theta_max).contains(&theta) {
        return Err(PlantError::BoomRange(theta, p.theta_min, p.theta_max));
    }
    Ok(())
}

fn check_steering(delta: f64, p: &WlParams) -> Result<(), PlantError> {
    if !(delta.abs() < p.delta_max) {
        return Err(PlantError::SteeringLimit(delta.abs(), p.delta_max));
    }
    Ok(())
}

/// Angle between the cylinder force and the lift arm, clipped to `(0, pi)`.
pub fn cylinder_angle(theta: f64, p: &WlParams) -> f64 {
    let a = (p.y_g - p.y_off).atan2(p.r1 * theta.cos()) + theta;
    a.clamp(f64::EPSILON, std::f64::consts::PI - f64::EPSILON)
}

pub fn lift_torques(theta: f64, u_p: f64, p: &WlParams) -> Result<LiftTorques, PlantError> {
    check_boom(theta, p)?;
    let f_cyl = p.n_lc * p.a_lc * u_p;
    let lever = p.r1 * theta.cos() + p.r2 * (theta + p.theta1).cos();
    Ok(LiftTorques {
        cylinder: f_cyl * p.r1 * cylinder_angle(theta, p).sin(),
        bucket: p.f_buc * lever,
        arm: p.f_arm * 0.5 * p.r1 * theta.cos(),
    })
}

/// Lift pressure that holds the boom still at `theta`, Pa.
pub fn holding_pressure(theta: f64, p: &WlParams) -> Result<f64, PlantError> {
    let t = lift_torques(theta, 1.0, p)?;
    Ok((t.bucket + t.arm) / t.cylinder)
}

/// Cylinder oil flow at boom rate `omega`, m^3/s.
pub fn lift_flow(omega: f64, p: &WlParams) -> f64 {
    p.n_lc * p.a_lc * p.r1 * omega
}

/// Pump torque on the hydrostatic torque line, N m.
pub fn pump_torque(omega_e: f64, v: f64, mode: Mode, p: &WlParams) -> f64 {
    let gamma = mode.gamma();
    if gamma == 0.0 {
        return 0.0;
    }
    let ratio = gamma * v / (p.r_w * omega_e * p.engine_speed_scale);
    p.pump_torque_scale * (p.t1 + p.t2 * ratio).max(0.0)
}

/// Wheel force, N. `omega_e` is normalized engine speed.
pub fn traction_force(omega_e: f64, v: f64, mode: Mode, p: &WlParams) -> f64 {
    let gamma = mode.gamma();
    sign(gamma) * p.eta_gb * gamma.abs() * pump_torque(omega_e, v, mode, p) / p.r_w
}

pub fn turning_radius(delta: f64, p: &WlParams) -> Result<f64, PlantError> {
    check_steering(delta, p)?;
    Ok(p.l / delta.tan())
}

/// `V tan(delta) / L`, finite at `delta = 0`.
pub fn heading_rate(v: f64, delta: f64, p: &WlParams) -> Result<f64, PlantError> {
    check_steering(delta, p)?;
    Ok(v * delta.tan() / p.l)
}

/// Load power at a physical state.
pub fn engine_load_power(x: &[f64], mode: Mode, p: &WlParams) -> LoadPower {
    let q = lift_flow(x[idx::OMEGA], p);
    let traction = if mode.gamma() == 0.0 {
        0.0
    } else {
        x[idx::OMEGA_E] * p.engine_speed_scale * pump_torque(x[idx::OMEGA_E], x[idx::V], mode, p)
    };
    LoadPower {
        lift: (q * x[idx::U_P] / p.eta_lift).max(0.0),
        steering: p.c_st * x[idx::U_S] * x[idx::U_S],
        traction,
    }
}

pub fn nondimensionalize(x: &[f64], scales: &[f64]) -> Result<DVector<f64>, PlantError> {
    check_scales(x, scales)?;
    Ok(DVector::from_iterator(
        x.len(),
        x.iter().zip(scales).map(|(v, s)| v / s),
    ))
}

pub fn redimensionalize(x: &[f64], scales: &[f64]) -> Result<DVector<f64>, PlantError> {
    check_scales(x, scales)?;
    Ok(DVector::from_iterator(
        x.len(),
        x.iter().zip(scales).map(|(v, s)| v * s),
    ))
}

fn check_scales(x: &[f64], scales: &[f64]) -> Result<(), PlantError> {
    if x.len() != scales.len() {
        return Err(PlantError::InvalidArgument(format!(
            "{} values but {} scales",
            x.len(),
            scales.len()
        )));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0)) {
        return Err(PlantError::InvalidArgument(format!("scale {s} is not positive")));
    }
    Ok(())
}

/// Wheel loader in nondimensional coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct WheelLoader {
    pub params: WlParams,
    pub engine: EngineWeights,
}

/// Same plant in physical units (engine states stay in engine-model units).
#[derive(Clone, Copy, Debug)]
pub struct PhysicalWheelLoader<'a>(pub &'a WheelLoader);

impl WheelLoader {
    pub fn new(params: WlParams, engine: EngineWeights) -> Self {
        Self { params, engine }
    }

    pub fn physical(&self) -> PhysicalWheelLoader<'_> {
        PhysicalWheelLoader(self)
    }

    pub fn to_physical(&self, x: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        redimensionalize(x.as_slice(), &self.params.state_scales)
    }

    pub fn to_normalized(&self, x: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        nondimensionalize(x.as_slice(), &self.params.state_scales)
    }

    pub fn control_to_physical(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        redimensionalize(u.as_slice(), &self.params.control_scales)
    }

    pub fn control_to_normalized(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        nondimensionalize(u.as_slice(), &self.params.control_scales)
    }

    /// Checks the state guards on a physical state.
    pub fn check_state(&self, x: &[f64]) -> Result<(), PlantError> {
        let p = &self.params;
        if x.len() != N_STATES {
            return Err(PlantError::InvalidArgument(format!("state has {} entries", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::NonFinite("state"));
        }
        let w = x[idx::OMEGA_E];
        if !(p.omega_e_min..=p.omega_e_max).contains(&w) {
            return Err(PlantError::EngineStall(w, p.omega_e_min, p.omega_e_max));
        }
        check_steering(x[idx::DELTA], p)?;
        check_boom(x[idx::THETA], p)?;
        let tau = self.engine.tau_p(w);
        if tau <= 0.0 {
            return Err(PlantError::ManifoldTimeConstant { tau, omega_e: w });
        }
        Ok(())
    }

    /// Drift and input matrix at a physical state.
    pub fn physical_affine_terms(
        &self,
        mode: Mode,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        self.physical_affine_terms_on_branch(mode, x, sign(x[idx::V]))
    }

    /// As [`physical_affine_terms`](Self::physical_affine_terms) with the
    /// direction of rolling resistance and braking fixed to `speed_sign`.
    pub fn physical_affine_terms_on_branch(
        &self,
        mode: Mode,
        x: &DVector<f64>,
        speed_sign: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        self.check_state(x.as_slice())?;
        let p = &self.params;
        let e = &self.engine;
        let mut f = DVector::zeros(N_STATES);
        let mut g = DMatrix::zeros(N_STATES, N_CONTROLS);

        let w = x[idx::OMEGA_E];
        let p_im = x[idx::P_IM];
        let v = x[idx::V];
        let beta = x[idx::BETA];
        let speed = p.engine_speed_scale;
        let inertia = p.j_e * speed;

        let load = engine_load_power(x.as_slice(), mode, p).total();
        let net_torque = e.torque(w, p_im, 0.0) - p.engine_drag0 - p.engine_drag1 * w;
        f[idx::OMEGA_E] = (p.engine_torque_scale * net_torque - load / (speed * w)) / inertia;
        g[(idx::OMEGA_E, cidx::U_F)] = p.engine_torque_scale * e.w_te[3] / inertia;

        let tau = e.tau_p(w);
        f[idx::P_IM] = (e.p_stat(w, 0.0) - p_im) / tau;
        g[(idx::P_IM, cidx::U_F)] = e.a2 / tau;

        f[idx::THETA] = x[idx::OMEGA];
        let boom = lift_torques(x[idx::THETA], x[idx::U_P], p)?.net() - p.boom_damping * x[idx::OMEGA];
        f[idx::OMEGA] = boom / p.i_boom;

        f[idx::X] = v * beta.cos();
        f[idx::Y] = v * beta.sin();
        f[idx::V] = (traction_force(w, v, mode, p) - speed_sign * p.f_roll) / p.m_tot;
        g[(idx::V, cidx::U_B)] = -speed_sign / p.m_tot;
        f[idx::BETA] = heading_rate(v, x[idx::DELTA], p)?;
        f[idx::DELTA] = x[idx::U_S];
        g[(idx::U_P, cidx::DU_P)] = 1.0;
        g[(idx::U_S, cidx::DU_S)] = 1.0;
        Ok((f, g))
    }
}

/// A stopped vehicle cannot be pushed backwards by brakes or rolling
/// resistance: when a Stop-mode step carries the speed through zero it
/// ends at rest instead.
fn coulomb_stop(mode: Mode, u: &DVector<f64>, prev: &DVector<f64>, next: &mut DVector<f64>) {
    if mode == Mode::Stop && u[cidx::U_B] >= 0.0 {
        let (a, b) = (prev[idx::V], next[idx::V]);
        if a != 0.0 && a * b <= 0.0 {
            next[idx::V] = 0.0;
        }
    }
}

impl WheelLoader {
    fn normalized_terms(
        &self,
        mode: Mode,
        x: &DVector<f64>,
        speed_sign: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        let xs = &self.params.state_scales;
        let us = &self.params.control_scales;
        let phys = self.to_physical(x)?;
        let (mut f, mut g) = self.physical_affine_terms_on_branch(mode, &phys, speed_sign)?;
        for i in 0..N_STATES {
            f[i] /= xs[i];
            for j in 0..N_CONTROLS {
                g[(i, j)] *= us[j] / xs[i];
            }
        }
        Ok((f, g))
    }
}

impl SwitchedSystem for WheelLoader {
    type Mode = Mode;

    fn state_dim(&self) -> usize {
        N_STATES
    }

    fn control_dim(&self) -> usize {
        N_CONTROLS
    }

    fn affine_terms(&self, mode: Mode, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        self.normalized_terms(mode, x, sign(x[idx::V]))
    }

    fn derivative_on_branch(
        &self,
        mode: Mode,
        x: &DVector<f64>,
        u: &DVector<f64>,
        anchor: &DVector<f64>,
    ) -> Result<DVector<f64>, PlantError> {
        let (f, g) = self.normalized_terms(mode, x, sign(anchor[idx::V]))?;
        Ok(f + g * u)
    }

    fn constrain(&self, mode: Mode, u: &DVector<f64>, prev: &DVector<f64>, next: &mut DVector<f64>) {
        coulomb_stop(mode, u, prev, next);
    }
}

impl SwitchedSystem for PhysicalWheelLoader<'_> {
    type Mode = Mode;

    fn state_dim(&self) -> usize {
        N_STATES
    }

    fn control_dim(&self) -> usize {
        N_CONTROLS
    }

    fn affine_terms(&self, mode: Mode, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        self.0.physical_affine_terms(mode, x)
    }

    fn derivative_on_branch(
        &self,
        mode: Mode,
        x: &DVector<f64>,
        u: &DVector<f64>,
        anchor: &DVector<f64>,
    ) -> Result<DVector<f64>, PlantError> {
        let (f, g) = self.0.physical_affine_terms_on_branch(mode, x, sign(anchor[idx::V]))?;
        Ok(f + g * u)
    }

    fn constrain(&self, mode: Mode, u: &DVector<f64>, prev: &DVector<f64>, next: &mut DVector<f64>) {
        coulomb_stop(mode, u, prev, next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn plant() -> WheelLoader {
        WheelLoader::new(WlParams::default(), EngineWeights::published())
    }

    fn nominal() -> DVector<f64> {
        // Normalized: engine at 0.7, boom holding at theta = 0, rolling backwards.
        DVector::from_vec(vec![0.7, 3.0, 0.0, 0.0, 0.1, 0.1, -0.2, 1.2, 0.1, 0.405, 0.0])
    }

    #[test]
    fn braking_has_no_effect_at_rest() {
        let sys = plant();
        let mut x = nominal();
        x[idx::V] = 0.0;
        let (_, g) = sys.affine_terms(Mode::Backward, &x).unwrap();
        assert_eq!(g[(idx::V, cidx::U_B)], 0.0);
    }

    #[test]
    fn stop_mode_gates_traction() {
        let p = WlParams::default();
        for v in [-2.0, 0.0, 3.0] {
            assert_eq!(traction_force(0.8, v, Mode::Stop, &p), 0.0);
            let mut x = vec![0.0; N_STATES];
            x[0] = 0.8;
            x[idx::V] = v;
            assert_eq!(engine_load_power(&x, Mode::Stop, &p).traction, 0.0);
        }
    }

    #[test]
    fn straight_wheels_hold_heading() {
        let p = WlParams::default();
        assert_eq!(heading_rate(3.0, 0.0, &p).unwrap(), 0.0);
        assert_eq!(
            heading_rate(0.4, -0.3, &p).unwrap(),
            -heading_rate(0.4, 0.3, &p).unwrap()
        );
    }

    #[test]
    fn turning_radius_at_45_degrees() {
        let mut p = WlParams::default();
        p.delta_max = 0.9;
        assert_relative_eq!(turning_radius(PI / 4.0, &p).unwrap(), 3.7, epsilon = 1e-12);
        assert!(matches!(
            turning_radius(0.6, &WlParams::default()),
            Err(PlantError::SteeringLimit(..))
        ));
    }

    #[test]
    fn lift_power_clamped_when_descending() {
        let p = WlParams::default();
        let mut x = vec![0.0; N_STATES];
        x[idx::OMEGA] = -0.2;
        x[idx::U_P] = 2e5;
        assert_eq!(engine_load_power(&x, Mode::Stop, &p).lift, 0.0);
    }

    #[test]
    fn idle_load_is_zero() {
        let p = WlParams::default();
        let mut x = vec![0.0; N_STATES];
        x[0] = 0.8;
        x[idx::OMEGA] = -0.1;
        x[idx::U_P] = 1e5;
        assert_eq!(engine_load_power(&x, Mode::Stop, &p).total(), 0.0);
    }

    #[test]
    fn steering_power_from_normalized_rate() {
        let p = WlParams::default();
        let mut x = vec![0.0; N_STATES];
        x[idx::U_S] = 0.1 * p.state_scales[idx::U_S];
        let expected = 1e5 * (0.1 * 0.5_f64).powi(2);
        assert_relative_eq!(engine_load_power(&x, Mode::Stop, &p).steering, expected, epsilon = 1e-9);
    }

    #[test]
    fn cylinder_force_and_torques() {
        let p = WlParams::default();
        assert_eq!(lift_torques(0.3, 0.0, &p).unwrap().cylinder, 0.0);
        // F_cyl at 1e5 Pa is n_lc A_lc u_p = 5680 N.
        let t = lift_torques(0.0, 1e5, &p).unwrap();
        let alpha = cylinder_angle(0.0, &p);
        assert_relative_eq!(t.cylinder / (p.r1 * alpha.sin()), 5680.0, epsilon = 1e-9);
        // Bucket lever vertical when r1 cos(theta) + r2 cos(theta + pi/6) = 0; with
        // r1 = r2 that is theta = 5 pi / 12.
        assert!(lift_torques(5.0 * PI / 12.0, 1e5, &p).unwrap().bucket.abs() < 1e-9);
        assert!(matches!(lift_torques(1.7, 1e5, &p), Err(PlantError::BoomRange(..))));
    }

    #[test]
    fn traction_direction_follows_gear() {
        let p = WlParams::default();
        let fwd = traction_force(0.7, 0.0, Mode::Forward, &p);
        assert!(fwd > 0.0);
        assert_relative_eq!(traction_force(0.7, 0.0, Mode::Backward, &p), -fwd);
        // Mirrored state: reversing both gear and speed.
        assert_relative_eq!(
            traction_force(0.7, -1.0, Mode::Backward, &p),
            -traction_force(0.7, 1.0, Mode::Forward, &p)
        );
    }

    #[test]
    fn guards_fire() {
        let sys = plant();
        let mut x = nominal();
        x[0] = 0.1;
        assert!(matches!(
            sys.affine_terms(Mode::Stop, &x),
            Err(PlantError::EngineStall(..))
        ));
        let mut x = nominal();
        x[idx::DELTA] = 1.0; // 0.6 rad physical
        assert!(matches!(
            sys.affine_terms(Mode::Stop, &x),
            Err(PlantError::SteeringLimit(..))
        ));
        let mut x = nominal();
        x[idx::V] = f64::NAN;
        assert!(matches!(
            sys.affine_terms(Mode::Stop, &x),
            Err(PlantError::NonFinite(_))
        ));
    }

    #[test]
    fn normalization_round_trip() {
        let p = WlParams::default();
        let ones = nondimensionalize(&p.state_scales, &p.state_scales).unwrap();
        assert!(ones.iter().all(|&v| v == 1.0));
        let x = [0.7, 3.0, 0.2, -0.1, 4.0, -3.0, 1.5, 0.3, 0.05, 2e5, 0.01];
        let back = redimensionalize(
            nondimensionalize(&x, &p.state_scales).unwrap().as_slice(),
            &p.state_scales,
        )
        .unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-15 * a.abs());
        }
        assert!(nondimensionalize(&x, &[0.0; 11]).is_err());
    }

    #[test]
    fn boom_holds_near_reference_pressure() {
        let sys = plant();
        let (f, _) = sys.affine_terms(Mode::Stop, &nominal()).unwrap();
        assert!(f[idx::OMEGA].abs() < 0.05, "{}", f[idx::OMEGA]);
    }

    #[test]
    fn normalized_derivative_matches_physical() {
        let sys = plant();
        let x = nominal();
        let u = DVector::from_vec(vec![0.1, -0.2, 0.8, 0.05]);
        let d = sys.derivative(Mode::Backward, &x, &u).unwrap();
        let xp = sys.to_physical(&x).unwrap();
        let up = sys.control_to_physical(&u).unwrap();
        let dp = sys.physical().derivative(Mode::Backward, &xp, &up).unwrap();
        let dn = sys.to_normalized(&dp).unwrap();
        for i in 0..N_STATES {
            assert_relative_eq!(d[i], dn[i], epsilon = 1e-12, max_relative = 1e-12);
        }
    }
}
