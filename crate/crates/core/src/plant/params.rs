use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{N_CONTROLS, N_STATES};

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("cannot read parameter file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse parameter file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing parameter `{0}`")]
    MissingKey(String),
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("parameter `{0}` must be a number")]
    NotANumber(String),
    #[error("invalid parameter `{key}` = {value}: {reason}")]
    Invalid { key: String, value: f64, reason: String },
}

macro_rules! wl_params {
    (
        required { $( $(#[$rdoc:meta])* $rfield:ident = $rkey:literal, )* }
        optional { $( $(#[$odoc:meta])* $ofield:ident = $okey:literal : $odefault:expr, )* }
    ) => {
        /// Wheel-loader constants plus normalization scales.
        ///
        /// Field names follow the parameter-file keys; see
        /// [`WlParams::REQUIRED_KEYS`] and [`WlParams::OPTIONAL_KEYS`].
        #[derive(Clone, Debug, PartialEq)]
        pub struct WlParams {
            $( $(#[$rdoc])* pub $rfield: f64, )*
            $( $(#[$odoc])* pub $ofield: f64, )*
            /// State scales X1..X11.
            pub state_scales: [f64; N_STATES],
            /// Control scales U1..U4.
            pub control_scales: [f64; N_CONTROLS],
        }

        impl WlParams {
            pub const REQUIRED_KEYS: &'static [&'static str] = &[$($rkey),*];
            pub const OPTIONAL_KEYS: &'static [&'static str] = &[$($okey),*];

            fn with_required(values: &BTreeMap<String, f64>) -> Result<Self, ParamsError> {
                let get = |k: &str| values.get(k).copied().ok_or_else(|| ParamsError::MissingKey(k.to_string()));
                let get_or = |k: &str, d: f64| values.get(k).copied().unwrap_or(d);
                let mut state_scales = DEFAULT_STATE_SCALES;
                for (i, s) in state_scales.iter_mut().enumerate() {
                    *s = get_or(&format!("X{}", i + 1), *s);
                }
                let mut control_scales = DEFAULT_CONTROL_SCALES;
                for (j, s) in control_scales.iter_mut().enumerate() {
                    *s = get_or(&format!("U{}", j + 1), *s);
                }
                Ok(Self {
                    $( $rfield: get($rkey)?, )*
                    $( $ofield: get_or($okey, $odefault), )*
                    state_scales,
                    control_scales,
                })
            }

            /// All parameters as `(key, value)` pairs in file order.
            pub fn to_pairs(&self) -> Vec<(String, f64)> {
                let mut out = vec![
                    $( ($rkey.to_string(), self.$rfield), )*
                    $( ($okey.to_string(), self.$ofield), )*
                ];
                out.extend(self.state_scales.iter().enumerate().map(|(i, &v)| (format!("X{}", i + 1), v)));
                out.extend(self.control_scales.iter().enumerate().map(|(j, &v)| (format!("U{}", j + 1), v)));
                out
            }

            fn is_known(key: &str) -> bool {
                Self::REQUIRED_KEYS.contains(&key)
                    || Self::OPTIONAL_KEYS.contains(&key)
                    || scale_index(key, 'X', N_STATES).is_some()
                    || scale_index(key, 'U', N_CONTROLS).is_some()
            }
        }
    };
}

pub const DEFAULT_STATE_SCALES: [f64; N_STATES] = [1.0, 1.0, PI / 2.0, 1.0, 30.0, 30.0, 3.0, PI, 0.6, 5e5, 0.5];
pub const DEFAULT_CONTROL_SCALES: [f64; N_CONTROLS] = [5e5, 0.5, 1.0, 5e5];

wl_params! {
    required {
        /// Engine inertia, kg m^2.
        j_e = "J_e",
        /// Lift arm segment lengths, m.
        r1 = "r1",
        r2 = "r2",
        /// Bend angle between the arm segments, rad.
        theta1 = "theta1",
        /// Number of lift cylinders.
        n_lc = "n_lc",
        /// Lift cylinder piston area, m^2.
        a_lc = "A_lc",
        y_g = "y_g",
        eta_lift = "eta_lift",
        y_off = "y_off",
        /// Total mass, kg.
        m_tot = "M_tot",
        mu_roll = "mu_roll",
        /// Rolling resistance, N.
        f_roll = "F_roll",
        /// Wheel base, m.
        l = "L",
        rho_f = "rho_f",
        /// Wheel radius, m.
        r_w = "R_w",
        /// Pump torque line intercept and slope.
        t1 = "T1",
        t2 = "T2",
        eta_gb = "eta_gb",
        /// Steering power coefficient.
        c_st = "C_st",
        /// Bucket and arm weights, N.
        f_buc = "F_buc",
        f_arm = "F_arm",
        /// Boom inertia, kg m^2.
        i_boom = "I_boom",
    }
    optional {
        /// Engine speed of one normalized unit, rad/s.
        engine_speed_scale = "engine_speed_scale": 220.0,
        /// Engine torque of one normalized unit, N m.
        engine_torque_scale = "engine_torque_scale": 300.0,
        /// Engine friction: constant and speed-proportional parts (normalized torque).
        engine_drag0 = "engine_drag0": 0.74,
        engine_drag1 = "engine_drag1": 20.0,
        /// Pump torque of one unit on the pump torque line, N m.
        pump_torque_scale = "pump_torque_scale": 60.0,
        /// Viscous boom joint damping, N m s/rad (hydraulic line resistance).
        boom_damping = "boom_damping": 2.0e5,
        delta_max = "delta_max": 0.6,
        theta_min = "theta_min": -PI / 4.0,
        theta_max = "theta_max": PI / 2.0,
        omega_e_min = "omega_e_min": 0.15,
        omega_e_max = "omega_e_max": 1.5,
    }
}

fn scale_index(key: &str, prefix: char, n: usize) -> Option<usize> {
    let rest = key.strip_prefix(prefix)?;
    let i: usize = rest.parse().ok()?;
    (1..=n).contains(&i).then_some(i - 1)
}

impl Default for WlParams {
    /// Published wheel-loader constants.
    fn default() -> Self {
        let m_tot = 31330.0;
        let mu_roll = 0.03;
        let f_buc = 0.0981 * m_tot;
        let values: BTreeMap<String, f64> = [
            ("J_e", 0.43),
            ("r1", 2.0),
            ("r2", 2.0),
            ("theta1", PI / 6.0),
            ("n_lc", 2.0),
            ("A_lc", 0.0284),
            ("y_g", 2.13),
            ("eta_lift", 0.5),
            ("y_off", 0.5),
            ("M_tot", m_tot),
            ("mu_roll", mu_roll),
            ("F_roll", 9.81 * mu_roll * m_tot),
            ("L", 3.7),
            ("rho_f", 832.0),
            ("R_w", 0.3175),
            ("T1", 5.0),
            ("T2", -2.5),
            ("eta_gb", 0.9),
            ("C_st", 1e5),
            ("F_buc", f_buc),
            ("F_arm", f_buc),
            ("I_boom", 1200.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self::with_required(&values).expect("defaults are complete")
    }
}

impl WlParams {
    /// Builds parameters from a key/value map, checking names and invariants.
    pub fn from_map(values: &BTreeMap<String, f64>) -> Result<Self, ParamsError> {
        if let Some(k) = values.keys().find(|k| !Self::is_known(k)) {
            return Err(ParamsError::UnknownKey(k.clone()));
        }
        let p = Self::with_required(values)?;
        p.validate()?;
        Ok(p)
    }

    /// Loads a flat JSON object or TOML table of numbers.
    pub fn from_file(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let values = if is_json {
            Self::parse_json(&text)
        } else {
            Self::parse_toml(&text)
        }
        .map_err(|e| match e {
            ParamsError::Parse { message, .. } => ParamsError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        Self::from_map(&values)
    }

    fn parse_json(text: &str) -> Result<BTreeMap<String, f64>, ParamsError> {
        let parse_err = |message: String| ParamsError::Parse {
            path: PathBuf::new(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("expected a JSON object".into()))?;
        obj.iter()
            .map(|(k, v)| {
                v.as_f64()
                    .map(|x| (k.clone(), x))
                    .ok_or_else(|| ParamsError::NotANumber(k.clone()))
            })
            .collect()
    }

    fn parse_toml(text: &str) -> Result<BTreeMap<String, f64>, ParamsError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ParamsError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        table
            .iter()
            .map(|(k, v)| {
                let x = match v {
                    toml::Value::Float(f) => Some(*f),
                    toml::Value::Integer(i) => Some(*i as f64),
                    _ => None,
                };
                x.map(|x| (k.clone(), x))
                    .ok_or_else(|| ParamsError::NotANumber(k.clone()))
            })
            .collect()
    }

    /// Flat TOML rendering of every parameter.
    pub fn to_toml(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v:?}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let invalid = |key: &str, value: f64, reason: &str| ParamsError::Invalid {
            key: key.to_string(),
            value,
            reason: reason.to_string(),
        };
        for (k, v) in self.to_pairs() {
            if !v.is_finite() {
                return Err(invalid(&k, v, "not finite"));
            }
        }
        let positive = [
            ("J_e", self.j_e),
            ("r1", self.r1),
            ("r2", self.r2),
            ("n_lc", self.n_lc),
            ("A_lc", self.a_lc),
            ("M_tot", self.m_tot),
            ("L", self.l),
            ("R_w", self.r_w),
            ("I_boom", self.i_boom),
            ("engine_speed_scale", self.engine_speed_scale),
            ("engine_torque_scale", self.engine_torque_scale),
            ("pump_torque_scale", self.pump_torque_scale),
            ("delta_max", self.delta_max),
        ];
        for (k, v) in positive {
            if v <= 0.0 {
                return Err(invalid(k, v, "must be strictly positive"));
            }
        }
        for (k, v) in [("eta_lift", self.eta_lift), ("eta_gb", self.eta_gb)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(k, v, "efficiency must lie in (0, 1]"));
            }
        }
        for (k, v) in [
            ("mu_roll", self.mu_roll),
            ("C_st", self.c_st),
            ("F_buc", self.f_buc),
            ("F_arm", self.f_arm),
            ("boom_damping", self.boom_damping),
        ] {
            if v < 0.0 {
                return Err(invalid(k, v, "must be nonnegative"));
            }
        }
        let f_roll = 9.81 * self.mu_roll * self.m_tot;
        if (self.f_roll - f_roll).abs() > 1e-6 * f_roll.abs().max(1.0) {
            return Err(invalid(
                "F_roll",
                self.f_roll,
                &format!("must equal 9.81 mu_roll M_tot = {f_roll}"),
            ));
        }
        if self.delta_max >= PI / 2.0 {
            return Err(invalid("delta_max", self.delta_max, "must be below pi/2"));
        }
        if self.theta_min >= self.theta_max {
            return Err(invalid("theta_min", self.theta_min, "must be below theta_max"));
        }
        if !(self.omega_e_min > 0.0 && self.omega_e_min < self.omega_e_max) {
            return Err(invalid("omega_e_min", self.omega_e_min, "must lie in (0, omega_e_max)"));
        }
        for (i, &s) in self.state_scales.iter().enumerate() {
            if s <= 0.0 {
                return Err(invalid(&format!("X{}", i + 1), s, "scale must be positive"));
            }
        }
        for (j, &s) in self.control_scales.iter().enumerate() {
            if s <= 0.0 {
                return Err(invalid(&format!("U{}", j + 1), s, "scale must be positive"));
            }
        }
        Ok(())
    }
}
