//! Mean-value engine identification.
//!
//! A synthetic engine (linear torque map, first-order manifold pressure with a
//! speed-dependent time constant) is driven by random square-wave inputs.
//! The torque weights are recovered by batch least squares and the manifold
//! parameters by sequential gradient descent.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular regressor matrix: column `{0}` is linearly dependent on the others")]
    RankDeficient(&'static str),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const TORQUE_COLUMNS: [&str; 4] = ["bias", "omega_e", "p_im", "u_f"];

/// Max-abs scale of each dataset column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScales {
    pub omega_e: f64,
    pub p_im: f64,
    pub u_f: f64,
    pub t_e: f64,
}

impl NormScales {
    pub fn unit() -> Self {
        Self {
            omega_e: 1.0,
            p_im: 1.0,
            u_f: 1.0,
            t_e: 1.0,
        }
    }
}

/// Mean-value engine parameters in engine-model units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineWeights {
    /// Torque weights on `[1, omega_e, p_im, u_f]`.
    pub w_te: [f64; 4],
    pub tau1: f64,
    pub tau2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// Dataset scales the weights were identified under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<NormScales>,
}

impl EngineWeights {
    /// Published identified constants.
    pub fn published() -> Self {
        Self {
            w_te: [
                -0.154712845456646,
                0.555616949283938,
                4.84689263976440,
                0.450411638112411,
            ],
            tau1: 5.94705195850280,
            tau2: -0.703974251212264,
            a1: 3.07399910699804,
            a2: 0.467292644030092,
            a3: 0.467292644032403,
            scales: None,
        }
    }

    pub fn torque(&self, omega_e: f64, p_im: f64, u_f: f64) -> f64 {
        predict_torque(&self.w_te, omega_e, p_im, u_f)
    }

    pub fn tau_p(&self, omega_e: f64) -> f64 {
        self.tau1 * omega_e + self.tau2
    }

    pub fn p_stat(&self, omega_e: f64, u_f: f64) -> f64 {
        self.a1 * omega_e + self.a2 * u_f + self.a3
    }

    pub fn manifold(&self) -> ManifoldParams {
        ManifoldParams {
            tau1: self.tau1,
            tau2: self.tau2,
            a1: self.a1,
            a2: self.a2,
            a3: self.a3,
        }
    }

    pub fn validate(&self, omega_min: f64, omega_max: f64) -> Result<(), FitError> {
        let all = [
            self.w_te[0],
            self.w_te[1],
            self.w_te[2],
            self.w_te[3],
            self.tau1,
            self.tau2,
            self.a1,
            self.a2,
            self.a3,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidArgument(
                "engine weights contain non-finite values".into(),
            ));
        }
        for w in [omega_min, omega_max] {
            if self.tau_p(w) <= 0.0 {
                return Err(FitError::InvalidArgument(format!(
                    "tau_p({w}) = {} is not positive",
                    self.tau_p(w)
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FitError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FitError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Manifold-pressure parameters `tau_p = tau1 w + tau2`, `p_stat = a1 w + a2 u + a3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldParams {
    pub tau1: f64,
    pub tau2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl ManifoldParams {
    pub fn splat(v: f64) -> Self {
        Self::from_array([v; 5])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.tau1, self.tau2, self.a1, self.a2, self.a3]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            tau1: a[0],
            tau2: a[1],
            a1: a[2],
            a2: a[3],
            a3: a[4],
        }
    }

    /// Parameters of the same model written in scaled signals `w/sw`, `p/sp`, `u/su`.
    pub fn to_scaled(self, s: &NormScales) -> Self {
        Self {
            tau1: self.tau1 * s.omega_e,
            tau2: self.tau2,
            a1: self.a1 * s.omega_e / s.p_im,
            a2: self.a2 * s.u_f / s.p_im,
            a3: self.a3 / s.p_im,
        }
    }

    pub fn from_scaled(self, s: &NormScales) -> Self {
        Self {
            tau1: self.tau1 / s.omega_e,
            tau2: self.tau2,
            a1: self.a1 * s.p_im / s.omega_e,
            a2: self.a2 * s.p_im / s.u_f,
            a3: self.a3 * s.p_im,
        }
    }

    /// Largest relative deviation from `truth` over the five parameters.
    pub fn max_relative_error(&self, truth: &ManifoldParams) -> f64 {
        self.to_array()
            .iter()
            .zip(truth.to_array())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    }

    /// One Euler step of the manifold pressure.
    pub fn step(&self, p: f64, omega_e: f64, u_f: f64, dt: f64) -> f64 {
        let tau = self.tau1 * omega_e + self.tau2;
        p + dt * (self.a1 * omega_e + self.a2 * u_f + self.a3 - p) / tau
    }
}

/// Piecewise-constant excitation.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSignal {
    pub times: Vec<f64>,
    pub u_f: Vec<f64>,
    pub omega_e: Vec<f64>,
    pub pulse_width: f64,
}

impl InputSignal {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends `other`, shifting its clock to continue on the same grid.
    pub fn concat(mut self, other: &InputSignal, sample_dt: f64) -> InputSignal {
        let offset = self.times.len();
        self.times
            .extend((0..other.len()).map(|i| (offset + i) as f64 * sample_dt));
        self.u_f.extend_from_slice(&other.u_f);
        self.omega_e.extend_from_slice(&other.omega_e);
        self
    }
}

/// Speed channel range used by [`generate_excitation`]; below ~0.12 the
/// manifold time constant turns negative.
pub const DEFAULT_SPEED_RANGE: (f64, f64) = (0.15, 1.0);

/// Random square wave: fuel drawn from `[0, 1]`, speed from
/// [`DEFAULT_SPEED_RANGE`], both redrawn at every pulse boundary.
pub fn generate_excitation(
    duration: f64,
    pulse_width: f64,
    sample_dt: f64,
    seed: u64,
) -> Result<InputSignal, FitError> {
    generate_excitation_in(duration, pulse_width, sample_dt, seed, DEFAULT_SPEED_RANGE)
}

pub fn generate_excitation_in(
    duration: f64,
    pulse_width: f64,
    sample_dt: f64,
    seed: u64,
    speed_range: (f64, f64),
) -> Result<InputSignal, FitError> {
    if !(duration > 0.0) || !(pulse_width > 0.0) || pulse_width > duration {
        return Err(FitError::InvalidArgument(format!(
            "need 0 < pulse_width <= duration, got pulse_width {pulse_width}, duration {duration}"
        )));
    }
    if !(sample_dt > 0.0) || sample_dt > pulse_width {
        return Err(FitError::InvalidArgument(format!(
            "need 0 < sample_dt <= pulse_width, got {sample_dt}"
        )));
    }
    let (lo, hi) = speed_range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(FitError::InvalidArgument(format!(
            "speed range [{lo}, {hi}] not inside [0, 1]"
        )));
    }
    let n = (duration / sample_dt).round() as usize;
    let pulses = (duration / pulse_width).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<(f64, f64)> = (0..pulses)
        .map(|_| {
            let u: f64 = rng.random();
            let w: f64 = rng.random();
            (u, lo + (hi - lo) * w)
        })
        .collect();
    let mut sig = InputSignal {
        times: Vec::with_capacity(n),
        u_f: Vec::with_capacity(n),
        omega_e: Vec::with_capacity(n),
        pulse_width,
    };
    for i in 0..n {
        let t = i as f64 * sample_dt;
        let j = ((t / pulse_width + 1e-9).floor() as usize).min(pulses - 1);
        sig.times.push(t);
        sig.u_f.push(levels[j].0);
        sig.omega_e.push(levels[j].1);
    }
    Ok(sig)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Training,
    Validation,
}

/// Engine measurements on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineDataset {
    pub times: Vec<f64>,
    pub omega_e: Vec<f64>,
    pub p_im: Vec<f64>,
    pub u_f: Vec<f64>,
    pub t_e: Vec<f64>,
    pub split: Split,
    /// Scales already divided out of the columns (`None` for raw data).
    pub scales: Option<NormScales>,
}

impl EngineDataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> EngineDataset {
        let n = n.min(self.len());
        EngineDataset {
            times: self.times[..n].to_vec(),
            omega_e: self.omega_e[..n].to_vec(),
            p_im: self.p_im[..n].to_vec(),
            u_f: self.u_f[..n].to_vec(),
            t_e: self.t_e[..n].to_vec(),
            split: self.split,
            scales: self.scales,
        }
    }

    /// Max-abs scale of each column.
    pub fn max_abs_scales(&self) -> Result<NormScales, FitError> {
        let m = |v: &[f64], name: &str| {
            let s = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            if s > 0.0 {
                Ok(s)
            } else {
                Err(FitError::InvalidArgument(format!("column {name} is identically zero")))
            }
        };
        Ok(NormScales {
            omega_e: m(&self.omega_e, "omega_e")?,
            p_im: m(&self.p_im, "p_im")?,
            u_f: m(&self.u_f, "u_f")?,
            t_e: m(&self.t_e, "T_e")?,
        })
    }

    /// Divides each column by `scales` (raw data only).
    pub fn normalized(&self, scales: &NormScales) -> Result<EngineDataset, FitError> {
        if self.scales.is_some() {
            return Err(FitError::InvalidArgument("dataset is already normalized".into()));
        }
        let div = |v: &[f64], s: f64| v.iter().map(|x| x / s).collect::<Vec<_>>();
        Ok(EngineDataset {
            times: self.times.clone(),
            omega_e: div(&self.omega_e, scales.omega_e),
            p_im: div(&self.p_im, scales.p_im),
            u_f: div(&self.u_f, scales.u_f),
            t_e: div(&self.t_e, scales.t_e),
            split: self.split,
            scales: Some(*scales),
        })
    }

    /// Uniform sample spacing, or an error if the grid is not uniform.
    pub fn sample_dt(&self) -> Result<f64, FitError> {
        if self.len() < 2 {
            return Err(FitError::InvalidArgument("need at least two samples".into()));
        }
        let dt = self.times[1] - self.times[0];
        let uniform = dt > 0.0
            && self
                .times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1.0));
        if !uniform {
            return Err(FitError::InvalidArgument(
                "samples are not on a uniform time grid".into(),
            ));
        }
        Ok(dt)
    }

    /// CSV `t,omega_e,p_im,u_f,T_e` with 15 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,omega_e,p_im,u_f,T_e")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{:.14e},{:.14e},{:.14e},{:.14e},{:.14e}",
                self.times[k], self.omega_e[k], self.p_im[k], self.u_f[k], self.t_e[k]
            )?;
        }
        w.flush()
    }
}

pub fn predict_torque(w: &[f64; 4], omega_e: f64, p_im: f64, u_f: f64) -> f64 {
    w[0] + w[1] * omega_e + w[2] * p_im + w[3] * u_f
}

pub fn mean_absolute_error(predicted: &[f64], measured: &[f64]) -> Result<f64, FitError> {
    if predicted.len() != measured.len() || predicted.is_empty() {
        return Err(FitError::InvalidArgument(format!(
            "MAE needs equal nonempty lengths, got {} and {}",
            predicted.len(),
            measured.len()
        )));
    }
    let s: f64 = predicted.iter().zip(measured).map(|(p, m)| (p - m).abs()).sum();
    Ok(s / predicted.len() as f64)
}

/// Synthetic ground-truth engine.
///
/// Engine speed is imposed (dynamometer style). Manifold pressure follows the
/// first-order law stepped with Euler on the sample grid from `p = 0`. Torque
/// is the linear map, saturated to `torque_range`, plus Gaussian measurement
/// noise.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthEngine {
    pub weights: EngineWeights,
    pub torque_range: (f64, f64),
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl TruthEngine {
    pub fn published(noise_sigma: f64, noise_seed: u64) -> Self {
        Self {
            weights: EngineWeights::published(),
            torque_range: (-0.2, 25.0),
            noise_sigma,
            noise_seed,
        }
    }

    pub fn simulate(&self, input: &InputSignal, split: Split) -> Result<EngineDataset, FitError> {
        if input.len() < 2 {
            return Err(FitError::InvalidArgument("input needs at least two samples".into()));
        }
        if input.u_f.len() != input.len() || input.omega_e.len() != input.len() {
            return Err(FitError::InvalidArgument("input channels differ in length".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(FitError::InvalidArgument(format!(
                "noise sigma {} is negative",
                self.noise_sigma
            )));
        }
        let dt = input.times[1] - input.times[0];
        let man = self.weights.manifold();
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| FitError::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let (lo, hi) = self.torque_range;
        let mut p = 0.0;
        let mut data = EngineDataset {
            times: input.times.clone(),
            omega_e: input.omega_e.clone(),
            p_im: Vec::with_capacity(input.len()),
            u_f: input.u_f.clone(),
            t_e: Vec::with_capacity(input.len()),
            split,
            scales: None,
        };
        for k in 0..input.len() {
            let (w, u) = (input.omega_e[k], input.u_f[k]);
            if man.tau1 * w + man.tau2 <= 0.0 {
                return Err(FitError::InvalidArgument(format!(
                    "manifold time constant not positive at omega_e = {w}"
                )));
            }
            let torque = self.weights.torque(w, p, u).clamp(lo, hi);
            let eps = if self.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data.p_im.push(p);
            data.t_e.push(torque + eps);
            p = man.step(p, w, u, dt);
        }
        Ok(data)
    }
}

/// Least-squares torque weights on `[1, omega_e, p_im, u_f]`, via QR.
pub fn fit_torque_weights(data: &EngineDataset) -> Result<[f64; 4], FitError> {
    let n = data.len();
    if n < 4 {
        return Err(FitError::InvalidArgument(format!("need at least 4 rows, got {n}")));
    }
    let phi = DMatrix::from_fn(n, 4, |i, j| match j {
        0 => 1.0,
        1 => data.omega_e[i],
        2 => data.p_im[i],
        _ => data.u_f[i],
    });
    let y = DVector::from_column_slice(&data.t_e);
    let norms: Vec<f64> = (0..4).map(|j| phi.column(j).norm()).collect();
    let qr = phi.qr();
    let r = qr.r();
    for j in 0..4 {
        if norms[j] == 0.0 || r[(j, j)].abs() <= 1e-10 * norms[j] {
            return Err(FitError::RankDeficient(TORQUE_COLUMNS[j]));
        }
    }
    let qty = qr.q().transpose() * y;
    let w = r
        .solve_upper_triangular(&qty)
        .ok_or(FitError::RankDeficient(TORQUE_COLUMNS[3]))?;
    Ok([w[0], w[1], w[2], w[3]])
}

/// Sum of squared torque residuals.
pub fn torque_sse(w: &[f64; 4], data: &EngineDataset) -> f64 {
    (0..data.len())
        .map(|k| (predict_torque(w, data.omega_e[k], data.p_im[k], data.u_f[k]) - data.t_e[k]).powi(2))
        .sum()
}

/// Equation-error residual of the manifold law on the pair `(k, k + 1)`:
/// `tau_p(w) (p_{k+1} - p_k) / dt - (p_stat(w, u) - p_k)`.
fn manifold_residual(q: &[f64; 5], w: f64, u: f64, p: f64, p_next: f64, dt: f64) -> (f64, [f64; 5]) {
    let d = (p_next - p) / dt;
    let r = (q[0] * w + q[1]) * d - (q[2] * w + q[3] * u + q[4] - p);
    (r, [w * d, d, -w, -u, -1.0])
}

/// `1/2 sum r_k^2` over consecutive pairs.
pub fn manifold_objective(params: &ManifoldParams, data: &EngineDataset) -> Result<f64, FitError> {
    let dt = data.sample_dt()?;
    let q = params.to_array();
    Ok((0..data.len() - 1)
        .map(|k| {
            let (r, _) = manifold_residual(&q, data.omega_e[k], data.u_f[k], data.p_im[k], data.p_im[k + 1], dt);
            0.5 * r * r
        })
        .sum())
}

/// Gradient of [`manifold_objective`].
pub fn manifold_gradient(params: &ManifoldParams, data: &EngineDataset) -> Result<[f64; 5], FitError> {
    let dt = data.sample_dt()?;
    let q = params.to_array();
    let mut g = [0.0; 5];
    for k in 0..data.len() - 1 {
        let (r, dr) = manifold_residual(&q, data.omega_e[k], data.u_f[k], data.p_im[k], data.p_im[k + 1], dt);
        for i in 0..5 {
            g[i] += r * dr[i];
        }
    }
    Ok(g)
}

/// One-step-ahead prediction MAE of manifold pressure.
pub fn manifold_one_step_mae(params: &ManifoldParams, data: &EngineDataset) -> Result<f64, FitError> {
    let dt = data.sample_dt()?;
    let s: f64 = (0..data.len() - 1)
        .map(|k| (params.step(data.p_im[k], data.omega_e[k], data.u_f[k], dt) - data.p_im[k + 1]).abs())
        .sum();
    Ok(s / (data.len() - 1) as f64)
}

/// Free-run simulation MAE: the model is stepped from the first measured
/// pressure using only the measured speed and fuel.
pub fn manifold_simulation_mae(params: &ManifoldParams, data: &EngineDataset) -> Result<f64, FitError> {
    let dt = data.sample_dt()?;
    let mut p = data.p_im[0];
    let mut s = 0.0;
    for k in 1..data.len() {
        p = params.step(p, data.omega_e[k - 1], data.u_f[k - 1], dt);
        s += (p - data.p_im[k]).abs();
    }
    Ok(s / (data.len() - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub init: f64,
    /// Stop when the epoch MAE changes by less than this.
    pub tolerance: f64,
}

impl Default for GdSettings {
    fn default() -> Self {
        Self {
            learning_rate: 2e-2,
            epochs: 1000,
            init: 0.1,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldFit {
    pub params: ManifoldParams,
    /// One-step prediction MAE after the last epoch.
    pub mae: f64,
    pub epochs_run: usize,
}

/// Sequential (per-sample) gradient descent on the equation-error residual.
///
/// Parameters are in the units of `data`; with zero epochs the
/// initialization is returned unchanged.
pub fn fit_manifold_params(data: &EngineDataset, settings: &GdSettings) -> Result<ManifoldFit, FitError> {
    let dt = data.sample_dt()?;
    if !(settings.learning_rate > 0.0) {
        return Err(FitError::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            settings.learning_rate
        )));
    }
    let mut q = [settings.init; 5];
    let mut prev_mae = f64::INFINITY;
    let mut mae = manifold_one_step_mae(&ManifoldParams::from_array(q), data)?;
    let mut epochs_run = 0;
    for epoch in 0..settings.epochs {
        for k in 0..data.len() - 1 {
            let (r, dr) = manifold_residual(&q, data.omega_e[k], data.u_f[k], data.p_im[k], data.p_im[k + 1], dt);
            for i in 0..5 {
                q[i] -= settings.learning_rate * r * dr[i];
            }
        }
        epochs_run = epoch + 1;
        mae = manifold_one_step_mae(&ManifoldParams::from_array(q), data)?;
        if !mae.is_finite() || q.iter().any(|v| !v.is_finite()) {
            return Err(FitError::Diverged(epoch));
        }
        if (prev_mae - mae).abs() < settings.tolerance {
            break;
        }
        prev_mae = mae;
    }
    Ok(ManifoldFit {
        params: ManifoldParams::from_array(q),
        mae,
        epochs_run,
    })
}

/// End-to-end identification settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineFitConfig {
    pub short_duration: f64,
    pub short_pulse: f64,
    pub long_duration: f64,
    pub long_pulse: f64,
    pub validation_short_duration: f64,
    pub validation_long_duration: f64,
    pub sample_dt: f64,
    pub noise_sigma: f64,
    pub speed_range: (f64, f64),
    pub gradient_descent: GdSettings,
}

impl Default for EngineFitConfig {
    fn default() -> Self {
        Self {
            short_duration: 300.0,
            short_pulse: 0.1,
            long_duration: 100.0,
            long_pulse: 1.5,
            validation_short_duration: 50.0,
            validation_long_duration: 50.0,
            sample_dt: 0.01,
            noise_sigma: 0.01,
            speed_range: DEFAULT_SPEED_RANGE,
            gradient_descent: GdSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineFitReport {
    /// Identified weights in engine-model units, with the training scales.
    pub weights: EngineWeights,
    pub truth: EngineWeights,
    /// Normalized datasets.
    pub training: EngineDataset,
    pub validation: EngineDataset,
    /// MAEs in normalized units.
    pub torque_mae_training: f64,
    pub torque_mae_validation: f64,
    pub manifold_mae_training: f64,
    pub manifold_mae_validation: f64,
    pub epochs_run: usize,
}

impl EngineFitReport {
    pub fn mae_rows(&self) -> [(&'static str, &'static str, f64); 4] {
        [
            ("training", "torque", self.torque_mae_training),
            ("validation", "torque", self.torque_mae_validation),
            ("training", "manifold_pressure", self.manifold_mae_training),
            ("validation", "manifold_pressure", self.manifold_mae_validation),
        ]
    }

    pub fn write_mae_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "split,quantity,mae")?;
        for (split, q, v) in self.mae_rows() {
            writeln!(w, "{split},{q},{v}")?;
        }
        w.flush()
    }
}

fn excitation_pair(cfg: &EngineFitConfig, short: f64, long: f64, seed: u64) -> Result<InputSignal, FitError> {
    let a = generate_excitation_in(short, cfg.short_pulse, cfg.sample_dt, seed, cfg.speed_range)?;
    let b = generate_excitation_in(
        long,
        cfg.long_pulse,
        cfg.sample_dt,
        seed.wrapping_add(1),
        cfg.speed_range,
    )?;
    Ok(a.concat(&b, cfg.sample_dt))
}

/// Generates training and validation data from `truth`, fits both models and
/// reports MAEs.
pub fn run_engine_fit(cfg: &EngineFitConfig, truth: &EngineWeights, seed: u64) -> Result<EngineFitReport, FitError> {
    let train_in = excitation_pair(cfg, cfg.short_duration, cfg.long_duration, seed)?;
    let val_in = excitation_pair(
        cfg,
        cfg.validation_short_duration,
        cfg.validation_long_duration,
        seed.wrapping_add(2),
    )?;
    let engine = |noise_seed: u64| TruthEngine {
        weights: truth.clone(),
        noise_seed,
        ..TruthEngine::published(cfg.noise_sigma, 0)
    };
    let raw_train = engine(seed.wrapping_add(100)).simulate(&train_in, Split::Training)?;
    let raw_val = engine(seed.wrapping_add(101)).simulate(&val_in, Split::Validation)?;
    let scales = raw_train.max_abs_scales()?;
    let training = raw_train.normalized(&scales)?;
    let validation = raw_val.normalized(&scales)?;

    let w_n = fit_torque_weights(&training)?;
    let man = fit_manifold_params(&training, &cfg.gradient_descent)?;

    let torque_mae = |d: &EngineDataset| {
        let pred: Vec<f64> = (0..d.len())
            .map(|k| predict_torque(&w_n, d.omega_e[k], d.p_im[k], d.u_f[k]))
            .collect();
        mean_absolute_error(&pred, &d.t_e)
    };
    let phys = man.params.from_scaled(&scales);
    let weights = EngineWeights {
        w_te: [
            scales.t_e * w_n[0],
            scales.t_e * w_n[1] / scales.omega_e,
            scales.t_e * w_n[2] / scales.p_im,
            scales.t_e * w_n[3] / scales.u_f,
        ],
        tau1: phys.tau1,
        tau2: phys.tau2,
        a1: phys.a1,
        a2: phys.a2,
        a3: phys.a3,
        scales: Some(scales),
    };
    Ok(EngineFitReport {
        torque_mae_training: torque_mae(&training)?,
        torque_mae_validation: torque_mae(&validation)?,
        manifold_mae_training: man.mae,
        manifold_mae_validation: manifold_simulation_mae(&man.params, &validation)?,
        epochs_run: man.epochs_run,
        weights,
        truth: truth.clone(),
        training,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn published_torque_values() {
        let w = EngineWeights::published().w_te;
        assert_eq!(predict_torque(&w, 0.0, 0.0, 0.0), -0.154712845456646);
        assert_relative_eq!(predict_torque(&w, 1.0, 1.0, 1.0), 5.698208382, epsilon = 1e-9);
        assert_eq!(predict_torque(&[0.0; 4], 0.3, 2.0, 0.5), 0.0);
    }

    #[test]
    fn mae_basics() {
        assert_eq!(mean_absolute_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mean_absolute_error(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.5);
        assert!(mean_absolute_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_pulse_signal() {
        let s = generate_excitation(1.0, 1.0, 0.5, 7).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.u_f[0], s.u_f[1]);
        assert_eq!(s.omega_e[0], s.omega_e[1]);
    }

    #[test]
    fn excitation_is_piecewise_constant() {
        let s = generate_excitation(3.0, 0.1, 0.01, 3).unwrap();
        assert_eq!(s.len(), 300);
        for i in 1..s.len() {
            let boundary = i % 10 == 0;
            if !boundary {
                assert_eq!(s.u_f[i], s.u_f[i - 1], "row {i}");
            }
        }
        assert!(s.u_f.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.omega_e.iter().all(|v| (0.15..=1.0).contains(v)));
        assert_eq!(s, generate_excitation(3.0, 0.1, 0.01, 3).unwrap());
        assert!(generate_excitation(0.0, 0.1, 0.01, 3).is_err());
        assert!(generate_excitation(1.0, 2.0, 0.01, 3).is_err());
        assert!(generate_excitation(1.0, 0.1, 0.2, 3).is_err());
    }

    fn constant_input(u: f64, w: f64, n: usize, dt: f64) -> InputSignal {
        InputSignal {
            times: (0..n).map(|i| i as f64 * dt).collect(),
            u_f: vec![u; n],
            omega_e: vec![w; n],
            pulse_width: n as f64 * dt,
        }
    }

    #[test]
    fn truth_engine_settles_to_equilibrium() {
        let truth = TruthEngine::published(0.0, 1);
        let w = EngineWeights::published();
        for u in [0.0, 1.0] {
            let d = truth
                .simulate(&constant_input(u, 0.6, 6000, 0.01), Split::Training)
                .unwrap();
            // Equilibrium: p = p_stat(w, u); torque from the map at that pressure.
            let p_eq = w.p_stat(0.6, u);
            let t_eq = w.torque(0.6, p_eq, u);
            assert_relative_eq!(*d.p_im.last().unwrap(), p_eq, epsilon = 1e-6);
            assert_relative_eq!(*d.t_e.last().unwrap(), t_eq, epsilon = 1e-5);
        }
    }

    #[test]
    fn exact_torque_recovery() {
        let sig = generate_excitation(40.0, 0.1, 0.01, 11).unwrap();
        let d = TruthEngine::published(0.0, 0).simulate(&sig, Split::Training).unwrap();
        let w = fit_torque_weights(&d).unwrap();
        for (a, b) in w.iter().zip(EngineWeights::published().w_te) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn rank_deficiency_names_column() {
        let sig = constant_input(0.5, 0.5, 50, 0.01);
        let mut d = TruthEngine::published(0.0, 0).simulate(&sig, Split::Training).unwrap();
        d.p_im = (0..50).map(|k| k as f64).collect();
        let err = fit_torque_weights(&d).unwrap_err();
        assert!(matches!(err, FitError::RankDeficient("omega_e")), "{err}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let sig = generate_excitation(2.0, 0.1, 0.01, 1).unwrap();
        let d = TruthEngine::published(0.0, 0).simulate(&sig, Split::Training).unwrap();
        let s = GdSettings {
            epochs: 0,
            ..GdSettings::default()
        };
        let fit = fit_manifold_params(&d, &s).unwrap();
        assert_eq!(fit.params, ManifoldParams::splat(0.1));
        assert_eq!(fit.epochs_run, 0);
    }

    #[test]
    fn divergence_is_reported() {
        let sig = generate_excitation(2.0, 0.1, 0.01, 1).unwrap();
        let d = TruthEngine::published(0.0, 0).simulate(&sig, Split::Training).unwrap();
        let s = GdSettings {
            learning_rate: 10.0,
            epochs: 50,
            ..GdSettings::default()
        };
        assert!(matches!(fit_manifold_params(&d, &s), Err(FitError::Diverged(_))));
    }

    #[test]
    fn scaled_parameters_round_trip() {
        let m = EngineWeights::published().manifold();
        let s = NormScales {
            omega_e: 0.9,
            p_im: 4.1,
            u_f: 0.99,
            t_e: 20.0,
        };
        let back = m.to_scaled(&s).from_scaled(&s);
        assert!(back.max_relative_error(&m) < 1e-14);
    }

    #[test]
    fn weights_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let mut w = EngineWeights::published();
        w.scales = Some(NormScales::unit());
        w.save(&path).unwrap();
        assert_eq!(EngineWeights::load(&path).unwrap(), w);
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["w_te", "tau1", "tau2", "a1", "a2", "a3", "scales"] {
            assert!(text.contains(key));
        }
    }
}
