use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AdpError;
use crate::par::Execution;
use crate::system::SwitchedSystem;
use crate::transform::{reference_at_step, CostWeights, HatGrid, ModeSchedule, Reference, ScheduleTemplate};

/// How the per-sample stationarity condition is solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stationarity {
    /// Repeated substitution `u <- -R^-1 g' lambda(x'(u))`; diverges when
    /// the loop gain exceeds one.
    Substitution,
    /// Chord-Newton on the same residual with a difference Jacobian.
    #[default]
    Newton,
}

/// Settings for [`train_backward`](super::train_backward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Sampling interval per (normalized) state.
    pub domain: Vec<(f64, f64)>,
    /// Sampling interval of the free switching time; `None` trims 5% of
    /// the horizon at each end.
    pub t1_range: Option<(f64, f64)>,
    pub batch_size: usize,
    pub inner_iterations: usize,
    pub stationarity: Stationarity,
    pub inner_tolerance: f64,
    pub ridge: f64,
    pub max_condition: f64,
    pub degree: usize,
    /// Map the sampling box onto `[-1, 1]` before forming monomials.
    pub center_basis: bool,
    /// Central-difference step for Jacobians.
    pub fd_step: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            domain: Vec::new(),
            t1_range: None,
            batch_size: 500,
            inner_iterations: 3,
            stationarity: Stationarity::Newton,
            inner_tolerance: 1e-8,
            ridge: 1e-8,
            max_condition: 1e12,
            degree: 2,
            center_basis: true,
            fd_step: 1e-6,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainingConfig {
    pub fn resolved_t1_range(&self, t0: f64, tf: f64) -> (f64, f64) {
        self.t1_range.unwrap_or((t0 + 0.05 * (tf - t0), tf - 0.05 * (tf - t0)))
    }

    pub fn validate(&self, state_dim: usize, t0: f64, tf: f64) -> Result<(), AdpError> {
        let bad = |m: String| Err(AdpError::InvalidArgument(m));
        if self.domain.is_empty() {
            return bad("training domain is empty".into());
        }
        if self.domain.len() != state_dim {
            return bad(format!(
                "training domain has {} intervals for {state_dim} states",
                self.domain.len()
            ));
        }
        for (i, (lo, hi)) in self.domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("domain interval {} is empty: [{lo}, {hi}]", i + 1));
            }
        }
        let (lo, hi) = self.resolved_t1_range(t0, tf);
        if !(t0 <= lo && lo < hi && hi <= tf) {
            return bad(format!(
                "t1 interval [{lo}, {hi}] must be nonempty and inside [{t0}, {tf}]"
            ));
        }
        let m = super::PolynomialBasis::new(self.degree, state_dim + 1).len();
        if self.batch_size < m {
            return bad(format!("batch size {} below basis size {m}", self.batch_size));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be nonnegative, got {}", self.ridge));
        }
        if self.inner_iterations == 0 {
            return bad("inner_iterations must be at least 1".into());
        }
        if !(self.fd_step > 0.0) {
            return bad(format!("fd_step must be positive, got {}", self.fd_step));
        }
        Ok(())
    }
}

/// Tracking problem on a fixed mode sequence with one free switching time.
#[derive(Clone, Debug)]
pub struct OcProblem<S: SwitchedSystem> {
    pub system: S,
    pub template: ScheduleTemplate<S::Mode>,
    pub grid: HatGrid,
    pub weights: CostWeights,
    pub reference: Reference,
    /// Optional per-control box; the Hamiltonian minimizer is then the
    /// componentwise clamp of the unconstrained control.
    pub control_bounds: Option<Vec<(f64, f64)>>,
    r_bar_inv: DMatrix<f64>,
}

impl<S: SwitchedSystem> OcProblem<S> {
    pub fn new(
        system: S,
        template: ScheduleTemplate<S::Mode>,
        delta_hat: f64,
        weights: CostWeights,
        reference: Reference,
    ) -> Result<Self, AdpError> {
        let n = system.state_dim();
        let m = system.control_dim();
        if weights.state_dim() != n || weights.control_dim() != m {
            return Err(AdpError::InvalidArgument(format!(
                "weights are {}x{} / {}x{}, system has {n} states and {m} controls",
                weights.state_dim(),
                weights.state_dim(),
                weights.control_dim(),
                weights.control_dim()
            )));
        }
        reference.validate()?;
        if reference.dim() != n {
            return Err(AdpError::InvalidArgument(format!(
                "reference has {} entries, system has {n} states",
                reference.dim()
            )));
        }
        let grid = HatGrid::new(delta_hat, template.phase_count())?;
        let placeholder = template
            .switch_times
            .get(template.free_index)
            .copied()
            .unwrap_or(template.t0);
        template.instantiate(placeholder)?;
        let r_bar_inv = weights
            .r_bar
            .clone()
            .cholesky()
            .ok_or_else(|| AdpError::InvalidArgument("R_bar is not positive definite".into()))?
            .inverse();
        Ok(Self {
            system,
            template,
            grid,
            weights,
            reference,
            control_bounds: None,
            r_bar_inv,
        })
    }

    /// Restricts controls to a box. Needs a diagonal `R_bar`, for which
    /// clamping is the exact constrained minimizer.
    pub fn with_control_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self, AdpError> {
        let m = self.system.control_dim();
        if bounds.len() != m {
            return Err(AdpError::InvalidArgument(format!(
                "{} control bounds for {m} controls",
                bounds.len()
            )));
        }
        if let Some((j, (lo, hi))) = bounds
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo <= hi) || lo.is_nan())
        {
            return Err(AdpError::InvalidArgument(format!(
                "control bound {} is empty: [{lo}, {hi}]",
                j + 1
            )));
        }
        let r = &self.weights.r_bar;
        let off_diagonal = (0..m).any(|i| (0..m).any(|j| i != j && r[(i, j)] != 0.0));
        if off_diagonal {
            return Err(AdpError::InvalidArgument("control bounds need a diagonal R_bar".into()));
        }
        self.control_bounds = Some(bounds);
        Ok(self)
    }

    pub fn n_prime(&self) -> usize {
        self.grid.n_prime()
    }

    pub fn schedule(&self, t1: f64) -> Result<ModeSchedule<S::Mode>, AdpError> {
        Ok(self.template.instantiate(t1)?)
    }

    /// Real-time length of step `k`: phase length times `delta_hat`.
    pub fn step_length(&self, sched: &ModeSchedule<S::Mode>, k: usize) -> f64 {
        sched.phase_length(self.grid.phase_of(k)) * self.grid.delta_hat
    }

    pub fn mode(&self, sched: &ModeSchedule<S::Mode>, k: usize) -> S::Mode {
        sched.modes[self.grid.phase_of(k.min(self.n_prime() - 1))]
    }

    pub fn reference_at(&self, sched: &ModeSchedule<S::Mode>, k: usize) -> DVector<f64> {
        reference_at_step(&self.reference, k, sched, &self.grid)
    }

    /// Continuous-time right-hand side at step `k`.
    pub fn rhs(
        &self,
        sched: &ModeSchedule<S::Mode>,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, AdpError> {
        self.system
            .derivative(self.mode(sched, k), x, u)
            .map_err(|source| AdpError::Plant { k, source })
    }

    fn rhs_on_branch(
        &self,
        sched: &ModeSchedule<S::Mode>,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        anchor: &DVector<f64>,
    ) -> Result<DVector<f64>, AdpError> {
        self.system
            .derivative_on_branch(self.mode(sched, k), x, u, anchor)
            .map_err(|source| AdpError::Plant { k, source })
    }

    /// Euler step on the hat-time grid.
    pub fn step(
        &self,
        sched: &ModeSchedule<S::Mode>,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, AdpError> {
        let h = self.step_length(sched, k);
        if h == 0.0 {
            return Ok(x.clone());
        }
        Ok(x + self.rhs(sched, k, x, u)? * h)
    }

    /// Stationary control for a given next costate: `-R_bar^-1 g(x)' lambda`,
    /// clamped to the control box when one is set.
    pub fn control_from_costate(
        &self,
        sched: &ModeSchedule<S::Mode>,
        k: usize,
        x: &DVector<f64>,
        lambda_next: &DVector<f64>,
    ) -> Result<DVector<f64>, AdpError> {
        if self.step_length(sched, k) == 0.0 {
            return Err(AdpError::DegeneratePhase { k });
        }
        let (_, g) = self
            .system
            .affine_terms(self.mode(sched, k), x)
            .map_err(|source| AdpError::Plant { k, source })?;
        let mut u = -(&self.r_bar_inv * g.tr_mul(lambda_next));
        if let Some(bounds) = &self.control_bounds {
            for (v, &(lo, hi)) in u.iter_mut().zip(bounds) {
                *v = v.clamp(lo, hi);
            }
        }
        Ok(u)
    }

    /// Costate recursion `lambda_k = Q h (x - r_k) + J' lambda_{k+1}` with the
    /// step Jacobian `J` taken at fixed `u` by central differences on the
    /// sign branch of `x`.
    pub fn costate_from_next(
        &self,
        sched: &ModeSchedule<S::Mode>,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda_next: &DVector<f64>,
        fd_step: f64,
    ) -> Result<DVector<f64>, AdpError> {
        let h = self.step_length(sched, k);
        let e = x - self.reference_at(sched, k);
        let mut out = &self.weights.q_bar * e * h + lambda_next;
        if h == 0.0 {
            return Ok(out);
        }
        // J' lambda = lambda + h (dF/dx)' lambda; column i of dF/dx by differences.
        let mut xp = x.clone();
        for i in 0..x.len() {
            let xi = x[i];
            xp[i] = xi + fd_step;
            let fp = self.rhs_on_branch(sched, k, &xp, u, x)?;
            xp[i] = xi - fd_step;
            let fm = self.rhs_on_branch(sched, k, &xp, u, x)?;
            xp[i] = xi;
            out[i] += h * (fp - fm).dot(lambda_next) / (2.0 * fd_step);
        }
        Ok(out)
    }

    /// Terminal costate `2 S (x - r_N)`.
    pub fn terminal_costate(&self, sched: &ModeSchedule<S::Mode>, x: &DVector<f64>) -> DVector<f64> {
        let e = x - self.reference_at(sched, self.n_prime());
        &self.weights.s * e * 2.0
    }
}
