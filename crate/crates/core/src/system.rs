//! Control-affine switched systems `x' = f_v(x) + g_v(x) u`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::plant::PlantError;

/// A family of control-affine subsystems indexed by a mode.
///
/// Implementations are pure: evaluation never mutates the system, so one
/// instance can be shared by every worker thread.
pub trait SwitchedSystem: Sync {
    type Mode: Copy + PartialEq + fmt::Debug + fmt::Display + Send + Sync;

    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Drift `f_v(x)` and input matrix `g_v(x)` (state_dim x control_dim).
    fn affine_terms(&self, mode: Self::Mode, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), PlantError>;

    /// Drift term only. Override when it is cheaper than building `g_v`.
    fn drift(&self, mode: Self::Mode, x: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        self.affine_terms(mode, x).map(|(f, _)| f)
    }

    fn derivative(&self, mode: Self::Mode, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        let (f, g) = self.affine_terms(mode, x)?;
        Ok(f + g * u)
    }

    /// Right-hand side with any sign-type branch selected at `anchor`
    /// instead of at `x`, so that difference quotients around `anchor` do
    /// not straddle a jump. Systems without such branches keep the default.
    fn derivative_on_branch(
        &self,
        mode: Self::Mode,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _anchor: &DVector<f64>,
    ) -> Result<DVector<f64>, PlantError> {
        self.derivative(mode, x, u)
    }

    /// Projection applied by the open-loop integrators after each step.
    /// The default leaves the state untouched.
    fn constrain(&self, _mode: Self::Mode, _u: &DVector<f64>, _prev: &DVector<f64>, _next: &mut DVector<f64>) {}
}

/// Linear time-invariant dynamics per mode: `x' = A_v x + B_v u`.
///
/// Modes are indices into the matrix lists.
#[derive(Clone, Debug)]
pub struct LinearSwitchedSystem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl LinearSwitchedSystem {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Self {
        assert_eq!(a.len(), b.len(), "one (A, B) pair per mode");
        assert!(!a.is_empty());
        let n = a[0].nrows();
        let m = b[0].ncols();
        for (ai, bi) in a.iter().zip(&b) {
            assert!(ai.is_square() && ai.nrows() == n);
            assert!(bi.nrows() == n && bi.ncols() == m);
        }
        Self { a, b }
    }
}

impl SwitchedSystem for LinearSwitchedSystem {
    type Mode = usize;

    fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    fn control_dim(&self) -> usize {
        self.b[0].ncols()
    }

    fn affine_terms(&self, mode: usize, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        let a = self.a.get(mode).ok_or(PlantError::UnknownMode(mode))?;
        Ok((a * x, self.b[mode].clone()))
    }
}
