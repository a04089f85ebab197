use nalgebra::{DMatrix, DVector};

use super::{AdpError, OcProblem};
use crate::linalg;
use crate::system::{LinearSwitchedSystem, SwitchedSystem};
use crate::transform::Reference;

/// Backward Riccati recursion for `x_{k+1} = A_k x_k + B_k u_k` with cost
/// `1/2 sum (x'Q_k x + u'R_k u) + 1/2 x_N' P_N x_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrSolution {
    /// `P_0 .. P_N`.
    pub p: Vec<DMatrix<f64>>,
    /// `K_0 .. K_{N-1}`, with `u_k = -K_k x_k`.
    pub gains: Vec<DMatrix<f64>>,
}

impl LqrSolution {
    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    /// `lambda_k = P_k x`.
    pub fn costate(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.p[k] * x
    }

    pub fn value(&self, k: usize, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p[k] * x))
    }

    pub fn control(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.gains[k] * x)
    }
}

pub fn riccati(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    r: &[DMatrix<f64>],
    p_terminal: &DMatrix<f64>,
) -> Result<LqrSolution, AdpError> {
    let n_steps = a.len();
    if b.len() != n_steps || q.len() != n_steps || r.len() != n_steps {
        return Err(AdpError::InvalidArgument("A, B, Q, R lists differ in length".into()));
    }
    let mut p = vec![DMatrix::zeros(0, 0); n_steps + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); n_steps];
    p[n_steps] = p_terminal.clone();
    for k in (0..n_steps).rev() {
        if !linalg::is_pd(&r[k]) {
            return Err(AdpError::InvalidArgument(format!(
                "R at step {k} is not positive definite"
            )));
        }
        let pn = &p[k + 1];
        let bt_p = b[k].tr_mul(pn);
        let s = &r[k] + &bt_p * &b[k];
        let chol = s
            .cholesky()
            .ok_or_else(|| AdpError::InvalidArgument(format!("R + B'PB at step {k} is not positive definite")))?;
        let gain = chol.solve(&(&bt_p * &a[k]));
        let closed = &a[k] - &b[k] * &gain;
        let pk = &q[k] + a[k].tr_mul(pn) * closed;
        p[k] = (&pk + pk.transpose()) * 0.5;
        gains[k] = gain;
    }
    Ok(LqrSolution { p, gains })
}

/// Exact solution of a linear [`OcProblem`] at one switching time.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub lqr: LqrSolution,
}

impl OracleSolution {
    /// `lambda_{k+1}` along the optimal transition from `x_k`, the quantity
    /// the network at step `k` approximates.
    pub fn next_costate(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        let x_next = (&self.a[k] - &self.b[k] * &self.lqr.gains[k]) * x;
        self.lqr.costate(k + 1, &x_next)
    }

    pub fn optimal_cost(&self, x0: &DVector<f64>) -> f64 {
        self.lqr.value(0, x0)
    }
}

/// Discretizes a linear regulation problem on the hat-time grid and solves it.
///
/// Per step: `A_k = I + A_v h`, `B_k = B_v h`, `Q_k = Q_bar h`,
/// `R_k = R_bar h` with `h` the step length; the terminal weight is `2 S`
/// because the terminal cost carries no 1/2.
pub fn lqr_oracle(problem: &OcProblem<LinearSwitchedSystem>, t1: f64) -> Result<OracleSolution, AdpError> {
    let zero_ref = match &problem.reference {
        Reference::Constant { value } => value.iter().all(|&v| v == 0.0),
        _ => false,
    };
    if !zero_ref {
        return Err(AdpError::InvalidArgument(
            "the Riccati oracle needs a zero reference".into(),
        ));
    }
    let sched = problem.schedule(t1)?;
    let n = problem.system.state_dim();
    let w = &problem.weights;
    let (mut a, mut b, mut q, mut r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..problem.n_prime() {
        let h = problem.step_length(&sched, k);
        let v = problem.mode(&sched, k);
        a.push(DMatrix::identity(n, n) + &problem.system.a[v] * h);
        b.push(&problem.system.b[v] * h);
        q.push(&w.q_bar * h);
        r.push(&w.r_bar * h);
    }
    let lqr = riccati(&a, &b, &q, &r, &(&w.s * 2.0))?;
    Ok(OracleSolution { a, b, lqr })
}
