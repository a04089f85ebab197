use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AdpError, CostateNetwork, OcProblem, PolynomialBasis, Stationarity, TrainingConfig, TrainingReport};
use crate::linalg::{ridge_regression, LinalgError};
use crate::par;
use crate::system::SwitchedSystem;
use crate::trajectory::Trajectory;
use crate::transform::{stage_cost, terminal_cost, ModeSchedule};

/// Control perturbation for the stationarity Jacobian.
const CONTROL_FD_STEP: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 8;

/// Costate `lambda_k(x)` implied by the network at step `k`; the terminal
/// costate at `k = N'`.
pub fn costate_at<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    net: &CostateNetwork,
    sched: &ModeSchedule<S::Mode>,
    k: usize,
    t1: f64,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<DVector<f64>, AdpError> {
    if k == problem.n_prime() {
        return Ok(problem.terminal_costate(sched, x));
    }
    let lambda_next = net.next_costate(k, t1, x)?;
    let u = problem.control_from_costate(sched, k, x, &lambda_next)?;
    problem.costate_from_next(sched, k, x, &u, &lambda_next, fd_step)
}

/// Solution of the stationarity fixed point at one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTarget {
    pub control: DVector<f64>,
    /// `lambda_{k+1}(x_{k+1})`, the regression target for `W_k`.
    pub target: DVector<f64>,
    pub iterations: usize,
}

/// Training target for `W_k` at `(t1, x)`.
///
/// Solves the stationarity condition `u = -R^-1 g(x)' lambda_{k+1}(x_{k+1}(u))`
/// starting from `u = 0`, then returns `lambda_{k+1}` at the resulting next
/// state. Networks for steps after `k` must already be trained.
pub fn costate_target<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    net: &CostateNetwork,
    sched: &ModeSchedule<S::Mode>,
    k: usize,
    t1: f64,
    x: &DVector<f64>,
    cfg: &TrainingConfig,
) -> Result<ControlTarget, AdpError> {
    let m = problem.system.control_dim();
    let next = |u: &DVector<f64>| -> Result<DVector<f64>, AdpError> {
        let x_next = problem.step(sched, k, x, u)?;
        costate_at(problem, net, sched, k + 1, t1, &x_next, cfg.fd_step)
    };
    let residual = |u: &DVector<f64>, lambda: &DVector<f64>| -> Result<DVector<f64>, AdpError> {
        Ok(u - problem.control_from_costate(sched, k, x, lambda)?)
    };
    let mut u = DVector::zeros(m);
    let mut lambda = next(&u)?;
    let mut r = residual(&u, &lambda)?;
    // Chord method: the residual Jacobian is formed once, at u = 0.
    let jacobian = match cfg.stationarity {
        Stationarity::Substitution => None,
        Stationarity::Newton => {
            let mut jac = DMatrix::zeros(m, m);
            let mut up = u.clone();
            for j in 0..m {
                up[j] = CONTROL_FD_STEP;
                let rp = residual(&up, &next(&up)?)?;
                up[j] = 0.0;
                jac.set_column(j, &((rp - &r) / CONTROL_FD_STEP));
            }
            Some(jac.lu())
        }
    };
    let mut iterations = 0;
    while iterations < cfg.inner_iterations {
        iterations += 1;
        let Some(lu) = &jacobian else {
            let step = r.clone();
            u -= &step;
            lambda = next(&u)?;
            r = residual(&u, &lambda)?;
            if step.amax() < cfg.inner_tolerance {
                break;
            }
            continue;
        };
        let mut step = lu.solve(&r).ok_or(AdpError::Diverged { k })?;
        // Halve the step until the residual shrinks; the residual is only
        // piecewise smooth where the next state changes sign branch.
        let norm = r.norm();
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &u - &step;
            let trial_lambda = next(&trial)?;
            let trial_r = residual(&trial, &trial_lambda)?;
            if trial_r.norm() < norm {
                u = trial;
                lambda = trial_lambda;
                r = trial_r;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.amax() < cfg.inner_tolerance {
            break;
        }
    }
    if lambda.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
        return Err(AdpError::Diverged { k });
    }
    Ok(ControlTarget {
        control: u,
        target: lambda,
        iterations,
    })
}

fn draw_samples(cfg: &TrainingConfig, t1_range: (f64, f64), k: usize) -> Vec<(f64, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    (0..cfg.batch_size)
        .map(|_| {
            let t1 = uniform(t1_range.0, t1_range.1);
            let x = DVector::from_iterator(cfg.domain.len(), cfg.domain.iter().map(|&(lo, hi)| uniform(lo, hi)));
            (t1, x)
        })
        .collect()
}

/// Fits `W_{N'-1}, ..., W_0` backward in time.
pub fn train_backward<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    cfg: &TrainingConfig,
) -> Result<CostateNetwork, AdpError> {
    let t = &problem.template;
    let n = problem.system.state_dim();
    cfg.validate(n, t.t0, t.tf)?;
    let t1_range = cfg.resolved_t1_range(t.t0, t.tf);
    let mut basis = PolynomialBasis::new(cfg.degree, n + 1);
    if cfg.center_basis {
        let bounds: Vec<(f64, f64)> = std::iter::once(t1_range).chain(cfg.domain.iter().copied()).collect();
        basis = basis.with_box(&bounds);
    }
    let n_prime = problem.n_prime();
    let m = basis.len();
    let mut net = CostateNetwork {
        basis,
        grid: problem.grid,
        state_dim: n,
        t1_range,
        domain: cfg.domain.clone(),
        weights: vec![DMatrix::zeros(m, n); n_prime],
        report: TrainingReport {
            rms_residual: vec![0.0; n_prime],
            condition: vec![0.0; n_prime],
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        },
    };
    for k in (0..n_prime).rev() {
        let samples = draw_samples(cfg, t1_range, k);
        let rows = par::try_map(cfg.execution, &samples, |(t1, x)| {
            let sched = problem.schedule(*t1)?;
            let ct = costate_target(problem, &net, &sched, k, *t1, x, cfg)?;
            Ok::<_, AdpError>((net.basis.eval(*t1, x), ct.target))
        })?;
        let phi = DMatrix::from_fn(rows.len(), m, |i, j| rows[i].0[j]);
        let targets = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].1[j]);
        let fit = ridge_regression(&phi, &targets, cfg.ridge, cfg.max_condition).map_err(|e| match e {
            LinalgError::IllConditioned(condition) => AdpError::Conditioning { k, condition },
            source => AdpError::Regression { k, source },
        })?;
        if fit.coefficients.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::Diverged { k });
        }
        net.weights[k] = fit.coefficients;
        net.report.rms_residual[k] = fit.rms_residual;
        net.report.condition[k] = fit.condition;
    }
    Ok(net)
}

/// Feedback control at step `k`.
pub fn policy<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    net: &CostateNetwork,
    sched: &ModeSchedule<S::Mode>,
    k: usize,
    t1: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>, AdpError> {
    let lambda = net.next_costate(k, t1, x)?;
    problem.control_from_costate(sched, k, x, &lambda)
}

/// Closed-loop rollout over the whole grid.
pub fn closed_loop_simulate<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    net: &CostateNetwork,
    t1: f64,
    x0: &DVector<f64>,
) -> Result<Trajectory, AdpError> {
    let sched = problem.schedule(t1)?;
    closed_loop_from(problem, net, &sched, t1, 0, x0)
}

/// Closed-loop rollout from step `k0`; the trajectory's cost is the
/// cost-to-go from there.
pub fn closed_loop_from<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    net: &CostateNetwork,
    sched: &ModeSchedule<S::Mode>,
    t1: f64,
    k0: usize,
    x0: &DVector<f64>,
) -> Result<Trajectory, AdpError> {
    let n_prime = problem.n_prime();
    if net.n_prime() != n_prime || net.state_dim != problem.system.state_dim() {
        return Err(AdpError::InvalidArgument(format!(
            "network has {} steps for {} states, problem needs {n_prime} steps for {}",
            net.n_prime(),
            net.state_dim,
            problem.system.state_dim()
        )));
    }
    if k0 > n_prime {
        return Err(AdpError::InvalidArgument(format!(
            "start step {k0} beyond N' = {n_prime}"
        )));
    }
    let grid = &problem.grid;
    let time = |k: usize| sched.hat_to_time(grid.hat_time(k));
    let mut traj = Trajectory::start(time(k0)?, x0.clone(), problem.mode(sched, k0));
    let mut x = x0.clone();
    for k in k0..n_prime {
        let abort = |source: AdpError, traj: Trajectory| AdpError::Simulation {
            step: k,
            source: Box::new(source),
            partial: Box::new(traj),
        };
        let step = net.next_costate(k, t1, &x).and_then(|lambda| {
            let u = problem.control_from_costate(sched, k, &x, &lambda)?;
            let x_next = problem.step(sched, k, &x, &u)?;
            Ok((lambda, u, x_next))
        });
        let (lambda, u, x_next) = match step {
            Ok(v) => v,
            Err(e) => return Err(abort(e, traj)),
        };
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(abort(AdpError::Diverged { k }, traj));
        }
        let r = problem.reference_at(sched, k);
        let cost = stage_cost(&x, &u, &r, k, sched, grid, &problem.weights);
        traj.push(u, cost, time(k + 1)?, x_next.clone(), problem.mode(sched, k + 1));
        traj.costates.push(lambda);
        x = x_next;
    }
    let r_n = problem.reference_at(sched, n_prime);
    traj.terminal_cost = terminal_cost(&x, &r_n, &problem.weights.s);
    Ok(traj)
}
