use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slc_core::adp::*;
use slc_core::par::Execution;
use slc_core::plant::PlantError;
use slc_core::transform::stage_cost;
use slc_core::*;

const WINDOW: (f64, f64) = (0.8, 1.2);

/// Two-state switched LQR: an underdamped oscillator, then a sheared
/// unstable mode driven through both states.
fn lqr_problem(q: f64, s: f64) -> OcProblem<LinearSwitchedSystem> {
    let sys = LinearSwitchedSystem::new(
        vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
            DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.0, 0.3]),
        ],
        vec![
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        ],
    );
    let template = ScheduleTemplate::single_switch(0usize, 1usize, 0.0, 2.0);
    let w = CostWeights::from_diagonals(&[s, s], &[q, q], &[1.0]).unwrap();
    OcProblem::new(sys, template, 0.01, w, Reference::zero(2)).unwrap()
}

fn lqr_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        domain: vec![(-1.0, 1.0); 2],
        t1_range: Some(WINDOW),
        batch_size: 200,
        seed,
        ..Default::default()
    }
}

fn rms_relative(pairs: &[(DVector<f64>, DVector<f64>)]) -> f64 {
    let num: f64 = pairs.iter().map(|(a, b)| (a - b).norm_squared()).sum();
    let den: f64 = pairs.iter().map(|(_, b)| b.norm_squared()).sum();
    (num / den).sqrt()
}

#[test]
fn trained_costates_match_riccati_oracle() {
    let p = lqr_problem(1.0, 1.0);
    let start = Instant::now();
    let net = train_backward(&p, &lqr_config(3)).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert_eq!(net.n_prime(), 200);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pairs: Vec<_> = (0..100)
        .map(|_| {
            let k = rng.random_range(0..200);
            let t1 = rng.random_range(WINDOW.0..WINDOW.1);
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let oracle = lqr_oracle(&p, t1).unwrap();
            (net.next_costate(k, t1, &x).unwrap(), oracle.next_costate(k, &x))
        })
        .collect();
    let rms = rms_relative(&pairs);
    assert!(rms < 0.02, "costate RMS {rms}");
    let x0 = DVector::from_vec(vec![0.8, -0.6]);
    let j = closed_loop_simulate(&p, &net, 1.0, &x0).unwrap().total_cost();
    let j_opt = lqr_oracle(&p, 1.0).unwrap().optimal_cost(&x0);
    assert!((j / j_opt - 1.0).abs() < 0.02, "{j} vs {j_opt}");
}

#[test]
fn boundary_jump_on_switched_lqr() {
    let net = train_backward(&lqr_problem(1.0, 1.0), &lqr_config(3)).unwrap();
    let ratios = net.boundary_jump_ratios();
    assert_eq!(ratios.len(), 1);
    assert!(ratios[0] >= 5.0, "jump ratio {}", ratios[0]);
}

/// `x' = -x - 0.3 x^3 + (1 + 0.2 x^2) u`, then `x' = 0.5 sin x - 0.2 x + u`.
struct Cubic;

impl SwitchedSystem for Cubic {
    type Mode = usize;

    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn affine_terms(&self, mode: usize, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), PlantError> {
        let v = x[0];
        let (f, g) = match mode {
            0 => (-v - 0.3 * v.powi(3), 1.0 + 0.2 * v * v),
            _ => (0.5 * v.sin() - 0.2 * v, 1.0),
        };
        Ok((DVector::from_element(1, f), DMatrix::from_element(1, 1, g)))
    }
}

#[test]
fn costate_is_gradient_of_cost_to_go() {
    let template = ScheduleTemplate::single_switch(0usize, 1usize, 0.0, 2.0);
    let w = CostWeights::from_diagonals(&[1.0], &[1.0], &[1.0]).unwrap();
    let p = OcProblem::new(Cubic, template, 0.04, w, Reference::zero(1)).unwrap();
    assert_eq!(p.n_prime(), 50);
    let cfg = TrainingConfig {
        domain: vec![(-1.0, 1.0)],
        t1_range: Some(WINDOW),
        batch_size: 200,
        degree: 4,
        seed: 7,
        ..Default::default()
    };
    let net = train_backward(&p, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-4;
    let pairs: Vec<_> = (0..50)
        .map(|_| {
            let k = rng.random_range(0..50);
            let t1 = rng.random_range(WINDOW.0..WINDOW.1);
            let x = rng.random_range(-0.8..0.8);
            let sched = p.schedule(t1).unwrap();
            let v = |x: f64| {
                closed_loop_from(&p, &net, &sched, t1, k, &DVector::from_element(1, x))
                    .unwrap()
                    .total_cost()
            };
            let fd = DVector::from_element(1, (v(x + h) - v(x - h)) / (2.0 * h));
            let lambda = costate_at(&p, &net, &sched, k, t1, &DVector::from_element(1, x), 1e-6).unwrap();
            (lambda, fd)
        })
        .collect();
    let rms = rms_relative(&pairs);
    assert!(rms < 0.05, "gradient RMS {rms}");
}

#[test]
fn sweep_finds_oracle_optimum() {
    let p = lqr_problem(1.0, 1.0);
    let net = train_backward(&p, &lqr_config(3)).unwrap();
    let x0 = DVector::from_vec(vec![0.8, -0.6]);
    let grid = candidate_grid(WINDOW.0, WINDOW.1, 21);
    let sweep = sweep_switching_times(&p, &net, &x0, &grid, Execution::Sequential).unwrap();
    assert!(sweep.failures.is_empty());
    assert!(sweep.curve.iter().all(|&(_, c)| sweep.cost_star <= c));
    let oracle: Vec<f64> = grid
        .iter()
        .map(|&t1| lqr_oracle(&p, t1).unwrap().optimal_cost(&x0))
        .collect();
    let best = oracle.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((sweep.cost_star / best - 1.0).abs() < 0.02);
}

#[test]
fn zero_weights_give_zero_policy_and_smallest_tied_switch() {
    let p = lqr_problem(0.0, 0.0);
    let net = train_backward(&p, &lqr_config(1)).unwrap();
    assert!(net.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
    let x0 = DVector::from_vec(vec![0.5, 0.5]);
    let traj = closed_loop_simulate(&p, &net, 1.0, &x0).unwrap();
    assert!(traj.controls.iter().all(|u| u[0] == 0.0));
    let sweep = sweep_switching_times(&p, &net, &x0, &[1.1, 0.9, 1.0], Execution::Sequential).unwrap();
    assert_eq!(sweep.cost_star, 0.0);
    assert_eq!(sweep.t1_star, 0.9);
}

#[test]
fn control_bounds_hold_and_inactive_bounds_change_nothing() {
    let cfg = lqr_config(5);
    let free = train_backward(&lqr_problem(1.0, 1.0), &cfg).unwrap();
    let wide = lqr_problem(1.0, 1.0).with_control_bounds(vec![(-1e9, 1e9)]).unwrap();
    assert_eq!(train_backward(&wide, &cfg).unwrap(), free);

    let tight = lqr_problem(1.0, 1.0).with_control_bounds(vec![(-0.05, 0.05)]).unwrap();
    let net = train_backward(&tight, &cfg).unwrap();
    let traj = closed_loop_simulate(&tight, &net, 1.0, &DVector::from_vec(vec![0.8, -0.6])).unwrap();
    assert!(traj.controls.iter().all(|u| u[0].abs() <= 0.05));
    assert!(traj.controls.iter().any(|u| u[0].abs() == 0.05));
    assert!(lqr_problem(1.0, 1.0).with_control_bounds(vec![(1.0, -1.0)]).is_err());
}

#[test]
fn trained_policy_minimizes_one_step_q_value() {
    let p = lqr_problem(1.0, 1.0);
    let net = train_backward(&p, &lqr_config(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let k = rng.random_range(0..200);
        let t1 = rng.random_range(WINDOW.0..WINDOW.1);
        let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let sched = p.schedule(t1).unwrap();
        let lambda = net.next_costate(k, t1, &x).unwrap();
        let u = policy(&p, &net, &sched, k, t1, &x).unwrap();
        let r = p.reference_at(&sched, k);
        let q_value = |u: &DVector<f64>| {
            stage_cost(&x, u, &r, k, &sched, &p.grid, &p.weights) + lambda.dot(&p.step(&sched, k, &x, u).unwrap())
        };
        let base = q_value(&u);
        for d in [1e-3, -1e-3] {
            let moved = &u + DVector::from_element(1, d);
            assert!(q_value(&moved) >= base - 1e-8);
        }
    }
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let p = lqr_problem(1.0, 1.0);
    let seq = TrainingConfig {
        execution: Execution::Sequential,
        ..lqr_config(8)
    };
    let a = train_backward(&p, &lqr_config(8)).unwrap();
    let b = train_backward(&p, &lqr_config(8)).unwrap();
    let c = train_backward(&p, &seq).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, train_backward(&p, &lqr_config(9)).unwrap());
}

#[test]
fn network_json_round_trip() {
    let net = train_backward(&lqr_problem(1.0, 1.0), &lqr_config(2)).unwrap();
    let text = net.to_json().unwrap();
    for key in [
        "basis",
        "delta_hat",
        "n_prime",
        "phase_count",
        "weights",
        "training_report",
    ] {
        assert!(text.contains(&format!("\"{key}\"")), "{key}");
    }
    assert_eq!(CostateNetwork::from_json(&text).unwrap(), net);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.costatenet.json");
    net.save(&path).unwrap();
    assert_eq!(CostateNetwork::load(&path).unwrap(), net);
}

#[test]
fn empty_domain_is_rejected() {
    let cfg = TrainingConfig {
        domain: vec![],
        ..lqr_config(1)
    };
    assert!(matches!(
        train_backward(&lqr_problem(1.0, 1.0), &cfg),
        Err(AdpError::InvalidArgument(_))
    ));
}

#[test]
fn identical_phases_give_a_flat_curve_matching_the_oracle() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let sys = LinearSwitchedSystem::new(vec![a.clone(), a], vec![b.clone(), b]);
    let template = ScheduleTemplate::single_switch(0usize, 1usize, 0.0, 2.0);
    let w = CostWeights::from_diagonals(&[1.0, 1.0], &[1.0, 1.0], &[1.0]).unwrap();
    let p = OcProblem::new(sys, template, 0.01, w, Reference::zero(2)).unwrap();
    let cfg = TrainingConfig {
        t1_range: Some((0.5, 1.5)),
        ..lqr_config(3)
    };
    let net = train_backward(&p, &cfg).unwrap();
    let x0 = DVector::from_vec(vec![0.8, -0.6]);
    let grid = candidate_grid(0.5, 1.5, 21);
    let sweep = sweep_switching_times(&p, &net, &x0, &grid, Execution::Sequential).unwrap();
    let costs: Vec<f64> = sweep.curve.iter().map(|&(_, c)| c).collect();
    let spread = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max) / sweep.cost_star - 1.0;
    assert!(spread < 0.01, "spread {spread}");
    // The switch only moves Euler step lengths, so the minimizer is a
    // discretization effect; the trained sweep must find the oracle's.
    let oracle_best = grid
        .iter()
        .map(|&t1| (t1, lqr_oracle(&p, t1).unwrap().optimal_cost(&x0)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    assert!((sweep.t1_star - oracle_best).abs() <= 0.05 + 1e-12);
}
