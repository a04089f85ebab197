use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use slc_core::engine_fit::EngineWeights;
use slc_core::transform::{discretize_step, total_cost};
use slc_core::{
    CostWeights, HatGrid, LinearSwitchedSystem, Mode, ModeSchedule, Reference, Trajectory, WheelLoader, WlParams,
};

/// Sorted interior switching times strictly inside `(0, tf)`.
fn schedule(phases: usize) -> impl Strategy<Value = ModeSchedule<usize>> {
    (prop::collection::vec(0.01..0.99f64, phases - 1), 0.5..10.0f64).prop_map(move |(mut cuts, tf)| {
        cuts.sort_by(f64::total_cmp);
        let times = cuts.iter().map(|c| c * tf).collect();
        ModeSchedule::new((0..phases).collect(), times, 0.0, tf).unwrap()
    })
}

proptest! {
    #[test]
    fn time_map_round_trip(sched in schedule(3), s in 0.0..1.0f64) {
        let t = s * sched.tf;
        let back = sched.hat_to_time(sched.time_to_hat(t).unwrap()).unwrap();
        prop_assert!((t - back).abs() < 1e-12, "{t} -> {back}");
    }

    #[test]
    fn time_map_is_monotone(sched in schedule(4), a in 0.0..4.0f64, b in 0.0..4.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sched.hat_to_time(lo).unwrap() <= sched.hat_to_time(hi).unwrap());
    }

    #[test]
    fn hat_grid_rollout_is_real_time_euler(
        sched in schedule(2),
        a in prop::collection::vec(-2.0..2.0f64, 2),
        b in prop::collection::vec(-1.0..1.0f64, 2),
        x0 in -1.0..1.0f64,
        u in -1.0..1.0f64,
    ) {
        let sys = LinearSwitchedSystem::new(
            a.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(),
            b.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(),
        );
        let grid = HatGrid::new(0.01, 2).unwrap();
        let uv = DVector::from_element(1, u);
        let mut x = DVector::from_element(1, x0);
        // Independent real-time Euler: 100 equal steps per phase.
        let mut y = x0;
        for k in 0..grid.n_prime() {
            x = discretize_step(&sys, &x, &uv, k, &sched, &grid).unwrap();
            let i = k / 100;
            let dt = sched.phase_length(i) / 100.0;
            y += dt * (a[i] * y + b[i] * u);
            prop_assert!((x[0] - y).abs() < 1e-8, "step {k}: {} vs {y}", x[0]);
        }
    }
}

fn paper_cost(delta_hat: f64) -> f64 {
    let plant = WheelLoader::new(WlParams::default(), EngineWeights::published());
    let sched = ModeSchedule::new(vec![Mode::Backward, Mode::Stop], vec![1.5], 0.0, 3.0).unwrap();
    let grid = HatGrid::new(delta_hat, 2).unwrap();
    let mut s = vec![0.0; 11];
    let mut q = vec![0.0; 11];
    for i in [4, 5, 6] {
        s[i] = 1e4;
    }
    q[4] = 1e4;
    q[5] = 1e4;
    let w = CostWeights::from_diagonals(&s, &q, &[1000.0; 4]).unwrap();
    let mut r0 = vec![0.0; 11];
    r0[4] = 0.3;
    r0[5] = -0.1;
    let reference = Reference::ClosedFormSine {
        r0,
        channels: vec![4, 5],
    };
    let x0 = DVector::from_vec(vec![0.65, 2.8, 0.05, 0.0, 0.25, 0.25, -0.25, 1.25, 0.0, 0.4, 0.0]);
    // Smooth open-loop input: steady fueling, a small steering ramp.
    let u = DVector::from_vec(vec![0.0, 0.02, 0.5, 0.0]);
    let mut traj = Trajectory::start(0.0, x0.clone(), Mode::Backward);
    let mut x = x0;
    for k in 0..grid.n_prime() {
        x = discretize_step(&plant, &x, &u, k, &sched, &grid).unwrap();
        traj.push(u.clone(), 0.0, 0.0, x.clone(), Mode::Backward);
    }
    total_cost(&traj, &sched, &grid, &w, &reference).unwrap()
}

#[test]
fn cost_converges_under_step_halving() {
    let coarse = paper_cost(2e-3);
    let fine = paper_cost(1e-3);
    let finer = paper_cost(5e-4);
    let change = |a: f64, b: f64| ((a - b) / b).abs();
    assert!(change(fine, finer) < 0.01, "{fine} vs {finer}");
    assert!(change(fine, finer) < change(coarse, fine));
}
