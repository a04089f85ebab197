use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use slc_core::engine_fit::{
    fit_torque_weights, generate_excitation, manifold_gradient, manifold_objective, run_engine_fit, torque_sse,
    EngineDataset, EngineFitConfig, EngineWeights, ManifoldParams, Split, TruthEngine,
};

fn dataset(sigma: f64, seconds: f64, seed: u64) -> EngineDataset {
    let sig = generate_excitation(seconds, 0.1, 0.01, seed).unwrap();
    TruthEngine::published(sigma, seed + 1)
        .simulate(&sig, Split::Training)
        .unwrap()
}

/// Normal-equation solve, independent of the QR path under test.
fn normal_equations(d: &EngineDataset) -> [f64; 4] {
    let phi = DMatrix::from_fn(d.len(), 4, |i, j| [1.0, d.omega_e[i], d.p_im[i], d.u_f[i]][j]);
    let y = DVector::from_column_slice(&d.t_e);
    let w = (phi.transpose() * &phi)
        .cholesky()
        .unwrap()
        .solve(&(phi.transpose() * y));
    [w[0], w[1], w[2], w[3]]
}

fn max_diff(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn noisy_torque_weights_recovered() {
    let d = dataset(0.01, 40.0, 5);
    assert_eq!(d.len(), 4000);
    let w = fit_torque_weights(&d).unwrap();
    assert!(max_diff(&w, &normal_equations(&d)) < 1e-8);
    let err = max_diff(&w, &EngineWeights::published().w_te);
    assert!(err < 0.01, "max-norm error {err}");
}

#[test]
fn noiseless_torque_weights_exact() {
    let d = dataset(0.0, 40.0, 9);
    let err = max_diff(&fit_torque_weights(&d).unwrap(), &EngineWeights::published().w_te);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn manifold_parameters_recovered_quickly() {
    let start = Instant::now();
    let report = run_engine_fit(&EngineFitConfig::default(), &EngineWeights::published(), 1).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let truth = EngineWeights::published().manifold();
    let err = report.weights.manifold().max_relative_error(&truth);
    assert!(err < 0.01, "relative error {err}");
    assert!(elapsed < 10.0, "{elapsed} s");
    assert!(report.torque_mae_training < 2e-2);
}

#[test]
fn identification_is_deterministic() {
    let cfg = EngineFitConfig {
        short_duration: 20.0,
        long_duration: 10.0,
        ..EngineFitConfig::default()
    };
    let a = run_engine_fit(&cfg, &EngineWeights::published(), 4).unwrap();
    let b = run_engine_fit(&cfg, &EngineWeights::published(), 4).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.torque_mae_validation, b.torque_mae_validation);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn least_squares_is_optimal(seed in 0u64..1000, dw in prop::array::uniform4(-1e-3..1e-3f64)) {
        let d = dataset(0.05, 5.0, seed);
        let w = fit_torque_weights(&d).unwrap();
        let mut moved = w;
        for i in 0..4 {
            moved[i] += dw[i];
        }
        prop_assert!(torque_sse(&moved, &d) >= torque_sse(&w, &d) * (1.0 - 1e-12));
    }

    #[test]
    fn manifold_gradient_matches_differences(seed in 0u64..1000, q in prop::array::uniform5(-0.5..0.5f64)) {
        let d = dataset(0.0, 2.0, seed);
        let params = ManifoldParams::from_array(q);
        let g = manifold_gradient(&params, &d).unwrap();
        for i in 0..5 {
            let h = 1e-6;
            let (mut up, mut dn) = (q, q);
            up[i] += h;
            dn[i] -= h;
            let fd = (manifold_objective(&ManifoldParams::from_array(up), &d).unwrap()
                - manifold_objective(&ManifoldParams::from_array(dn), &d).unwrap())
                / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "component {i}: {fd} vs {}", g[i]);
        }
    }
}
