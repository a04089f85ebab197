use std::io::Write;

use nalgebra::DVector;

use super::{closed_loop_simulate, AdpError, CostateNetwork, OcProblem};
use crate::par::{self, Execution};
use crate::system::SwitchedSystem;

/// Costs closer than this count as tied; the smaller switching time wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub t1_star: f64,
    pub cost_star: f64,
    /// `(t1, cost)` per candidate; failed rollouts carry `f64::INFINITY`.
    pub curve: Vec<(f64, f64)>,
    /// Candidates whose rollout failed, with the reason.
    pub failures: Vec<(f64, String)>,
}

/// `count` uniformly spaced values from `lo` to `hi` inclusive.
pub fn candidate_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Closed-loop cost at every candidate switching time and the minimizer.
pub fn sweep_switching_times<S: SwitchedSystem>(
    problem: &OcProblem<S>,
    net: &CostateNetwork,
    x0: &DVector<f64>,
    candidates: &[f64],
    exec: Execution,
) -> Result<SweepResult, AdpError> {
    if candidates.is_empty() {
        return Err(AdpError::InvalidArgument("no candidate switching times".into()));
    }
    let outcomes = par::map(exec, candidates, |&t1| {
        closed_loop_simulate(problem, net, t1, x0).map(|tr| tr.total_cost())
    });
    let mut curve = Vec::with_capacity(candidates.len());
    let mut failures = Vec::new();
    for (&t1, outcome) in candidates.iter().zip(outcomes) {
        match outcome {
            Ok(c) if c.is_finite() => curve.push((t1, c)),
            Ok(c) => {
                failures.push((t1, format!("non-finite cost {c}")));
                curve.push((t1, f64::INFINITY));
            }
            Err(e) => {
                failures.push((t1, e.to_string()));
                curve.push((t1, f64::INFINITY));
            }
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for &(t1, c) in &curve {
        if !c.is_finite() {
            continue;
        }
        best = match best {
            None => Some((t1, c)),
            Some((bt, bc)) => {
                if c < bc - TIE_TOLERANCE || ((c - bc).abs() <= TIE_TOLERANCE && t1 < bt) {
                    Some((t1, c))
                } else {
                    Some((bt, bc))
                }
            }
        };
    }
    let (t1_star, cost_star) = best.ok_or_else(|| {
        AdpError::InvalidArgument(format!(
            "every candidate rollout failed; first failure: {}",
            failures.first().map_or("none", |f| f.1.as_str())
        ))
    })?;
    Ok(SweepResult {
        t1_star,
        cost_star,
        curve,
        failures,
    })
}

/// CSV `t1,cost`.
pub fn write_cost_curve<W: Write>(curve: &[(f64, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t1,cost")?;
    for (t1, c) in curve {
        writeln!(w, "{t1},{c}")?;
    }
    w.flush()
}
