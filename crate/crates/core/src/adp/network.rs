use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AdpError, PolynomialBasis};
use crate::transform::HatGrid;

/// Per-step fit diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rms_residual: Vec<f64>,
    pub condition: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trained costate networks, one weight matrix per grid step.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateNetwork {
    pub basis: PolynomialBasis,
    pub grid: HatGrid,
    pub state_dim: usize,
    pub t1_range: (f64, f64),
    pub domain: Vec<(f64, f64)>,
    /// `W_k` is `basis.len() x state_dim`; `lambda_{k+1} = W_k' phi(t1, x_k)`.
    pub weights: Vec<DMatrix<f64>>,
    pub report: TrainingReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightHistoryRow {
    pub k_hat: usize,
    pub frobenius_norm: f64,
    pub rms_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    basis: PolynomialBasis,
    delta_hat: f64,
    n_prime: usize,
    phase_count: usize,
    state_dim: usize,
    t1_range: (f64, f64),
    domain: Vec<(f64, f64)>,
    /// Row-major: `weights[k][row][col]`.
    weights: Vec<Vec<Vec<f64>>>,
    training_report: TrainingReport,
}

impl CostateNetwork {
    pub fn n_prime(&self) -> usize {
        self.weights.len()
    }

    /// `lambda_{k+1}` predicted from the state at step `k`.
    pub fn next_costate(&self, k: usize, t1: f64, x: &DVector<f64>) -> Result<DVector<f64>, AdpError> {
        let w = self
            .weights
            .get(k)
            .ok_or_else(|| AdpError::InvalidArgument(format!("step {k} outside [0, {})", self.weights.len())))?;
        if x.len() != self.state_dim {
            return Err(AdpError::InvalidArgument(format!(
                "state has {} entries, network expects {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(w.tr_mul(&self.basis.eval(t1, x)))
    }

    /// True when `(t1, x)` lies in the sampling box used for training.
    pub fn contains(&self, t1: f64, x: &DVector<f64>) -> bool {
        let (lo, hi) = self.t1_range;
        (lo..=hi).contains(&t1) && x.iter().zip(&self.domain).all(|(v, (lo, hi))| (*lo..=*hi).contains(v))
    }

    pub fn weight_history(&self) -> Vec<WeightHistoryRow> {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| WeightHistoryRow {
                k_hat: k,
                frobenius_norm: w.norm(),
                rms_residual: self.report.rms_residual.get(k).copied().unwrap_or(f64::NAN),
            })
            .collect()
    }

    pub fn write_weight_history<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k_hat,frobenius_norm,rms_residual")?;
        for row in self.weight_history() {
            writeln!(w, "{},{},{}", row.k_hat, row.frobenius_norm, row.rms_residual)?;
        }
        w.flush()
    }

    /// `||W_{k+1} - W_k||_F` for consecutive steps.
    pub fn adjacent_differences(&self) -> Vec<f64> {
        self.weights.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect()
    }

    /// For each interior phase boundary `b`, `||W_b - W_{b-1}||_F` divided by
    /// the median adjacent-step difference.
    pub fn boundary_jump_ratios(&self) -> Vec<f64> {
        let diffs = self.adjacent_differences();
        let mut sorted = diffs.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.is_empty() {
            f64::NAN
        } else if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let bounds = self.grid.phase_boundaries();
        bounds[1..bounds.len() - 1]
            .iter()
            .map(|&b| diffs[b - 1] / median)
            .collect()
    }

    pub fn to_json(&self) -> Result<String, AdpError> {
        let file = NetworkFile {
            basis: self.basis.clone(),
            delta_hat: self.grid.delta_hat,
            n_prime: self.n_prime(),
            phase_count: self.grid.phase_count,
            state_dim: self.state_dim,
            t1_range: self.t1_range,
            domain: self.domain.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            training_report: self.report.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AdpError> {
        let f: NetworkFile = serde_json::from_str(text)?;
        let grid = HatGrid::new(f.delta_hat, f.phase_count)?;
        if grid.n_prime() != f.n_prime || f.weights.len() != f.n_prime {
            return Err(AdpError::InvalidArgument(format!(
                "network declares N' = {} but holds {} weight matrices for a grid of {}",
                f.n_prime,
                f.weights.len(),
                grid.n_prime()
            )));
        }
        let m = f.basis.len();
        let weights = f
            .weights
            .iter()
            .enumerate()
            .map(|(k, rows)| {
                if rows.len() != m || rows.iter().any(|r| r.len() != f.state_dim) {
                    return Err(AdpError::InvalidArgument(format!(
                        "weight matrix {k} has the wrong shape"
                    )));
                }
                let w = DMatrix::from_row_iterator(m, f.state_dim, rows.iter().flatten().copied());
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(AdpError::InvalidArgument(format!("weight matrix {k} is not finite")));
                }
                Ok(w)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            basis: f.basis,
            grid,
            state_dim: f.state_dim,
            t1_range: f.t1_range,
            domain: f.domain,
            weights,
            report: f.training_report,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AdpError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AdpError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
