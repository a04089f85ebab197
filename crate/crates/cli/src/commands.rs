//! Subcommand implementations. Each writes its outputs under the configured
//! output directory and returns a [`Failure`] carrying the exit status.

use std::fmt::Display;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use slc_core::adp::{
    candidate_grid, closed_loop_simulate, sweep_switching_times, train_backward, write_cost_curve, AdpError,
};
use slc_core::engine_fit::{run_engine_fit, EngineWeights, FitError};
use slc_core::plant::{N_CONTROLS, N_STATES};
use slc_core::slc::{summarize, OpenLoopScenario, PhaseSummary};
use slc_core::{CostWeights, CostateNetwork, OcProblem, ScheduleTemplate, Trajectory, WheelLoader, WlParams};

use crate::config::ScenarioConfig;

pub const ENGINE_WEIGHTS_FILE: &str = "engine_weights.json";
pub const ENGINE_MAE_FILE: &str = "engine_fit_mae.csv";
pub const SLC_TRAJECTORY_FILE: &str = "slc_trajectory.csv";
pub const SLC_SUMMARY_FILE: &str = "slc_summary.json";
pub const WEIGHT_HISTORY_FILE: &str = "weight_history.csv";
pub const TRAINING_SUMMARY_FILE: &str = "training_summary.json";
pub const COST_CURVE_FILE: &str = "cost_curve.csv";
pub const CLOSED_LOOP_FILE: &str = "closed_loop.csv";
pub const OPTIMIZE_REPORT_FILE: &str = "optimize_report.json";
pub const SIMULATION_FILE: &str = "simulation.csv";
pub const SIMULATION_REPORT_FILE: &str = "simulation_report.json";

/// Error with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub status: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub const NUMERICAL: u8 = 1;
    pub const CONFIG: u8 = 2;

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: Self::CONFIG,
            error: error.into(),
        }
    }

    pub fn numerical(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: Self::NUMERICAL,
            error: error.into(),
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

trait OrConfig<T> {
    fn or_config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrConfig<T> for Result<T, E> {
    fn or_config(self) -> Result<T, Failure> {
        self.map_err(Failure::config)
    }
}

fn adp_failure(e: AdpError) -> Failure {
    match e {
        AdpError::InvalidArgument(_) | AdpError::Transform(_) | AdpError::Io(_) | AdpError::Json(_) => {
            Failure::config(e)
        }
        _ => Failure::numerical(e),
    }
}

fn fit_failure(e: FitError) -> Failure {
    match e {
        FitError::InvalidArgument(_) | FitError::Io(_) | FitError::Json(_) => Failure::config(e),
        _ => Failure::numerical(e),
    }
}

/// Loaded configuration plus the effective seed and output directory.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: ScenarioConfig,
}

impl Context {
    /// Reads `config` (defaults when `None`) and applies the command-line
    /// overrides.
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, Failure> {
        let mut cfg = match config {
            Some(path) => ScenarioConfig::load(path).or_config()?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.training.seed = cfg.seed;
        if let Some(out) = out {
            cfg.out_dir = out;
        }
        cfg.validate().or_config()?;
        Ok(Self { config: cfg })
    }

    fn out(&self, name: &str) -> Result<PathBuf, Failure> {
        let dir = &self.config.out_dir;
        fs::create_dir_all(dir)
            .map_err(|e| Failure::config(anyhow::anyhow!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(dir.join(name))
    }

    pub fn params(&self) -> Result<WlParams, Failure> {
        match &self.config.plant_params {
            Some(path) => WlParams::from_file(path).or_config(),
            None => Ok(WlParams::default()),
        }
    }

    pub fn plant(&self) -> Result<WheelLoader, Failure> {
        let engine = match &self.config.engine_weights {
            Some(path) => EngineWeights::load(path)
                .map_err(|e| Failure::config(anyhow::anyhow!("cannot load engine weights {}: {e}", path.display())))?,
            None => EngineWeights::published(),
        };
        Ok(WheelLoader::new(self.params()?, engine))
    }

    pub fn problem(&self) -> Result<OcProblem<WheelLoader>, Failure> {
        let p = &self.config.problem;
        let template = match &p.switch_times {
            Some(times) => ScheduleTemplate {
                modes: p.modes.clone(),
                switch_times: times.clone(),
                free_index: p.free_switch,
                t0: p.t0,
                tf: p.tf,
            },
            None if p.modes.len() == 2 => ScheduleTemplate::single_switch(p.modes[0], p.modes[1], p.t0, p.tf),
            None => {
                return Err(Failure::config(anyhow::anyhow!(
                    "problem.switch_times is required for {} modes",
                    p.modes.len()
                )))
            }
        };
        let weights = CostWeights::from_diagonals(&p.s, &p.q, &p.r).or_config()?;
        let reference = p.reference.to_reference().or_config()?;
        let problem = OcProblem::new(self.plant()?, template, p.delta_hat, weights, reference).map_err(adp_failure)?;
        if p.control_bounds.is_empty() {
            Ok(problem)
        } else {
            problem
                .with_control_bounds(p.control_bounds.clone())
                .map_err(adp_failure)
        }
    }

    fn network(&self) -> Result<CostateNetwork, Failure> {
        let path = self.config.network_path();
        CostateNetwork::load(&path)
            .map_err(|e| Failure::config(anyhow::anyhow!("cannot load costate network {}: {e}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).or_config()?;
    fs::write(path, text + "\n").map_err(|e| Failure::config(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::config(anyhow::anyhow!("cannot create {}: {e}", path.display())))
}

fn save_trajectory(traj: &Trajectory, path: &Path, control_dim: usize) -> Result<(), Failure> {
    traj.save_csv(path, control_dim)
        .map_err(|e| Failure::config(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct EngineFitSummary {
    pub torque_mae_training: f64,
    pub torque_mae_validation: f64,
    pub manifold_mae_training: f64,
    pub manifold_mae_validation: f64,
    pub epochs_run: usize,
}

/// Synthetic identification run; writes the weights JSON and the MAE CSV.
pub fn fit_engine(ctx: &Context) -> Result<EngineFitSummary, Failure> {
    let cfg = &ctx.config;
    let report = run_engine_fit(&cfg.engine_fit, &EngineWeights::published(), cfg.seed).map_err(fit_failure)?;
    report
        .weights
        .save(&ctx.out(ENGINE_WEIGHTS_FILE)?)
        .map_err(fit_failure)?;
    let path = ctx.out(ENGINE_MAE_FILE)?;
    report
        .write_mae_csv(create(&path)?)
        .map_err(|e| Failure::config(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    Ok(EngineFitSummary {
        torque_mae_training: report.torque_mae_training,
        torque_mae_validation: report.torque_mae_validation,
        manifold_mae_training: report.manifold_mae_training,
        manifold_mae_validation: report.manifold_mae_validation,
        epochs_run: report.epochs_run,
    })
}

#[derive(Debug, Serialize)]
pub struct SlcSummary {
    pub phases: Vec<PhaseSummary>,
    pub final_speed: f64,
    pub final_heading_deg: f64,
}

/// Open-loop short loading cycle. On a plant guard the rows computed so far
/// are still written.
pub fn open_loop_slc(ctx: &Context) -> Result<SlcSummary, Failure> {
    let plant = ctx.plant()?;
    let scenario = match &ctx.config.open_loop {
        Some(s) => s.clone(),
        None => OpenLoopScenario::demo(&plant.params),
    };
    scenario.validate().or_config()?;
    let sched = scenario.schedule().or_config()?;
    let path = ctx.out(SLC_TRAJECTORY_FILE)?;
    let traj = match scenario.run(&plant) {
        Ok(t) => t,
        Err(e) => {
            save_trajectory(&e.partial, &path, N_CONTROLS)?;
            return Err(Failure::numerical(anyhow::anyhow!(
                "open-loop simulation stopped at t = {} (step {}): {}; partial trajectory in {}",
                e.time,
                e.step,
                e.source,
                path.display()
            )));
        }
    };
    save_trajectory(&traj, &path, N_CONTROLS)?;
    let phases = summarize(&traj, &sched, &plant);
    let last = phases.last().expect("schedule has phases");
    let summary = SlcSummary {
        final_speed: last.v_end,
        final_heading_deg: last.heading_end_deg,
        phases,
    };
    write_json(&ctx.out(SLC_SUMMARY_FILE)?, &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct TrainingSummary {
    pub n_prime: usize,
    pub basis_size: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `||W_b - W_{b-1}||_F` over the median adjacent-step difference, per
    /// interior phase boundary.
    pub boundary_jump_ratios: Vec<f64>,
    pub max_rms_residual: f64,
}

/// Backward training; writes the network file and the weight history.
pub fn train(ctx: &Context) -> Result<TrainingSummary, Failure> {
    let problem = ctx.problem()?;
    let cfg = &ctx.config.training;
    let p = &ctx.config.problem;
    cfg.validate(N_STATES, p.t0, p.tf).map_err(Failure::config)?;
    let net = train_backward(&problem, cfg).map_err(adp_failure)?;
    let path = ctx.out(WEIGHT_HISTORY_FILE)?;
    let net_path = ctx.config.network_path();
    if let Some(dir) = net_path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::config(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;
    }
    net.save(&net_path).map_err(adp_failure)?;
    net.write_weight_history(create(&path)?)
        .map_err(|e| Failure::config(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    let summary = TrainingSummary {
        n_prime: net.n_prime(),
        basis_size: net.basis.len(),
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        boundary_jump_ratios: net.boundary_jump_ratios(),
        max_rms_residual: net.report.rms_residual.iter().copied().fold(0.0, f64::max),
    };
    write_json(&ctx.out(TRAINING_SUMMARY_FILE)?, &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct OptimizeReport {
    pub t1_star: f64,
    pub j_star: f64,
    /// Cost at the first and last sweep candidates.
    pub j_first: f64,
    pub j_last: f64,
    pub candidates: usize,
    pub failed_candidates: Vec<(f64, String)>,
    pub x0_in_domain: bool,
    /// Total cost of the exported closed-loop trajectory.
    pub closed_loop_cost: f64,
}

fn initial_state(ctx: &Context, net: &CostateNetwork) -> DVector<f64> {
    let x0 = DVector::from_column_slice(&ctx.config.sweep.x0);
    if !net
        .domain
        .iter()
        .zip(x0.iter())
        .all(|((lo, hi), v)| (lo..=hi).contains(&v))
    {
        eprintln!("warning: x0 lies outside the training domain; the networks extrapolate");
    }
    x0
}

/// Switching-time sweep, then the closed-loop rollout at the minimizer.
pub fn optimize(ctx: &Context) -> Result<OptimizeReport, Failure> {
    let net = ctx.network()?;
    let problem = ctx.problem()?;
    let x0 = initial_state(ctx, &net);
    let (lo, hi) = ctx.config.sweep.range.unwrap_or(net.t1_range);
    let candidates = candidate_grid(lo, hi, ctx.config.sweep.candidates);
    let sweep = sweep_switching_times(&problem, &net, &x0, &candidates, ctx.config.training.execution)
        .map_err(Failure::numerical)?;
    let path = ctx.out(COST_CURVE_FILE)?;
    write_cost_curve(&sweep.curve, create(&path)?)
        .map_err(|e| Failure::config(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    let traj = closed_loop_simulate(&problem, &net, sweep.t1_star, &x0).map_err(Failure::numerical)?;
    save_trajectory(&traj, &ctx.out(CLOSED_LOOP_FILE)?, N_CONTROLS)?;
    let report = OptimizeReport {
        t1_star: sweep.t1_star,
        j_star: sweep.cost_star,
        j_first: sweep.curve[0].1,
        j_last: sweep.curve[sweep.curve.len() - 1].1,
        candidates: sweep.curve.len(),
        failed_candidates: sweep.failures,
        x0_in_domain: net.contains(sweep.t1_star, &x0),
        closed_loop_cost: traj.total_cost(),
    };
    write_json(&ctx.out(OPTIMIZE_REPORT_FILE)?, &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub t1: f64,
    pub total_cost: f64,
    pub terminal_cost: f64,
    pub final_state: Vec<f64>,
}

/// Closed-loop rollout at a given switching time.
pub fn simulate(ctx: &Context, t1: f64) -> Result<SimulationReport, Failure> {
    let net = ctx.network()?;
    let problem = ctx.problem()?;
    let x0 = initial_state(ctx, &net);
    let path = ctx.out(SIMULATION_FILE)?;
    let traj = match closed_loop_simulate(&problem, &net, t1, &x0) {
        Ok(t) => t,
        Err(AdpError::Simulation { step, source, partial }) => {
            save_trajectory(&partial, &path, N_CONTROLS)?;
            return Err(Failure::numerical(anyhow::anyhow!(
                "closed-loop simulation stopped at step {step}: {source}; partial trajectory in {}",
                path.display()
            )));
        }
        Err(e) => return Err(adp_failure(e)),
    };
    save_trajectory(&traj, &path, N_CONTROLS)?;
    let report = SimulationReport {
        t1,
        total_cost: traj.total_cost(),
        terminal_cost: traj.terminal_cost,
        final_state: traj.final_state().iter().copied().collect(),
    };
    write_json(&ctx.out(SIMULATION_REPORT_FILE)?, &report)?;
    Ok(report)
}
