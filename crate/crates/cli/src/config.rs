//! Scenario configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slc_core::adp::TrainingConfig;
use slc_core::engine_fit::EngineFitConfig;
use slc_core::plant::{N_CONTROLS, N_STATES};
use slc_core::slc::OpenLoopScenario;
use slc_core::{Mode, Reference};

/// Commented rendering of [`ScenarioConfig::default`], printed by
/// `--print-config`.
pub const DEFAULT_CONFIG: &str = r#"# Every key is optional; the values shown are the defaults.
# Relative paths resolve against the directory holding this file.

seed = 0
out_dir = "out"

# Flat table (TOML or JSON) of plant parameters; built-in values when absent.
# plant_params = "wl_params.toml"
# Engine weights written by `fit-engine`; published weights when absent.
# engine_weights = "out/engine_weights.json"
# Costate network read by `optimize` and `simulate`;
# defaults to <out_dir>/costate.costatenet.json.
# network = "out/costate.costatenet.json"

# Synthetic engine identification (`fit-engine`).
[engine_fit]
short_duration = 300.0
short_pulse = 0.1
long_duration = 100.0
long_pulse = 1.5
validation_short_duration = 50.0
validation_long_duration = 50.0
sample_dt = 0.01
noise_sigma = 0.01
speed_range = [0.15, 1.0]

[engine_fit.gradient_descent]
learning_rate = 0.02
epochs = 1000
init = 0.1
tolerance = 1e-9

# Open-loop short loading cycle (`open-loop-slc`). When the table is absent
# the built-in four-phase demo runs. Channels: 0 lift pressure rate,
# 1 steering acceleration, 2 fuel, 3 brake (all normalized).
# [open_loop]
# modes = ["backward", "stop", "forward", "stop"]
# switch_times = [5.0, 7.0, 12.0]
# t0 = 0.0
# tf = 15.0
# dt = 0.001
# x0 = [0.7, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.0]
# [[open_loop.segments]]
# channel = 2
# start = 0.0
# end = 15.0
# value = 0.8

# Tracking problem with one free switching time.
[problem]
modes = ["backward", "stop"]
t0 = 0.0
tf = 3.0
delta_hat = 0.001
s = [0.0, 0.0, 0.0, 0.0, 1e4, 1e4, 1e4, 0.0, 0.0, 0.0, 0.0]
q = [0.0, 0.0, 0.0, 0.0, 1e4, 1e4, 0.0, 0.0, 0.0, 0.0, 0.0]
r = [1000.0, 1000.0, 1000.0, 1000.0]
# Box on the normalized controls; an empty list leaves them unbounded.
control_bounds = [[-1.0, 1.0], [-1.0, 1.0], [0.0, 1.0], [0.0, 1.0]]

# kind = "closed_form_sine" (r0, channels), "constant" (value) or
# "csv_samples" (path to a CSV with columns t,r1..r11, linear interpolation).
[problem.reference]
kind = "closed_form_sine"
r0 = [0.0, 0.0, 0.0, 0.0, 0.3, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0]
channels = [4, 5]

# Backward training of the costate networks (`train`).
[training]
domain = [
    [0.4, 0.9], [2.0, 3.8], [-0.05, 0.15], [-0.05, 0.05], [-0.5, 1.0], [-0.5, 1.0],
    [-0.6, 0.1], [1.0, 1.5], [-0.3, 0.3], [0.35, 0.45], [-0.2, 0.2],
]
t1_range = [0.15, 2.85]
batch_size = 500
inner_iterations = 3
stationarity = "newton"
inner_tolerance = 1e-8
ridge = 1e-8
max_condition = 1e12
degree = 2
center_basis = true
fd_step = 1e-6
seed = 0
execution = "parallel"

# Switching-time sweep and closed-loop rollout (`optimize`, `simulate`).
[sweep]
candidates = 101
x0 = [0.65, 2.8, 0.05, 0.0, 0.25, 0.25, -0.25, 1.25, 0.0, 0.4, 0.0]
# Candidate interval; the network's training interval when absent.
# range = [0.15, 2.85]
"#;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Overrides `training.seed` and seeds the engine excitation.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub plant_params: Option<PathBuf>,
    pub engine_weights: Option<PathBuf>,
    pub network: Option<PathBuf>,
    pub engine_fit: EngineFitConfig,
    pub open_loop: Option<OpenLoopScenario>,
    pub problem: ProblemConfig,
    pub training: TrainingConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub modes: Vec<Mode>,
    /// Interior switching instants for templates with more than two phases;
    /// the entry at `free_switch` is a placeholder.
    pub switch_times: Option<Vec<f64>>,
    pub free_switch: usize,
    pub t0: f64,
    pub tf: f64,
    pub delta_hat: f64,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub control_bounds: Vec<(f64, f64)>,
    pub reference: ReferenceConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Constant { value: Vec<f64> },
    ClosedFormSine { r0: Vec<f64>, channels: Vec<usize> },
    CsvSamples { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub candidates: usize,
    pub x0: Vec<f64>,
    pub range: Option<(f64, f64)>,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn diag(entries: &[(usize, f64)], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &(i, x) in entries {
        v[i] = x;
    }
    v
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            plant_params: None,
            engine_weights: None,
            network: None,
            engine_fit: EngineFitConfig::default(),
            open_loop: None,
            problem: ProblemConfig::default(),
            training: TrainingConfig {
                domain: vec![
                    (0.4, 0.9),
                    (2.0, 3.8),
                    (-0.05, 0.15),
                    (-0.05, 0.05),
                    (-0.5, 1.0),
                    (-0.5, 1.0),
                    (-0.6, 0.1),
                    (1.0, 1.5),
                    (-0.3, 0.3),
                    (0.35, 0.45),
                    (-0.2, 0.2),
                ],
                t1_range: Some((0.15, 2.85)),
                ..TrainingConfig::default()
            },
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let delta_hat = 1e-3;
        Self {
            modes: vec![Mode::Backward, Mode::Stop],
            switch_times: None,
            free_switch: 0,
            t0: 0.0,
            tf: 3.0,
            delta_hat,
            s: diag(&[(4, 1e4), (5, 1e4), (6, 1e4)], N_STATES),
            q: diag(&[(4, 1e4), (5, 1e4)], N_STATES),
            r: vec![1.0 / delta_hat; N_CONTROLS],
            control_bounds: vec![(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
            reference: ReferenceConfig::ClosedFormSine {
                r0: diag(&[(4, 0.3), (5, -0.1)], N_STATES),
                channels: vec![4, 5],
            },
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            candidates: 101,
            x0: vec![0.65, 2.8, 0.05, 0.0, 0.25, 0.25, -0.25, 1.25, 0.0, 0.4, 0.0],
            range: None,
        }
    }
}

impl ScenarioConfig {
    /// Parses `text` on top of the defaults. Nested tables merge key by key,
    /// except tagged tables (those with a `kind` key), which replace the
    /// default outright.
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let over: toml::Table = text.parse()?;
        let mut merged = toml::Table::try_from(Self::default())?;
        merge(&mut merged, over);
        Ok(merged.try_into()?)
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.plant_params, &mut self.engine_weights, &mut self.network]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let ReferenceConfig::CsvSamples { path } = &mut self.problem.reference {
            fix(path);
        }
    }

    pub fn network_path(&self) -> PathBuf {
        self.network
            .clone()
            .unwrap_or_else(|| self.out_dir.join("costate.costatenet.json"))
    }

    /// Shape checks that need no files.
    pub fn validate(&self) -> anyhow::Result<()> {
        let p = &self.problem;
        anyhow::ensure!(p.t0 < p.tf, "problem.t0 = {} must be below problem.tf = {}", p.t0, p.tf);
        anyhow::ensure!(p.modes.len() >= 2, "problem.modes needs at least two modes");
        anyhow::ensure!(
            p.s.len() == N_STATES,
            "problem.s has {} entries, need {N_STATES}",
            p.s.len()
        );
        anyhow::ensure!(
            p.q.len() == N_STATES,
            "problem.q has {} entries, need {N_STATES}",
            p.q.len()
        );
        anyhow::ensure!(
            p.r.len() == N_CONTROLS,
            "problem.r has {} entries, need {N_CONTROLS}",
            p.r.len()
        );
        anyhow::ensure!(
            p.control_bounds.is_empty() || p.control_bounds.len() == N_CONTROLS,
            "problem.control_bounds has {} entries, need 0 or {N_CONTROLS}",
            p.control_bounds.len()
        );
        anyhow::ensure!(
            self.sweep.x0.len() == N_STATES,
            "sweep.x0 has {} entries, need {N_STATES}",
            self.sweep.x0.len()
        );
        anyhow::ensure!(self.sweep.candidates > 0, "sweep.candidates must be positive");
        Ok(())
    }
}

impl ReferenceConfig {
    pub fn to_reference(&self) -> anyhow::Result<Reference> {
        Ok(match self {
            ReferenceConfig::Constant { value } => Reference::Constant { value: value.clone() },
            ReferenceConfig::ClosedFormSine { r0, channels } => Reference::ClosedFormSine {
                r0: r0.clone(),
                channels: channels.clone(),
            },
            ReferenceConfig::CsvSamples { path } => read_reference_csv(path)?,
        })
    }
}

fn read_reference_csv(path: &Path) -> anyhow::Result<Reference> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| anyhow::anyhow!("cannot read reference samples {}: {e}", path.display()))?;
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let row: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow::anyhow!("{} row {}: {e}", path.display(), line + 1))?;
        let (t, r) = row
            .split_first()
            .ok_or_else(|| anyhow::anyhow!("{} row {} is empty", path.display(), line + 1))?;
        times.push(*t);
        values.push(r.to_vec());
    }
    Ok(Reference::Samples { times, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_match_code() {
        let parsed = ScenarioConfig::from_toml(DEFAULT_CONFIG).unwrap();
        assert_eq!(parsed, ScenarioConfig::default());
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn partial_tables_keep_remaining_defaults() {
        let cfg = ScenarioConfig::from_toml(
            "[training]\nbatch_size = 120\n[problem.reference]\nkind = \"constant\"\nvalue = [1.0]",
        )
        .unwrap();
        let d = ScenarioConfig::default();
        assert_eq!(cfg.training.batch_size, 120);
        assert_eq!(cfg.training.domain, d.training.domain);
        assert_eq!(cfg.problem.reference, ReferenceConfig::Constant { value: vec![1.0] });
        assert_eq!(cfg.problem.s, d.problem.s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml("sed = 3").is_err());
        assert!(ScenarioConfig::from_toml("[problem]\ntf2 = 1.0").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_directory() {
        let mut cfg = ScenarioConfig::from_toml("plant_params = \"p.toml\"\nnetwork = \"/abs/n.json\"").unwrap();
        cfg.resolve_paths(Path::new("/etc/run"));
        assert_eq!(cfg.plant_params.unwrap(), PathBuf::from("/etc/run/p.toml"));
        assert_eq!(cfg.network.unwrap(), PathBuf::from("/abs/n.json"));
        assert_eq!(cfg.out_dir, PathBuf::from("/etc/run/out"));
    }

    #[test]
    fn wrong_diagonal_length_fails_validation() {
        let mut cfg = ScenarioConfig::default();
        cfg.problem.r.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.problem.tf = cfg.problem.t0;
        assert!(cfg.validate().is_err());
    }
}
