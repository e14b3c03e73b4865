//! Declarative run configuration (TOML).
//!
//! A file names a built-in `scenario` and overrides any subset of its fields:
//!
//! ```toml
//! scenario = "relax-bbar"
//! [grid]
//! n = 64
//! [step]
//! t_end = 5.0
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{DecayWindow, DiagnosticsConfig, Reference};
use crate::grid::{Grid, GridError};
use crate::integrator::{StepControl, StepError};
use crate::model::{ModelError, Params, State};
use crate::scenario;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Params(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("invalid initial data: {0}")]
    Initial(String),
    #[error("invalid diagnostics settings: {0}")]
    Diagnostics(String),
    #[error("invalid converge settings: {0}")]
    Converge(String),
}

fn two_pi() -> f64 {
    2.0 * PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "two_pi")]
    pub length: f64,
    #[serde(default)]
    pub dealias: bool,
}

/// One Fourier term `amplitude·cos(mode·(2π/L)·x + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub mode: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub rho_mean: f64,
    pub b_mean: f64,
    #[serde(default)]
    pub rho_modes: Vec<Mode>,
    #[serde(default)]
    pub b_modes: Vec<Mode>,
}

/// A requested mode the grid cannot carry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DroppedMode {
    pub field: &'static str,
    pub mode: u32,
}

impl InitialData {
    /// Samples the data on `grid`. Modes at or above `n/2` are dropped so the
    /// sampled field is exactly the band-limited projection.
    pub fn build(&self, grid: &Grid) -> Result<(State, Vec<DroppedMode>), ConfigError> {
        let k1 = grid.k1();
        let nyquist = (grid.n() / 2) as u32;
        let mut dropped = Vec::new();
        let mut synth = |field: &'static str, mean: f64, modes: &[Mode]| -> Result<Vec<f64>, ConfigError> {
            let mut kept = Vec::new();
            for m in modes {
                if m.mode == 0 {
                    return Err(ConfigError::Initial(format!(
                        "{field} mode 0 would change the declared mean; modes start at 1"
                    )));
                }
                if !(m.amplitude.is_finite() && m.phase.is_finite()) {
                    return Err(ConfigError::Initial(format!("{field} mode {} is not finite", m.mode)));
                }
                if m.mode >= nyquist {
                    dropped.push(DroppedMode { field, mode: m.mode });
                } else {
                    kept.push(*m);
                }
            }
            Ok((0..grid.n())
                .map(|j| {
                    let x = grid.x(j);
                    mean + kept
                        .iter()
                        .map(|m| m.amplitude * (m.mode as f64 * k1 * x + m.phase).cos())
                        .sum::<f64>()
                })
                .collect())
        };
        let rho = synth("rho", self.rho_mean, &self.rho_modes)?;
        let b = synth("b", self.b_mean, &self.b_modes)?;
        if let Some((j, r)) = rho.iter().enumerate().find(|(_, r)| r.is_nan() || **r <= 0.0) {
            return Err(ConfigError::Initial(format!(
                "initial rho must be positive; got {r} at x = {}",
                grid.x(j)
            )));
        }
        let state = State::new(
            crate::grid::Field::new(grid, rho)?,
            crate::grid::Field::new(grid, b)?,
            0.0,
        )?;
        Ok((state, dropped))
    }
}

fn default_seminorms() -> Vec<u32> {
    vec![1, 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSettings {
    pub cadence: f64,
    #[serde(default = "default_seminorms")]
    pub seminorms: Vec<u32>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Also snapshot the final state at `t_end`.
    #[serde(default)]
    pub snapshot_final: bool,
    #[serde(default)]
    pub fit: DecayWindow,
}

fn default_timeseries() -> String {
    "timeseries.csv".into()
}

fn default_summary() -> String {
    "summary.json".into()
}

fn default_snapshot_prefix() -> String {
    "snapshot".into()
}

/// File names inside the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default = "default_timeseries")]
    pub timeseries: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default = "default_snapshot_prefix")]
    pub snapshot_prefix: String,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            timeseries: default_timeseries(),
            summary: default_summary(),
            snapshot_prefix: default_snapshot_prefix(),
        }
    }
}

/// Resolution, time-step and regularization sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSettings {
    pub ns: Vec<usize>,
    pub reference_n: usize,
    pub spatial_t_end: f64,
    pub epsilons: Vec<f64>,
    pub epsilon_n: usize,
    pub epsilon_t_end: f64,
    pub temporal_n: usize,
    pub temporal_steps: usize,
}

impl Default for ConvergeSettings {
    fn default() -> Self {
        Self {
            ns: vec![32, 64, 128, 256],
            reference_n: 512,
            spatial_t_end: 2e-3,
            epsilons: vec![0.0, 1e-4, 1e-3],
            epsilon_n: 64,
            epsilon_t_end: 1.0,
            temporal_n: 32,
            temporal_steps: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub grid: GridConfig,
    pub params: Params,
    pub initial: InitialData,
    pub step: StepControl,
    pub diagnostics: DiagnosticsSettings,
    #[serde(default)]
    pub output: OutputSettings,
    #[serde(default)]
    pub converge: ConvergeSettings,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses a TOML document layered over its scenario (default `relax-b0`).
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let name = match user.get("scenario") {
            None => "relax-b0".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(ConfigError::Parse(format!("scenario must be a string, got {other}"))),
        };
        let base = scenario::find(&name)
            .ok_or_else(|| ConfigError::UnknownScenario(name.clone()))?
            .config();
        let mut table = match toml::Value::try_from(&base) {
            Ok(toml::Value::Table(t)) => t,
            Ok(_) => unreachable!("configs serialize to tables"),
            Err(e) => return Err(ConfigError::Parse(e.to_string())),
        };
        merge(&mut table, user);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Ok(Grid::new(self.grid.n, self.grid.length)?.with_dealias(self.grid.dealias))
    }

    pub fn reference(&self) -> Reference {
        Reference {
            rho: self.initial.rho_mean,
            b: self.initial.b_mean,
        }
    }

    pub fn diagnostics_config(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            seminorms: self.diagnostics.seminorms.clone(),
            reference: Some(self.reference()),
        }
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let mut t = self.diagnostics.snapshot_times.clone();
        if self.diagnostics.snapshot_final {
            t.push(self.step.t_end);
        }
        t
    }

    pub fn initial_state(&self) -> Result<(State, Vec<DroppedMode>), ConfigError> {
        self.initial.build(&self.grid()?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate()?;
        self.step.validate()?;
        self.initial_state()?;
        let d = &self.diagnostics;
        if !(d.cadence > 0.0 && d.cadence.is_finite()) {
            return Err(ConfigError::Diagnostics(format!("cadence must be positive (got {})", d.cadence)));
        }
        if let Some(s) = d.seminorms.iter().find(|&&s| s > 8) {
            return Err(ConfigError::Diagnostics(format!("seminorm order {s} is above the supported 8")));
        }
        if let Some(t) = d.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= self.step.t_end)) {
            return Err(ConfigError::Diagnostics(format!("snapshot time {t} is outside [0, t_end]")));
        }
        let c = &self.converge;
        if c.ns.is_empty() || c.ns.iter().any(|&n| n > c.reference_n) {
            return Err(ConfigError::Converge("ns must be nonempty and not exceed reference_n".into()));
        }
        if c.ns.iter().any(|&n| !c.reference_n.is_multiple_of(n)) {
            return Err(ConfigError::Converge("every n must divide reference_n".into()));
        }
        if c.temporal_steps < 8 {
            return Err(ConfigError::Converge("temporal_steps must be at least 8".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_defaults_round_trip_through_toml() {
        for s in scenario::registry() {
            let cfg = s.config();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg, "{}", s.name());
        }
    }

    #[test]
    fn overrides_layer_over_scenario() {
        let cfg = RunConfig::from_toml_str("scenario = \"relax-bbar\"\n[grid]\nn = 64\n[step]\nt_end = 1.5\n").unwrap();
        assert_eq!(cfg.grid.n, 64);
        assert_eq!(cfg.step.t_end, 1.5);
        assert_eq!(cfg.initial.b_mean, 0.5);
        assert_eq!(cfg.step.cfl, 0.5);
    }

    #[test]
    fn bad_gamma_cites_the_interval() {
        let err = RunConfig::from_toml_str("[params]\ngamma = 2.3\n").unwrap_err();
        assert!(err.to_string().contains("(1, 2)"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_scenarios() {
        assert!(matches!(RunConfig::from_toml_str("[grid]\nm = 3\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml_str("scenario = \"nope\"\n"),
            Err(ConfigError::UnknownScenario(_))
        ));
        assert!(RunConfig::from_toml_str("[grid]\nn = 15\n").is_err());
    }

    #[test]
    fn initial_data_checks() {
        let err = RunConfig::from_toml_str("[initial]\nrho_mean = 1.0\nb_mean = 0.0\nrho_modes = [{ mode = 1, amplitude = 1.5 }]\n")
            .unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
        let err = RunConfig::from_toml_str("[initial]\nrho_mean = 1.0\nb_mean = 0.0\nrho_modes = [{ mode = 0, amplitude = 0.1 }]\n")
            .unwrap_err();
        assert!(err.to_string().contains("mean"), "{err}");
    }

    #[test]
    fn modes_preserve_means_and_high_modes_are_dropped() {
        let grid = Grid::periodic(16).unwrap();
        let data = InitialData {
            rho_mean: 1.0,
            b_mean: 0.5,
            rho_modes: vec![Mode { mode: 3, amplitude: 0.2, phase: 0.4 }, Mode { mode: 8, amplitude: 0.1, phase: 0.0 }],
            b_modes: vec![Mode { mode: 2, amplitude: 0.01, phase: -PI / 2.0 }],
        };
        let (s, dropped) = data.build(&grid).unwrap();
        assert!((s.rho.mean() - 1.0).abs() < 1e-15);
        assert!((s.b.mean() - 0.5).abs() < 1e-15);
        assert_eq!(dropped, vec![DroppedMode { field: "rho", mode: 8 }]);
        for (j, &b) in s.b.values().iter().enumerate() {
            assert!((b - 0.5 - 0.01 * (2.0 * grid.x(j)).sin()).abs() < 1e-16);
        }
    }
}
