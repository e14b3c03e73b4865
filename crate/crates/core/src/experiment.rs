//! One configured run: integrate, record, summarize, write.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, DroppedMode, RunConfig};
use crate::diagnostics::{
    energy_rate, fit_decay, max_increase, max_relative_decrease, DecayFit, DecayWindow, DiagnosticsRecord, Recorder,
    Snapshotter, Trajectory,
};
use crate::integrator::{run, Cadence, HaltCause, RunOutcome};
use crate::model::Params;
use crate::relaxvars::{envelope, eval_alpha, eval_beta};

/// Process exit codes shared by every command.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const VACUUM: i32 = 3;
    pub const STIFFNESS: i32 = 4;
    pub const NON_FINITE: i32 = 5;
    pub const AUDIT: i32 = 6;
    pub const DIAGNOSTICS: i32 = 7;
}

pub fn exit_code(halt: &HaltCause) -> i32 {
    match halt {
        HaltCause::Completed => exit::OK,
        HaltCause::VacuumBreach { .. } => exit::VACUUM,
        HaltCause::StiffnessCollapse { .. } => exit::STIFFNESS,
        HaltCause::NonFinite { .. } => exit::NON_FINITE,
        HaltCause::ObserverFailed { .. } => exit::DIAGNOSTICS,
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => exit::CONFIG,
            ExperimentError::Io { .. } => exit::IO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Conservation {
    /// `max |ρ̄(t) − ρ̄(0)| / |ρ̄(0)|`.
    pub mass_drift_rel: f64,
    /// `max |B̄(t) − B̄(0)|` over `max(|B̄(0)|, max|B(0)|)`.
    pub flux_drift_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyBalance {
    pub initial: f64,
    /// Largest record-to-record increase over `E(0)`.
    pub max_increase_rel: f64,
    /// Largest `|dE/dt + D| / D` over interior records with `D > threshold`.
    pub balance_max_rel_error: Option<f64>,
    pub balance_threshold: f64,
    pub balance_points: usize,
}

pub const BALANCE_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaxPrinciple {
    pub min_w_max_rel_decrease: f64,
    pub min_z_max_rel_decrease: f64,
    /// `max_x Z = exp(−min_x z)`, maximized over records.
    pub max_big_z: f64,
    pub min_z_positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub initial_min_rho: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub max_abs_b: f64,
    /// Invariant-region bounds from the initial `min w`, `min z`.
    pub envelope_rho_min: Option<f64>,
    pub envelope_rho_max: Option<f64>,
    pub envelope_b_max: Option<f64>,
    pub within_envelope: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitEntry {
    pub series: String,
    pub fit: Option<DecayFit>,
    pub error: Option<String>,
    /// Linear prediction `λ·k₁²` for the norm.
    pub predicted_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub halt: HaltCause,
    pub halt_label: String,
    pub exit_code: i32,
    pub steps: usize,
    pub records: usize,
    pub t_final: f64,
    pub wall_clock_seconds: f64,
    pub dropped_modes: Vec<DroppedMode>,
    pub conservation: Option<Conservation>,
    pub energy: Option<EnergyBalance>,
    pub max_principle: Option<MaxPrinciple>,
    pub bounds: Option<Bounds>,
    pub fits: Vec<FitEntry>,
}

fn max_drift(values: impl Iterator<Item = f64>, v0: f64) -> f64 {
    values.map(|v| (v - v0).abs()).fold(0.0, f64::max)
}

fn conservation(recs: &[DiagnosticsRecord]) -> Conservation {
    let r0 = &recs[0];
    let flux_scale = r0.flux_mean.abs().max(r0.max_abs_b).max(f64::MIN_POSITIVE);
    Conservation {
        mass_drift_rel: max_drift(recs.iter().map(|r| r.mass), r0.mass) / r0.mass.abs(),
        flux_drift_rel: max_drift(recs.iter().map(|r| r.flux_mean), r0.flux_mean) / flux_scale,
    }
}

fn energy_balance(recs: &[DiagnosticsRecord]) -> EnergyBalance {
    let e0 = recs[0].energy;
    let energies: Vec<f64> = recs.iter().map(|r| r.energy).collect();
    let rates: Vec<_> = energy_rate(recs)
        .into_iter()
        .filter(|&(_, _, d)| d > BALANCE_THRESHOLD)
        .collect();
    let worst = rates.iter().map(|&(_, de, d)| (de + d).abs() / d).fold(None, |acc: Option<f64>, e| {
        Some(acc.map_or(e, |a| a.max(e)))
    });
    EnergyBalance {
        initial: e0,
        max_increase_rel: max_increase(&energies) / e0.abs().max(f64::MIN_POSITIVE),
        balance_max_rel_error: worst,
        balance_threshold: BALANCE_THRESHOLD,
        balance_points: rates.len(),
    }
}

fn max_principle(recs: &[DiagnosticsRecord]) -> MaxPrinciple {
    let w: Vec<f64> = recs.iter().map(|r| r.min_w).collect();
    let z: Vec<f64> = recs.iter().map(|r| r.min_z).collect();
    let z_low = z.iter().copied().fold(f64::INFINITY, f64::min);
    MaxPrinciple {
        min_w_max_rel_decrease: max_relative_decrease(&w),
        min_z_max_rel_decrease: max_relative_decrease(&z),
        max_big_z: (-z_low).exp(),
        min_z_positive: z_low > 0.0,
    }
}

fn bounds(recs: &[DiagnosticsRecord], p: &Params) -> Bounds {
    let fold = |f: fn(&DiagnosticsRecord) -> f64, init: f64, op: fn(f64, f64) -> f64| {
        recs.iter().map(f).fold(init, op)
    };
    let min_rho = fold(|r| r.min_rho, f64::INFINITY, f64::min);
    let max_rho = fold(|r| r.max_rho, f64::NEG_INFINITY, f64::max);
    let max_abs_b = fold(|r| r.max_abs_b, 0.0, f64::max);
    let env = envelope(recs[0].min_w, recs[0].min_z, p).ok();
    // bisection tolerance plus roundoff in the recorded extrema
    let slack = 1e-9;
    Bounds {
        initial_min_rho: recs[0].min_rho,
        min_rho,
        max_rho,
        max_abs_b,
        envelope_rho_min: env.map(|e| e.rho_min),
        envelope_rho_max: env.map(|e| e.rho_max),
        envelope_b_max: env.map(|e| e.b_max),
        within_envelope: env.map(|e| {
            min_rho >= e.rho_min * (1.0 - slack) && max_rho <= e.rho_max * (1.0 + slack) && max_abs_b <= e.b_max * (1.0 + slack)
        }),
    }
}

/// Fits the deviation norms (and coupled norms when `B̄ ≠ 0`).
pub fn fits(traj: &Trajectory, cfg: &RunConfig) -> Vec<FitEntry> {
    fit_with(&traj.records, cfg, cfg.diagnostics.fit)
}

/// Extracts one fitted series from a record.
type SeriesOf = fn(&DiagnosticsRecord) -> f64;

pub fn fit_with(recs: &[DiagnosticsRecord], cfg: &RunConfig, window: DecayWindow) -> Vec<FitEntry> {
    let r = cfg.reference();
    let k1sq = cfg.grid().map(|g| g.k1() * g.k1()).ok();
    let alpha = eval_alpha(r.rho, r.b, &cfg.params).ok();
    let beta = eval_beta(r.rho, r.b, &cfg.params).ok();
    let slowest = alpha.zip(beta).map(|(a, b)| a.min(b));
    let scale = |lam: Option<f64>| lam.zip(k1sq).map(|(l, k)| l * k);
    let mut plan: Vec<(&str, SeriesOf, Option<f64>)> = vec![
        ("rho_dev", |r| r.l2_rho_dev, scale(slowest)),
        ("b_dev", |r| r.l2_b_dev, scale(slowest)),
    ];
    if r.b != 0.0 {
        plan.push(("coupled1", |r| r.coupled[0], scale(alpha)));
        plan.push(("coupled2", |r| r.coupled[1], scale(beta)));
    }
    plan.into_iter()
        .map(|(name, pick, predicted_rate)| {
            let series: Vec<(f64, f64)> = recs.iter().map(|r| (r.time, pick(r))).collect();
            let (fit, error) = match fit_decay(&series, window) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            FitEntry {
                series: name.to_string(),
                fit,
                error,
                predicted_rate,
            }
        })
        .collect()
}

impl RunSummary {
    /// Derives every verdict input from the recorded series alone.
    pub fn from_records(
        cfg: &RunConfig,
        outcome: &RunOutcome,
        records: &[DiagnosticsRecord],
        dropped_modes: Vec<DroppedMode>,
        wall_clock_seconds: f64,
    ) -> Self {
        let have = !records.is_empty();
        RunSummary {
            scenario: cfg.scenario.clone(),
            halt: outcome.halt.clone(),
            halt_label: outcome.halt.label().to_string(),
            exit_code: exit_code(&outcome.halt),
            steps: outcome.steps,
            records: records.len(),
            t_final: outcome.state.time,
            wall_clock_seconds,
            dropped_modes,
            conservation: have.then(|| conservation(records)),
            energy: have.then(|| energy_balance(records)),
            max_principle: have.then(|| max_principle(records)),
            bounds: have.then(|| bounds(records, &cfg.params)),
            fits: if have { fit_with(records, cfg, cfg.diagnostics.fit) } else { Vec::new() },
        }
    }

    pub fn fit(&self, series: &str) -> Option<&FitEntry> {
        self.fits.iter().find(|f| f.series == series)
    }
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub outcome: RunOutcome,
    pub trajectory: Trajectory,
    pub summary: RunSummary,
}

/// Runs `cfg` to completion or to the first halt.
pub fn execute(cfg: &RunConfig) -> Result<RunArtifacts, ExperimentError> {
    cfg.validate()?;
    let (s0, dropped) = cfg.initial_state()?;
    let started = Instant::now();
    let cadence = Cadence {
        t0: 0.0,
        every: cfg.diagnostics.cadence,
        t_end: cfg.step.t_end,
    };
    let mut recorder = Recorder::new(cfg.params, cfg.diagnostics_config(), cadence);
    let mut snaps = Snapshotter::new(cfg.params, cfg.snapshot_times());
    let outcome = run(s0, &cfg.params, &cfg.step, &mut [&mut recorder, &mut snaps]);
    let trajectory = recorder.into_trajectory(snaps.snapshots);
    let summary = RunSummary::from_records(cfg, &outcome, &trajectory.records, dropped, started.elapsed().as_secs_f64());
    Ok(RunArtifacts {
        config: cfg.clone(),
        outcome,
        trajectory,
        summary,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates `path` and hands a buffered writer to `body`.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(io_err(path))?;
    io::Write::flush(&mut w).map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ExperimentError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::from)?;
        io::Write::write_all(w, b"\n")
    })
}

/// Snapshot file name for time `t`, e.g. `snapshot_t20.csv`. The shortest
/// round-trip decimal keeps distinct times distinct.
pub fn snapshot_name(prefix: &str, t: f64) -> String {
    format!("{prefix}_t{t}.csv")
}

/// Writes the time series, snapshots, resolved config and summary into `dir`.
pub fn write_outputs(art: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let out = &art.config.output;
    let mut written = Vec::new();

    let series = dir.join(&out.timeseries);
    write_file(&series, |w| art.trajectory.write_csv(w))?;
    written.push(series);

    for snap in &art.trajectory.snapshots {
        let path = dir.join(snapshot_name(&out.snapshot_prefix, snap.time));
        write_file(&path, |w| snap.write_csv(w))?;
        written.push(path);
    }

    let resolved = dir.join("config.toml");
    write_file(&resolved, |w| io::Write::write_all(w, art.config.to_toml_string().as_bytes()))?;
    written.push(resolved);

    let summary = dir.join(&out.summary);
    write_json(&summary, &art.summary)?;
    written.push(summary);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::read_series_csv;
    use crate::scenario;

    fn short(name: &str, n: usize, t_end: f64) -> RunConfig {
        let mut cfg = scenario::find(name).unwrap().config();
        cfg.grid.n = n;
        cfg.step.t_end = t_end;
        cfg
    }

    #[test]
    fn short_run_summary_is_consistent() {
        let art = execute(&short("relax-bbar", 32, 0.5)).unwrap();
        let s = &art.summary;
        assert_eq!(s.exit_code, 0);
        assert_eq!(s.records, 51);
        assert_eq!(s.t_final, 0.5);
        assert!(s.conservation.as_ref().unwrap().mass_drift_rel < 1e-13);
        assert!(s.energy.as_ref().unwrap().max_increase_rel == 0.0);
        assert!(s.bounds.as_ref().unwrap().within_envelope.unwrap());
        assert_eq!(s.fits.len(), 4);
        assert_eq!(art.trajectory.snapshots.len(), 2);
    }

    #[test]
    fn summary_is_reproducible_from_written_series() {
        let art = execute(&short("relax-b0", 32, 0.3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&art, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let text = fs::read(dir.path().join("timeseries.csv")).unwrap();
        let (_, recs) = read_series_csv(&text[..]).unwrap();
        let again = RunSummary::from_records(&art.config, &art.outcome, &recs, vec![], art.summary.wall_clock_seconds);
        assert_eq!(again, art.summary);
        let cfg = RunConfig::from_toml_str(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
        assert_eq!(cfg, art.config);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let mut codes = vec![
            exit::OK,
            exit::IO,
            exit::CONFIG,
            exit::VACUUM,
            exit::STIFFNESS,
            exit::NON_FINITE,
            exit::AUDIT,
            exit::DIAGNOSTICS,
        ];
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 8);
    }
}
