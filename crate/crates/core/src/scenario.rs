//! Built-in scenarios, looked up by name.

use std::f64::consts::FRAC_PI_2;

use crate::config::{ConvergeSettings, DiagnosticsSettings, GridConfig, InitialData, Mode, OutputSettings, RunConfig};
use crate::diagnostics::DecayWindow;
use crate::integrator::StepControl;
use crate::model::Params;

/// A named, fully specified default configuration.
pub trait Scenario: Send + Sync {
    fn name(&self) -> &'static str;
    fn describe(&self) -> &'static str;
    fn config(&self) -> RunConfig;
}

/// Fit window used by the relaxation scenarios: the late half of the band.
pub const RELAX_FIT: DecayWindow = DecayWindow::Tail {
    lo: 1e-8,
    hi: 1e-2,
    fraction: 0.5,
};

fn base(name: &str, n: usize, t_end: f64, initial: InitialData) -> RunConfig {
    RunConfig {
        scenario: name.to_string(),
        grid: GridConfig {
            n,
            length: 2.0 * std::f64::consts::PI,
            dealias: false,
        },
        params: Params {
            gamma: 1.5,
            b0: 1.0,
            epsilon: 0.0,
        },
        initial,
        step: StepControl {
            cfl: 0.5,
            dt_min: 1e-10,
            dt_max: 0.1,
            t_end,
        },
        diagnostics: DiagnosticsSettings {
            cadence: 0.01,
            seminorms: vec![1, 2],
            snapshot_times: vec![0.0],
            snapshot_final: true,
            fit: RELAX_FIT,
        },
        output: OutputSettings::default(),
        converge: ConvergeSettings::default(),
    }
}

fn relax_initial(b_mean: f64) -> InitialData {
    InitialData {
        rho_mean: 1.0,
        b_mean,
        rho_modes: vec![Mode {
            mode: 1,
            amplitude: 0.01,
            phase: 0.0,
        }],
        // cos(2x − π/2) = sin 2x
        b_modes: vec![Mode {
            mode: 2,
            amplitude: 0.01,
            phase: -FRAC_PI_2,
        }],
    }
}

struct RelaxB0;

impl Scenario for RelaxB0 {
    fn name(&self) -> &'static str {
        "relax-b0"
    }
    fn describe(&self) -> &'static str {
        "small perturbation of (1, 0); rho and B decay independently"
    }
    fn config(&self) -> RunConfig {
        base(self.name(), 128, 20.0, relax_initial(0.0))
    }
}

struct RelaxBbar;

impl Scenario for RelaxBbar {
    fn name(&self) -> &'static str {
        "relax-bbar"
    }
    fn describe(&self) -> &'static str {
        "small perturbation of (1, 0.5); coupled decay"
    }
    fn config(&self) -> RunConfig {
        base(self.name(), 128, 20.0, relax_initial(0.5))
    }
}

struct ProbeLarge;

impl Scenario for ProbeLarge {
    fn name(&self) -> &'static str {
        "probe-large"
    }
    fn describe(&self) -> &'static str {
        "large-amplitude data probing the density floor"
    }
    fn config(&self) -> RunConfig {
        let initial = InitialData {
            rho_mean: 1.0,
            b_mean: 0.0,
            rho_modes: vec![Mode {
                mode: 1,
                amplitude: 0.95,
                phase: 0.0,
            }],
            b_modes: vec![Mode {
                mode: 1,
                amplitude: 1.5,
                phase: -FRAC_PI_2,
            }],
        };
        base(self.name(), 128, 2.0, initial)
    }
}

struct ConvergeWide;

/// Geometric spectrum `0.1·0.8^k` up to mode 200, with spread phases.
fn wide_modes(phase_step: f64) -> Vec<Mode> {
    (1..=200)
        .map(|k| Mode {
            mode: k,
            amplitude: 0.1 * 0.8f64.powi(k as i32),
            phase: k as f64 * phase_step,
        })
        .collect()
}

impl Scenario for ConvergeWide {
    fn name(&self) -> &'static str {
        "converge-wide"
    }
    fn describe(&self) -> &'static str {
        "broadband smooth data for resolution studies"
    }
    fn config(&self) -> RunConfig {
        let initial = InitialData {
            rho_mean: 1.0,
            b_mean: 0.3,
            rho_modes: wide_modes(0.7),
            b_modes: wide_modes(1.3),
        };
        base(self.name(), 64, 1.0, initial)
    }
}

static REGISTRY: [&dyn Scenario; 4] = [&RelaxB0, &RelaxBbar, &ProbeLarge, &ConvergeWide];

pub fn registry() -> &'static [&'static dyn Scenario] {
    &REGISTRY
}

pub fn find(name: &str) -> Option<&'static dyn Scenario> {
    REGISTRY.iter().copied().find(|s| s.name() == name)
}
