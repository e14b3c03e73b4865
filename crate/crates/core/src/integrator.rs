//! Classical RK4 method of lines with a parabolic step limit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Field;
use crate::model::{rhs, ModelError, Params, State};
use crate::relaxvars::eval_alpha;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("invalid step control: {0}")]
    BadControl(String),
    #[error("stiffness collapse: stable dt {dt:e} fell below dt_min {dt_min:e}")]
    StiffnessCollapse { dt: f64, dt_min: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Step-size policy and horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepControl {
    pub cfl: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
}

impl StepControl {
    pub fn validate(&self) -> Result<(), StepError> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(StepError::BadControl(format!("cfl must lie in (0, 1] (got {})", self.cfl)));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max && self.dt_max.is_finite()) {
            return Err(StepError::BadControl(format!(
                "need 0 < dt_min <= dt_max (got {}, {})",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(StepError::BadControl(format!("t_end must be finite and >= 0 (got {})", self.t_end)));
        }
        Ok(())
    }
}

/// Unclamped explicit stability limit `cfl·min(dx²/(π² max α), dx⁴/(π⁴ ε))`.
pub fn raw_stable_dt(s: &State, p: &Params, cfl: f64) -> Result<f64, StepError> {
    s.check_admissible()?;
    let mut alpha_max: f64 = 0.0;
    for (&rho, &b) in s.rho.values().iter().zip(s.b.values()) {
        let a = eval_alpha(rho, b, p).expect("admissible states have rho > 0 and finite b");
        alpha_max = alpha_max.max(a);
    }
    let dx = s.grid().dx();
    let mut dt = dx * dx / (PI * PI * alpha_max);
    if p.epsilon > 0.0 {
        dt = dt.min(dx.powi(4) / (PI.powi(4) * p.epsilon));
    }
    Ok(cfl * dt)
}

/// Stable step clamped to `dt_max`; below `dt_min` the run cannot proceed.
pub fn stable_dt(s: &State, p: &Params, c: &StepControl) -> Result<f64, StepError> {
    let dt = raw_stable_dt(s, p, c.cfl)?;
    if dt < c.dt_min {
        return Err(StepError::StiffnessCollapse { dt, dt_min: c.dt_min });
    }
    Ok(dt.min(c.dt_max))
}

fn axpy(base: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + h * k).collect()
}

/// One classical RK4 step; the result is checked for finiteness and positivity.
pub fn step(s: &State, p: &Params, dt: f64) -> Result<State, ModelError> {
    let grid = s.grid();
    let stage = |rho: Vec<f64>, b: Vec<f64>| State {
        rho: Field::from_raw(grid, rho),
        b: Field::from_raw(grid, b),
        time: s.time,
    };
    let (r0, b0) = (s.rho.values(), s.b.values());

    let (k1r, k1b) = rhs(s, p)?;
    let s2 = stage(axpy(r0, k1r.values(), 0.5 * dt), axpy(b0, k1b.values(), 0.5 * dt));
    let (k2r, k2b) = rhs(&s2, p)?;
    let s3 = stage(axpy(r0, k2r.values(), 0.5 * dt), axpy(b0, k2b.values(), 0.5 * dt));
    let (k3r, k3b) = rhs(&s3, p)?;
    let s4 = stage(axpy(r0, k3r.values(), dt), axpy(b0, k3b.values(), dt));
    let (k4r, k4b) = rhs(&s4, p)?;

    let combine = |base: &[f64], k1: &Field, k2: &Field, k3: &Field, k4: &Field| -> Vec<f64> {
        (0..base.len())
            .map(|j| {
                base[j]
                    + dt / 6.0
                        * (k1.values()[j] + 2.0 * k2.values()[j] + 2.0 * k3.values()[j] + k4.values()[j])
            })
            .collect()
    };
    let next = State {
        rho: Field::from_raw(grid, combine(r0, &k1r, &k2r, &k3r, &k4r)),
        b: Field::from_raw(grid, combine(b0, &k1b, &k2b, &k3b, &k4b)),
        time: s.time + dt,
    };
    next.check_admissible()?;
    Ok(next)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ObserveError(pub String);

/// Hook invoked by [`run`] at the times it asks for.
pub trait Observer {
    /// Whether to see the initial state.
    fn observes_start(&self) -> bool {
        true
    }

    /// First requested time strictly after `t`.
    fn next_stop(&self, t: f64) -> Option<f64>;

    /// `dt` is the stable step estimate at this state.
    fn observe(&mut self, state: &State, dt: f64) -> Result<(), ObserveError>;
}

/// Why a run stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HaltCause {
    Completed,
    VacuumBreach { time: f64, index: usize, x: f64, rho: f64 },
    StiffnessCollapse { time: f64, dt: f64, dt_min: f64 },
    NonFinite { time: f64, field: String, index: usize },
    ObserverFailed { time: f64, message: String },
}

impl HaltCause {
    pub fn is_completed(&self) -> bool {
        matches!(self, HaltCause::Completed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            HaltCause::Completed => "completed",
            HaltCause::VacuumBreach { .. } => "vacuum breach",
            HaltCause::StiffnessCollapse { .. } => "stiffness collapse",
            HaltCause::NonFinite { .. } => "non-finite value",
            HaltCause::ObserverFailed { .. } => "diagnostics failure",
        }
    }

    fn from_model(err: ModelError, time: f64) -> Self {
        match err {
            ModelError::Vacuum { index, x, rho } => HaltCause::VacuumBreach { time, index, x, rho },
            ModelError::NonFinite { field, index } => HaltCause::NonFinite {
                time,
                field: field.to_string(),
                index,
            },
            other => HaltCause::ObserverFailed {
                time,
                message: other.to_string(),
            },
        }
    }

    fn from_step(err: StepError, time: f64) -> Self {
        match err {
            StepError::StiffnessCollapse { dt, dt_min } => HaltCause::StiffnessCollapse { time, dt, dt_min },
            StepError::Model(m) => Self::from_model(m, time),
            StepError::BadControl(message) => HaltCause::ObserverFailed { time, message },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Last admissible state reached.
    pub state: State,
    pub halt: HaltCause,
    pub steps: usize,
}

/// Integrates from `s0` to `c.t_end`, landing exactly on every observer stop.
pub fn run(s0: State, p: &Params, c: &StepControl, observers: &mut [&mut dyn Observer]) -> RunOutcome {
    let mut state = s0;
    let mut steps = 0;
    let halt = |state: State, halt: HaltCause, steps: usize| RunOutcome { state, halt, steps };

    let mut dt_raw = match stable_dt(&state, p, c) {
        Ok(dt) => dt,
        Err(e) => {
            let cause = HaltCause::from_step(e, state.time);
            return halt(state, cause, 0);
        }
    };
    for o in observers.iter_mut().filter(|o| o.observes_start()) {
        if let Err(e) = o.observe(&state, dt_raw) {
            let cause = HaltCause::ObserverFailed {
                time: state.time,
                message: e.0,
            };
            return halt(state, cause, 0);
        }
    }

    while state.time < c.t_end {
        let t = state.time;
        let target = observers
            .iter()
            .filter_map(|o| o.next_stop(t))
            .filter(|&s| s > t)
            .fold(c.t_end, f64::min);
        let landing = target - t <= dt_raw;
        let dt = if landing { target - t } else { dt_raw };
        let mut next = match step(&state, p, dt) {
            Ok(next) => next,
            Err(e) => {
                let cause = HaltCause::from_model(e, t);
                return halt(state, cause, steps);
            }
        };
        steps += 1;
        if landing {
            next.time = target;
        }
        state = next;
        dt_raw = match stable_dt(&state, p, c) {
            Ok(dt) => dt,
            Err(e) => {
                let cause = HaltCause::from_step(e, state.time);
                return halt(state, cause, steps);
            }
        };
        if landing {
            for o in observers.iter_mut() {
                if o.next_stop(t) == Some(target) {
                    if let Err(e) = o.observe(&state, dt_raw) {
                        let cause = HaltCause::ObserverFailed {
                            time: state.time,
                            message: e.0,
                        };
                        return halt(state, cause, steps);
                    }
                }
            }
        }
    }
    halt(state, HaltCause::Completed, steps)
}

/// Regular stops `t0 + k·cadence`, plus `t_end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cadence {
    pub t0: f64,
    pub every: f64,
    pub t_end: f64,
}

impl Cadence {
    pub fn next_after(&self, t: f64) -> Option<f64> {
        if t >= self.t_end {
            return None;
        }
        let mut k = ((t - self.t0) / self.every).floor().max(0.0) as u64 + 1;
        while self.t0 + k as f64 * self.every <= t {
            k += 1;
        }
        Some((self.t0 + k as f64 * self.every).min(self.t_end))
    }
}
