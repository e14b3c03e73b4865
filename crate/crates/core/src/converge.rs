//! Resolution, time-step and regularization sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::integrator::{raw_stable_dt, step};
use crate::model::{ModelError, Params, State};

/// Errors at or below this are treated as roundoff and excluded from orders.
pub const ROUNDOFF_FLOOR: f64 = 1e-11;

/// Advances `s0` by `steps` equal steps of `dt`.
pub fn integrate_fixed(s0: &State, p: &Params, dt: f64, steps: usize) -> Result<State, ModelError> {
    let mut s = s0.clone();
    let t0 = s0.time;
    for k in 1..=steps {
        s = step(&s, p, dt)?;
        s.time = t0 + k as f64 * dt;
    }
    Ok(s)
}

/// `max |u − v|` over both fields, sampling `fine` on the nodes of `coarse`.
pub fn nested_max_diff(coarse: &State, fine: &State) -> f64 {
    let ratio = fine.grid().n() / coarse.grid().n();
    let pick = |c: &[f64], f: &[f64]| {
        c.iter()
            .enumerate()
            .map(|(j, v)| (v - f[j * ratio]).abs())
            .fold(0.0, f64::max)
    };
    pick(coarse.rho.values(), fine.rho.values()).max(pick(coarse.b.values(), fine.b.values()))
}

/// `L²` distance over both fields on the nodes of `coarse`.
pub fn nested_l2_diff(coarse: &State, fine: &State) -> f64 {
    let ratio = fine.grid().n() / coarse.grid().n();
    let sq = |c: &[f64], f: &[f64]| c.iter().enumerate().map(|(j, v)| (v - f[j * ratio]).powi(2)).sum::<f64>();
    ((sq(coarse.rho.values(), fine.rho.values()) + sq(coarse.b.values(), fine.b.values())) * coarse.grid().dx()).sqrt()
}

/// Discrete `L²` distance over both fields on a common grid.
pub fn l2_distance(a: &State, b: &State) -> f64 {
    let dx = a.grid().dx();
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    ((sq(a.rho.values(), b.rho.values()) + sq(a.b.values(), b.b.values())) * dx).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialError {
    pub n: usize,
    /// Max norm on the coarse nodes; orders use this.
    pub error: f64,
    pub l2_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservedOrder {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub order: f64,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialReport {
    pub reference_n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    pub errors: Vec<SpatialError>,
    pub orders: Vec<ObservedOrder>,
    /// Smallest order over unsaturated pairs.
    pub min_order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemporalReport {
    pub n: usize,
    pub dt0: f64,
    pub t_end: f64,
    pub steps: [usize; 3],
    /// `‖u_N − u_2N‖` and `‖u_2N − u_4N‖` (max norm).
    pub diffs: [f64; 2],
    pub order: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonDistance {
    pub epsilon: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub n: usize,
    pub t_end: f64,
    /// `L²` distance to the `ε = 0` solution, by increasing `ε`.
    pub distances: Vec<EpsilonDistance>,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergeReport {
    pub scenario: String,
    pub spatial: Option<SpatialReport>,
    pub temporal: Option<TemporalReport>,
    pub epsilon: Option<EpsilonReport>,
    /// Cells that could not be computed, with the reason.
    pub failures: Vec<String>,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Copy, Debug)]
enum Cell {
    Spatial { n: usize },
    Temporal { steps: usize },
    Epsilon { epsilon: f64 },
}

impl Cell {
    fn label(&self) -> String {
        match self {
            Cell::Spatial { n } => format!("spatial n={n}"),
            Cell::Temporal { steps } => format!("temporal steps={steps}"),
            Cell::Epsilon { epsilon } => format!("epsilon={epsilon}"),
        }
    }
}

fn state_at(cfg: &RunConfig, n: usize) -> Result<State, ConfigError> {
    let mut c = cfg.clone();
    c.grid.n = n;
    Ok(c.initial_state()?.0)
}

/// Shared step sizes, fixed before any cell runs.
struct Plan {
    spatial_dt: f64,
    spatial_steps: usize,
    temporal_dt0: f64,
    epsilon_dt: f64,
    epsilon_steps: usize,
}

fn plan(cfg: &RunConfig) -> Result<Plan, String> {
    let c = &cfg.converge;
    let cfl = cfg.step.cfl;
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let s_ref = state_at(cfg, c.reference_n).map_err(|e| err(&e))?;
    let dt = raw_stable_dt(&s_ref, &cfg.params, cfl).map_err(|e| err(&e))?;
    let spatial_steps = (c.spatial_t_end / dt).ceil().max(1.0) as usize;

    let s_t = state_at(cfg, c.temporal_n).map_err(|e| err(&e))?;
    let temporal_dt0 = raw_stable_dt(&s_t, &cfg.params, cfl).map_err(|e| err(&e))?;

    // the stiffest member of the sweep sets one common step
    let s_e = state_at(cfg, c.epsilon_n).map_err(|e| err(&e))?;
    let eps_max = c.epsilons.iter().copied().fold(0.0, f64::max);
    let p_max = Params {
        epsilon: eps_max,
        ..cfg.params
    };
    let dt_e = raw_stable_dt(&s_e, &p_max, cfl).map_err(|e| err(&e))?;
    let epsilon_steps = (c.epsilon_t_end / dt_e).ceil().max(1.0) as usize;
    Ok(Plan {
        spatial_dt: c.spatial_t_end / spatial_steps as f64,
        spatial_steps,
        temporal_dt0,
        epsilon_dt: c.epsilon_t_end / epsilon_steps as f64,
        epsilon_steps,
    })
}

fn run_cell(cfg: &RunConfig, plan: &Plan, cell: Cell) -> Result<State, String> {
    let c = &cfg.converge;
    let err = |e: &dyn std::fmt::Display| format!("{}: {e}", cell.label());
    match cell {
        Cell::Spatial { n } => {
            let s0 = state_at(cfg, n).map_err(|e| err(&e))?;
            integrate_fixed(&s0, &cfg.params, plan.spatial_dt, plan.spatial_steps).map_err(|e| err(&e))
        }
        Cell::Temporal { steps } => {
            let s0 = state_at(cfg, c.temporal_n).map_err(|e| err(&e))?;
            let t_end = plan.temporal_dt0 * c.temporal_steps as f64;
            integrate_fixed(&s0, &cfg.params, t_end / steps as f64, steps).map_err(|e| err(&e))
        }
        Cell::Epsilon { epsilon } => {
            let s0 = state_at(cfg, c.epsilon_n).map_err(|e| err(&e))?;
            let p = Params { epsilon, ..cfg.params };
            integrate_fixed(&s0, &p, plan.epsilon_dt, plan.epsilon_steps).map_err(|e| err(&e))
        }
    }
}

fn spatial_report(cfg: &RunConfig, plan: &Plan, states: &[(Cell, Result<State, String>)]) -> Option<SpatialReport> {
    let c = &cfg.converge;
    let find = |n: usize| {
        states.iter().find_map(|(cell, r)| match (cell, r) {
            (Cell::Spatial { n: m }, Ok(s)) if *m == n => Some(s),
            _ => None,
        })
    };
    let reference = find(c.reference_n)?;
    let errors: Vec<SpatialError> = c
        .ns
        .iter()
        .filter_map(|&n| {
            find(n).map(|s| SpatialError {
                n,
                error: nested_max_diff(s, reference),
                l2_error: nested_l2_diff(s, reference),
            })
        })
        .collect();
    let orders: Vec<ObservedOrder> = errors
        .windows(2)
        .map(|w| ObservedOrder {
            n_coarse: w[0].n,
            n_fine: w[1].n,
            order: (w[0].error / w[1].error).ln() / (w[1].n as f64 / w[0].n as f64).ln(),
            saturated: w[1].error <= ROUNDOFF_FLOOR,
        })
        .collect();
    let min_order = orders
        .iter()
        .filter(|o| !o.saturated)
        .map(|o| o.order)
        .fold(None, |m: Option<f64>, o| Some(m.map_or(o, |m| m.min(o))));
    Some(SpatialReport {
        reference_n: c.reference_n,
        t_end: c.spatial_t_end,
        dt: plan.spatial_dt,
        steps: plan.spatial_steps,
        errors,
        orders,
        min_order,
    })
}

fn temporal_report(cfg: &RunConfig, plan: &Plan, states: &[(Cell, Result<State, String>)]) -> Option<TemporalReport> {
    let c = &cfg.converge;
    let n0 = c.temporal_steps;
    let steps = [n0, 2 * n0, 4 * n0];
    let get = |k: usize| {
        states.iter().find_map(|(cell, r)| match (cell, r) {
            (Cell::Temporal { steps }, Ok(s)) if *steps == k => Some(s),
            _ => None,
        })
    };
    let (a, b, d) = (get(steps[0])?, get(steps[1])?, get(steps[2])?);
    let diffs = [nested_max_diff(a, b), nested_max_diff(b, d)];
    Some(TemporalReport {
        n: c.temporal_n,
        dt0: plan.temporal_dt0,
        t_end: plan.temporal_dt0 * n0 as f64,
        steps,
        diffs,
        order: (diffs[0] / diffs[1]).log2(),
    })
}

fn epsilon_report(cfg: &RunConfig, states: &[(Cell, Result<State, String>)]) -> Option<EpsilonReport> {
    let c = &cfg.converge;
    let get = |e: f64| {
        states.iter().find_map(|(cell, r)| match (cell, r) {
            (Cell::Epsilon { epsilon }, Ok(s)) if *epsilon == e => Some(s),
            _ => None,
        })
    };
    let base = get(0.0)?;
    let mut eps: Vec<f64> = c.epsilons.iter().copied().filter(|&e| e > 0.0).collect();
    eps.sort_by(f64::total_cmp);
    let distances: Vec<EpsilonDistance> = eps
        .iter()
        .filter_map(|&e| get(e).map(|s| EpsilonDistance { epsilon: e, distance: l2_distance(s, base) }))
        .collect();
    let monotone = distances.len() >= 2 && distances.windows(2).all(|w| w[1].distance > w[0].distance);
    Some(EpsilonReport {
        n: c.epsilon_n,
        t_end: c.epsilon_t_end,
        distances,
        monotone,
    })
}

/// Runs every sweep cell in parallel, then compares them.
pub fn run_converge(cfg: &RunConfig) -> Result<ConvergeReport, ConfigError> {
    cfg.validate()?;
    let started = Instant::now();
    let c = &cfg.converge;
    let mut cells: Vec<Cell> = c.ns.iter().map(|&n| Cell::Spatial { n }).collect();
    cells.push(Cell::Spatial { n: c.reference_n });
    for k in [1, 2, 4] {
        cells.push(Cell::Temporal {
            steps: k * c.temporal_steps,
        });
    }
    let mut eps = c.epsilons.clone();
    if !eps.contains(&0.0) {
        eps.push(0.0);
    }
    cells.extend(eps.into_iter().map(|epsilon| Cell::Epsilon { epsilon }));

    let plan = match plan(cfg) {
        Ok(p) => p,
        Err(msg) => {
            return Ok(ConvergeReport {
                scenario: cfg.scenario.clone(),
                spatial: None,
                temporal: None,
                epsilon: None,
                failures: vec![msg],
                wall_clock_seconds: started.elapsed().as_secs_f64(),
            })
        }
    };
    let states: Vec<(Cell, Result<State, String>)> =
        cells.par_iter().map(|&cell| (cell, run_cell(cfg, &plan, cell))).collect();
    let failures = states
        .iter()
        .filter_map(|(_, r)| r.as_ref().err().cloned())
        .collect();
    Ok(ConvergeReport {
        scenario: cfg.scenario.clone(),
        spatial: spatial_report(cfg, &plan, &states),
        temporal: temporal_report(cfg, &plan, &states),
        epsilon: epsilon_report(cfg, &states),
        failures,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}
