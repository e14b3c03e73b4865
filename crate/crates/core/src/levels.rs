//! Sublevel sets of `W` and `Z` on a sample lattice.

use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::diagnostics::{min_w, min_z, DiagError};
use crate::model::Params;
use crate::relaxvars::{level_grid, rho_floor_from_z, singular_points, LevelTable, RelaxError, Sublevel, Which};
use crate::scenario;

#[derive(Debug, thiserror::Error)]
pub enum LevelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Diagnostics(#[from] DiagError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelOptions {
    pub params: Params,
    pub rho_range: (f64, f64),
    pub b_range: (f64, f64),
    pub n_rho: usize,
    pub n_b: usize,
    /// Levels for `{W ≤ w_level}` and `{Z ≤ z_level}`.
    pub w_level: f64,
    pub z_level: f64,
}

/// Lattice spacing `1/32` in `ρ` and `1/32` in `B`, so `(1, 0)` is a node.
pub const DEFAULT_RHO_RANGE: (f64, f64) = (0.0625, 3.0);
pub const DEFAULT_B_RANGE: (f64, f64) = (-2.0, 2.0);
pub const DEFAULT_N_RHO: usize = 95;
pub const DEFAULT_N_B: usize = 129;

/// `(max W, max Z)` of the `relax-bbar` initial data under `params`.
pub fn reference_levels(params: &Params) -> Result<(f64, f64), LevelError> {
    let mut cfg: RunConfig = scenario::find("relax-bbar").expect("built-in scenario").config();
    cfg.params = *params;
    let (s, _) = cfg.initial_state()?;
    Ok(((-min_w(&s, params)?).exp(), (-min_z(&s, params)?).exp()))
}

impl LevelOptions {
    pub fn with_reference_levels(params: Params) -> Result<Self, LevelError> {
        let (w_level, z_level) = reference_levels(&params)?;
        Ok(Self {
            params,
            rho_range: DEFAULT_RHO_RANGE,
            b_range: DEFAULT_B_RANGE,
            n_rho: DEFAULT_N_RHO,
            n_b: DEFAULT_N_B,
            w_level,
            z_level,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelReport {
    pub options: LevelOptions,
    pub w_sublevel: Sublevel,
    pub z_sublevel: Sublevel,
    /// Density below which `Z > z_level` everywhere.
    pub z_strip_rho: Option<f64>,
    pub singular_points: Vec<[f64; 2]>,
    /// `{W ≤ w_level}` is nonempty and stays off the `ρ_max` and `±B` edges.
    pub w_bounded: bool,
    /// `{Z ≤ z_level}` is nonempty and has no member with `ρ < z_strip_rho`.
    pub z_strip_excluded: bool,
    /// The only singular node is `(B₀^{2/γ}, 0)`.
    pub singular_point_located: bool,
}

pub struct LevelStudy {
    pub w: LevelTable,
    pub z: LevelTable,
    pub report: LevelReport,
}

pub fn study(opts: &LevelOptions) -> Result<LevelStudy, LevelError> {
    let p = &opts.params;
    let table = |which| level_grid(p, opts.rho_range, opts.b_range, opts.n_rho, opts.n_b, which);
    let (w, z) = (table(Which::W)?, table(Which::Z)?);
    let ws = w.sublevel(opts.w_level);
    let zs = z.sublevel(opts.z_level);
    let z_strip_rho = if opts.z_level > 0.0 && opts.z_level < 1.0 {
        rho_floor_from_z(-opts.z_level.ln(), p).ok()
    } else {
        None
    };
    let singular: Vec<[f64; 2]> = singular_points(&w, &z).into_iter().map(|(r, b)| [r, b]).collect();
    let rho_star = p.b0_sq().powf(1.0 / p.gamma);
    let report = LevelReport {
        options: *opts,
        w_bounded: ws.members > 0 && ws.errors == 0 && !ws.touches_rho_max && !ws.touches_b_edge,
        z_strip_excluded: zs.members > 0
            && zs.errors == 0
            && !zs.touches_rho_min
            && z_strip_rho.is_some_and(|r| r > 0.0 && zs.min_rho >= r),
        singular_point_located: singular == vec![[rho_star, 0.0]],
        w_sublevel: ws,
        z_sublevel: zs,
        z_strip_rho,
        singular_points: singular,
    };
    Ok(LevelStudy { w, z, report })
}
