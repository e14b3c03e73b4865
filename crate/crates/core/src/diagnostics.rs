//! Monitored quantities on trajectory states, decay fits and the time-series CSV.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::{num, parse_num};
use crate::grid::GridError;
use crate::integrator::{Cadence, ObserveError, Observer};
use crate::model::{velocity, ModelError, Params, State};
use crate::relaxvars::{eval_w, eval_z, zeta_roots, ExtReal, RelaxError, ZetaPair};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("{quantity} failed at grid index {index} (x = {x}): {source}")]
    Relax {
        quantity: &'static str,
        index: usize,
        x: f64,
        #[source]
        source: RelaxError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("fit needs at least {need} usable samples in the window, found {found}")]
    FitTooFew { need: usize, found: usize },
    #[error("malformed time series: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Constant state the deviations are measured from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub rho: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DiagnosticsConfig {
    pub seminorms: Vec<u32>,
    /// Deviation norms use the instantaneous means when absent.
    pub reference: Option<Reference>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub mass: f64,
    pub flux_mean: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub max_abs_b: f64,
    /// `+∞` when every grid point sits on the infinite branch of `w`.
    pub min_w: f64,
    pub min_z: f64,
    pub l2_rho_dev: f64,
    pub l2_b_dev: f64,
    pub hs_rho: Vec<f64>,
    pub hs_b: Vec<f64>,
    /// L² norms of `ζᵢ(ρ − ρ̄) + (B − B̄)`; NaN without a reference with `B̄ ≠ 0`.
    pub coupled: [f64; 2],
    pub dt: f64,
}

/// `∫ ρ^γ/(γ(γ−1)) + B²/2`.
pub fn energy(s: &State, p: &Params) -> f64 {
    let g = p.gamma;
    let sum: f64 = s
        .rho
        .values()
        .iter()
        .zip(s.b.values())
        .map(|(&r, &b)| p.rho_pow_gamma(r) / (g * (g - 1.0)) + 0.5 * b * b)
        .sum();
    sum * s.grid().dx()
}

/// `∫ (ρ^{γ−3/2}ρ' + Bρ^{−1/2}B')² + (B₀ρ^{−1/2}B')²`.
pub fn dissipation(s: &State, p: &Params) -> Result<f64, DiagError> {
    s.check_admissible()?;
    let rho_x = s.rho.deriv(1)?;
    let b_x = s.b.deriv(1)?;
    let rho = s.rho.values();
    let b = s.b.values();
    let sum: f64 = (0..rho.len())
        .map(|j| {
            let r = rho[j];
            let inv_sqrt = 1.0 / r.sqrt();
            let first = p.rho_pow_gamma(r) / r * inv_sqrt * rho_x.values()[j] + b[j] * inv_sqrt * b_x.values()[j];
            let second = p.b0 * inv_sqrt * b_x.values()[j];
            first * first + second * second
        })
        .sum();
    Ok(sum * s.grid().dx())
}

fn grid_min(s: &State, p: &Params, quantity: &'static str) -> Result<f64, DiagError> {
    let eval = if quantity == "w" { eval_w } else { eval_z };
    let mut best = f64::INFINITY;
    for (index, (&r, &b)) in s.rho.values().iter().zip(s.b.values()).enumerate() {
        match eval(r, b, p) {
            Ok(ExtReal::Finite(v)) => best = best.min(v),
            // only ever +∞ or an overflow towards +∞; neither can be the minimum
            Ok(ExtReal::Infinite) | Err(RelaxError::Overflow { .. }) => {}
            Err(source) => {
                return Err(DiagError::Relax {
                    quantity,
                    index,
                    x: s.grid().x(index),
                    source,
                })
            }
        }
    }
    Ok(best)
}

/// Grid minimum of `w`; equivalently `−ln max W`.
pub fn min_w(s: &State, p: &Params) -> Result<f64, DiagError> {
    grid_min(s, p, "w")
}

/// Grid minimum of `z`; equivalently `−ln max Z`.
pub fn min_z(s: &State, p: &Params) -> Result<f64, DiagError> {
    grid_min(s, p, "z")
}

fn l2(values: impl Iterator<Item = f64>, dx: f64) -> f64 {
    (values.map(|v| v * v).sum::<f64>() * dx).sqrt()
}

pub fn record(s: &State, p: &Params, cfg: &DiagnosticsConfig, dt: f64) -> Result<DiagnosticsRecord, DiagError> {
    s.check_admissible()?;
    let grid = s.grid();
    let dx = grid.dx();
    let (rho_bar, b_bar) = match cfg.reference {
        Some(r) => (r.rho, r.b),
        None => (s.rho.mean(), s.b.mean()),
    };
    let rho_dev: Vec<f64> = s.rho.values().iter().map(|r| r - rho_bar).collect();
    let b_dev: Vec<f64> = s.b.values().iter().map(|b| b - b_bar).collect();
    let coupled = match cfg.reference {
        Some(r) if r.b != 0.0 => {
            let ZetaPair { zeta1, zeta2 } = zeta_roots(r.rho, r.b, p).map_err(|source| DiagError::Relax {
                quantity: "zeta",
                index: 0,
                x: 0.0,
                source,
            })?;
            let norm = |zeta: f64| l2(rho_dev.iter().zip(&b_dev).map(|(r, b)| zeta * r + b), dx);
            [norm(zeta1), norm(zeta2)]
        }
        _ => [f64::NAN; 2],
    };
    Ok(DiagnosticsRecord {
        time: s.time,
        mass: s.rho.mean(),
        flux_mean: s.b.mean(),
        energy: energy(s, p),
        dissipation: dissipation(s, p)?,
        min_rho: s.rho.min(),
        max_rho: s.rho.max(),
        max_abs_b: s.b.max_abs(),
        min_w: min_w(s, p)?,
        min_z: min_z(s, p)?,
        l2_rho_dev: l2(rho_dev.iter().copied(), dx),
        l2_b_dev: l2(b_dev.iter().copied(), dx),
        hs_rho: cfg.seminorms.iter().map(|&k| s.rho.sobolev_seminorm(k)).collect(),
        hs_b: cfg.seminorms.iter().map(|&k| s.b.sobolev_seminorm(k)).collect(),
        coupled,
        dt,
    })
}

/// Ordered diagnostics records and optional snapshots of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub seminorms: Vec<u32>,
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn series(&self, pick: impl Fn(&DiagnosticsRecord) -> f64) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.time, pick(r))).collect()
    }

    pub fn write_csv(&self, out: impl Write) -> io::Result<()> {
        write_series_csv(&self.records, &self.seminorms, out)
    }
}

/// Records diagnostics on a regular cadence.
pub struct Recorder {
    params: Params,
    cfg: DiagnosticsConfig,
    cadence: Cadence,
    pub records: Vec<DiagnosticsRecord>,
}

impl Recorder {
    pub fn new(params: Params, cfg: DiagnosticsConfig, cadence: Cadence) -> Self {
        Self {
            params,
            cfg,
            cadence,
            records: Vec::new(),
        }
    }

    pub fn into_trajectory(self, snapshots: Vec<Snapshot>) -> Trajectory {
        Trajectory {
            seminorms: self.cfg.seminorms,
            records: self.records,
            snapshots,
        }
    }
}

impl Observer for Recorder {
    fn next_stop(&self, t: f64) -> Option<f64> {
        self.cadence.next_after(t)
    }

    fn observe(&mut self, state: &State, dt: f64) -> Result<(), ObserveError> {
        let rec = record(state, &self.params, &self.cfg, dt).map_err(|e| ObserveError(e.to_string()))?;
        self.records.push(rec);
        Ok(())
    }
}

/// Full state plus velocity at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub b: Vec<f64>,
    pub ux: Vec<f64>,
    pub uz: Vec<f64>,
}

impl Snapshot {
    pub fn take(s: &State, p: &Params) -> Result<Self, ModelError> {
        let v = velocity(s, p)?;
        Ok(Self {
            time: s.time,
            x: s.grid().points(),
            rho: s.rho.values().to_vec(),
            b: s.b.values().to_vec(),
            ux: v.ux.into_values(),
            uz: v.uz.into_values(),
        })
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "x,rho,b,ux,uz")?;
        for j in 0..self.x.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                num(self.x[j]),
                num(self.rho[j]),
                num(self.b[j]),
                num(self.ux[j]),
                num(self.uz[j])
            )?;
        }
        Ok(())
    }
}

/// Takes snapshots at fixed times.
pub struct Snapshotter {
    params: Params,
    times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

impl Snapshotter {
    pub fn new(params: Params, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self {
            params,
            times,
            snapshots: Vec::new(),
        }
    }
}

impl Observer for Snapshotter {
    fn observes_start(&self) -> bool {
        self.times.first() == Some(&0.0)
    }

    fn next_stop(&self, t: f64) -> Option<f64> {
        self.times.iter().copied().find(|&s| s > t)
    }

    fn observe(&mut self, state: &State, _dt: f64) -> Result<(), ObserveError> {
        let snap = Snapshot::take(state, &self.params).map_err(|e| ObserveError(e.to_string()))?;
        self.snapshots.push(snap);
        Ok(())
    }
}

/// Which samples of a decaying series enter a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayWindow {
    /// Samples with `t_lo ≤ t ≤ t_hi`.
    Times { t_lo: f64, t_hi: f64 },
    /// Samples whose value lies in `[lo, hi]`.
    Band { lo: f64, hi: f64 },
    /// The last `fraction` (in time) of the band window.
    Tail { lo: f64, hi: f64, fraction: f64 },
}

impl Default for DecayWindow {
    fn default() -> Self {
        DecayWindow::Band { lo: 1e-8, hi: 1e-2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    pub window: [f64; 2],
    pub samples: usize,
}

/// Values at or below this are treated as roundoff and never fitted.
pub const FIT_FLOOR: f64 = 1e-12;
pub const FIT_MIN_SAMPLES: usize = 10;

fn band_interval(series: &[(f64, f64)], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let mut inside = series.iter().filter(|(_, v)| *v >= lo && *v <= hi && *v > FIT_FLOOR);
    let first = inside.next()?.0;
    let last = inside.next_back().map_or(first, |s| s.0);
    Some((first, last))
}

/// Least-squares fit of `ln value = c − rate·t` over the window.
pub fn fit_decay(series: &[(f64, f64)], window: DecayWindow) -> Result<DecayFit, DiagError> {
    let (t_lo, t_hi) = match window {
        DecayWindow::Times { t_lo, t_hi } => (t_lo, t_hi),
        DecayWindow::Band { lo, hi } => band_interval(series, lo, hi).ok_or(DiagError::FitTooFew {
            need: FIT_MIN_SAMPLES,
            found: 0,
        })?,
        DecayWindow::Tail { lo, hi, fraction } => {
            let (a, b) = band_interval(series, lo, hi).ok_or(DiagError::FitTooFew {
                need: FIT_MIN_SAMPLES,
                found: 0,
            })?;
            (b - fraction.clamp(0.0, 1.0) * (b - a), b)
        }
    };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| *t >= t_lo && *t <= t_hi && *v > FIT_FLOOR && v.is_finite())
        .filter(|(_, v)| match window {
            DecayWindow::Band { lo, hi } | DecayWindow::Tail { lo, hi, .. } => *v >= lo && *v <= hi,
            DecayWindow::Times { .. } => true,
        })
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < FIT_MIN_SAMPLES {
        return Err(DiagError::FitTooFew {
            need: FIT_MIN_SAMPLES,
            found: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &pts {
        let (dt, dy) = (t - t_mean, y - y_mean);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let r_squared = if pts.iter().all(|p| p.1 == pts[0].1) {
        1.0
    } else {
        let ss_res: f64 = pts
            .iter()
            .map(|&(t, y)| {
                let e = y - (y_mean + slope * (t - t_mean));
                e * e
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        rate: -slope,
        r_squared,
        window: [pts[0].0, pts[pts.len() - 1].0],
        samples: pts.len(),
    })
}

/// Largest record-to-record increase of a series (0 when non-increasing).
pub fn max_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Largest relative record-to-record decrease, ignoring infinite entries.
pub fn max_relative_decrease(values: &[f64]) -> f64 {
    values
        .windows(2)
        .filter(|w| w[0].is_finite() && w[1].is_finite())
        .map(|w| (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Five-point central difference of energy at interior records of a uniformly
/// spaced series, paired with the dissipation there: `(t, dE/dt, D)`.
pub fn energy_rate(records: &[DiagnosticsRecord]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for k in 2..records.len().saturating_sub(2) {
        let w = &records[k - 2..=k + 2];
        let h = w[3].time - w[2].time;
        let uniform = w.windows(2).all(|p| ((p[1].time - p[0].time) - h).abs() <= 1e-9 * h);
        if !uniform {
            continue;
        }
        let d = (w[0].energy - 8.0 * w[1].energy + 8.0 * w[3].energy - w[4].energy) / (12.0 * h);
        out.push((w[2].time, d, w[2].dissipation));
    }
    out
}

pub fn series_header(seminorms: &[u32]) -> String {
    let mut cols = vec![
        "t", "mass", "flux_mean", "energy", "dissipation", "min_rho", "max_rho", "max_abs_b", "min_w", "min_z",
        "l2_rho_dev", "l2_b_dev",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for s in seminorms {
        cols.push(format!("hs_rho_s{s}"));
        cols.push(format!("hs_b_s{s}"));
    }
    cols.extend(["coupled1", "coupled2", "dt"].map(String::from));
    cols.join(",")
}

pub fn write_series_csv(records: &[DiagnosticsRecord], seminorms: &[u32], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{}", series_header(seminorms))?;
    for r in records {
        let mut row = vec![
            r.time,
            r.mass,
            r.flux_mean,
            r.energy,
            r.dissipation,
            r.min_rho,
            r.max_rho,
            r.max_abs_b,
            r.min_w,
            r.min_z,
            r.l2_rho_dev,
            r.l2_b_dev,
        ];
        for (a, b) in r.hs_rho.iter().zip(&r.hs_b) {
            row.push(*a);
            row.push(*b);
        }
        row.extend([r.coupled[0], r.coupled[1], r.dt]);
        let line: Vec<String> = row.into_iter().map(num).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads a series written by [`write_series_csv`], returning the seminorm orders too.
pub fn read_series_csv(input: impl BufRead) -> Result<(Vec<u32>, Vec<DiagnosticsRecord>), DiagError> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| DiagError::Csv("empty input".into()))??;
    let seminorms: Vec<u32> = header
        .split(',')
        .filter_map(|c| c.strip_prefix("hs_rho_s"))
        .map(|s| s.parse().map_err(|_| DiagError::Csv(format!("bad column hs_rho_s{s}"))))
        .collect::<Result<_, _>>()?;
    if header != series_header(&seminorms) {
        return Err(DiagError::Csv(format!("unexpected header {header:?}")));
    }
    let width = 15 + 2 * seminorms.len();
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let v: Vec<f64> = line
            .split(',')
            .map(|c| parse_num(c).ok_or_else(|| DiagError::Csv(format!("line {}: bad number {c:?}", lineno + 2))))
            .collect::<Result<_, _>>()?;
        if v.len() != width {
            return Err(DiagError::Csv(format!("line {}: {} columns, expected {width}", lineno + 2, v.len())));
        }
        let m = seminorms.len();
        records.push(DiagnosticsRecord {
            time: v[0],
            mass: v[1],
            flux_mean: v[2],
            energy: v[3],
            dissipation: v[4],
            min_rho: v[5],
            max_rho: v[6],
            max_abs_b: v[7],
            min_w: v[8],
            min_z: v[9],
            l2_rho_dev: v[10],
            l2_b_dev: v[11],
            hs_rho: (0..m).map(|i| v[12 + 2 * i]).collect(),
            hs_b: (0..m).map(|i| v[13 + 2 * i]).collect(),
            coupled: [v[12 + 2 * m], v[13 + 2 * m]],
            dt: v[14 + 2 * m],
        });
    }
    Ok((seminorms, records))
}
