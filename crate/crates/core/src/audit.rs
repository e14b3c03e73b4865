//! Randomized self-audit of the relaxation variables.
//!
//! Each [`AuditCheck`] maps a sample point to a nonnegative error; a check
//! passes when every sampled error is within its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{diffusion_matrix, Params};
use crate::relaxvars::{
    eval_alpha, eval_beta, eval_f, eval_g, eval_w, eval_z, potential_grads, reduced_w_derivs, reduced_z_derivs,
    DerivBundle, RelaxError, Which,
};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_POINTS: usize = 200;
/// Sampling box `ρ ∈ [0.2, 3]`, `B ∈ [−2, 2]`.
pub const RHO_RANGE: (f64, f64) = (0.2, 3.0);
pub const B_RANGE: (f64, f64) = (-2.0, 2.0);
/// Points with `|B|` or `|ρ^γ − B₀²|` at or below this are rejected.
pub const EXCLUSION: f64 = 0.1;
pub const SIMPSON_PANELS: usize = 1_000_000;
const FD_STEP: f64 = 1e-5;

pub trait AuditCheck: Send + Sync {
    fn name(&self) -> &'static str;
    fn tolerance(&self) -> f64;
    /// Evaluate on every `stride`-th sample only.
    fn stride(&self) -> usize {
        1
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError>;
}

/// Seeded uniform samples in the audit box, away from `B = 0` and `ρ^γ = B₀²`.
pub fn sample_points(seed: u64, n: usize, p: &Params) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let rho: f64 = rng.gen_range(RHO_RANGE.0..RHO_RANGE.1);
        let b: f64 = rng.gen_range(B_RANGE.0..B_RANGE.1);
        if b.abs() > EXCLUSION && (p.rho_pow_gamma(rho) - p.b0_sq()).abs() > EXCLUSION {
            out.push((rho, b));
        }
    }
    out
}

fn fd5(v: impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (v(-2.0 * h) - 8.0 * v(-h) + 8.0 * v(h) - v(2.0 * h)) / (12.0 * h)
}

/// `max |a − b| / max |a|` over paired components.
fn bundle_err(analytic: &[f64], approx: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(approx).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn reduced(which: Which) -> fn(f64, f64, &Params) -> Result<DerivBundle, RelaxError> {
    match which {
        Which::W => reduced_w_derivs,
        Which::Z => reduced_z_derivs,
    }
}

fn log_value(which: Which, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
    // log W = −w, log Z = −z
    let v = match which {
        Which::W => eval_w(rho, b, p)?,
        Which::Z => eval_z(rho, b, p)?,
    };
    Ok(-v.to_f64())
}

/// First derivatives against a 5-point difference of the logarithm.
struct FdGradient(Which);

impl AuditCheck for FdGradient {
    fn name(&self) -> &'static str {
        match self.0 {
            Which::W => "grad_w_fd",
            Which::Z => "grad_z_fd",
        }
    }
    fn tolerance(&self) -> f64 {
        1e-6
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let d = reduced(self.0)(rho, b, p)?;
        let v = |r: f64, bb: f64| log_value(self.0, r, bb, p);
        let fr = fd5(|e| v(rho + e, b).unwrap_or(f64::NAN));
        let fb = fd5(|e| v(rho, b + e).unwrap_or(f64::NAN));
        Ok(bundle_err(&d.gradient(), &[fr, fb]))
    }
}

/// Second derivatives via `∂²(log W) = H/W − G Gᵀ` against differences of the gradient.
struct FdHessian(Which);

impl AuditCheck for FdHessian {
    fn name(&self) -> &'static str {
        match self.0 {
            Which::W => "hess_w_fd",
            Which::Z => "hess_z_fd",
        }
    }
    fn tolerance(&self) -> f64 {
        1e-6
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let f = reduced(self.0);
        let d = f(rho, b, p)?;
        let grad = |r: f64, bb: f64, i: usize| f(r, bb, p).map(|d| d.gradient()[i]).unwrap_or(f64::NAN);
        let l_rr = d.d_rho_rho - d.d_rho * d.d_rho;
        let l_rb = d.d_rho_b - d.d_rho * d.d_b;
        let l_bb = d.d_b_b - d.d_b * d.d_b;
        let fd = [
            fd5(|e| grad(rho + e, b, 0)),
            fd5(|e| grad(rho, b + e, 0)),
            fd5(|e| grad(rho + e, b, 1)),
            fd5(|e| grad(rho, b + e, 1)),
        ];
        Ok(bundle_err(&[l_rr, l_rb, l_rb, l_bb], &fd))
    }
}

/// `∇W` and `∇Z` are left eigenvectors of the diffusion matrix for `α`, `β`.
struct Diagonalizes(Which);

impl AuditCheck for Diagonalizes {
    fn name(&self) -> &'static str {
        match self.0 {
            Which::W => "diag_w",
            Which::Z => "diag_z",
        }
    }
    fn tolerance(&self) -> f64 {
        1e-10
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let m = diffusion_matrix(rho, b, p);
        let lambda = match self.0 {
            Which::W => eval_alpha(rho, b, p)?,
            Which::Z => eval_beta(rho, b, p)?,
        };
        let g = reduced(self.0)(rho, b, p)?.gradient();
        let l = m.left_mul(g);
        let scale = g[0].abs().max(g[1].abs()) * (m.trace().abs() + lambda.abs());
        Ok((l[0] - lambda * g[0]).abs().max((l[1] - lambda * g[1]).abs()) / scale)
    }
}

/// `α + β = tr M` and `αβ = det M = ρ^{γ−2}B₀²`.
struct EigenTraceDet;

impl AuditCheck for EigenTraceDet {
    fn name(&self) -> &'static str {
        "eigen_trace_det"
    }
    fn tolerance(&self) -> f64 {
        1e-10
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let m = diffusion_matrix(rho, b, p);
        let (a, be) = (eval_alpha(rho, b, p)?, eval_beta(rho, b, p)?);
        let closed = p.rho_pow_gamma(rho) / (rho * rho) * p.b0_sq();
        Ok(rel(a + be, m.trace()).max(rel(a * be, m.det())).max(rel(a * be, closed)))
    }
}

/// `f·g = 4ρ^γ/B²`.
struct FgProduct;

impl AuditCheck for FgProduct {
    fn name(&self) -> &'static str {
        "fg_product"
    }
    fn tolerance(&self) -> f64 {
        1e-10
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let f = eval_f(rho, b, p)?.to_f64();
        let g = eval_g(rho, b, p)?.to_f64();
        Ok(rel(f * g, 4.0 * p.rho_pow_gamma(rho) / (b * b)))
    }
}

/// `∂ρw/∂Bw = (S − D)/(2Bρ)` and `∂ρz/∂Bz = −(S + D)/(2Bρ)`.
struct GradientRatio(Which);

impl AuditCheck for GradientRatio {
    fn name(&self) -> &'static str {
        match self.0 {
            Which::W => "ratio_w",
            Which::Z => "ratio_z",
        }
    }
    fn tolerance(&self) -> f64 {
        1e-10
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let rg = p.rho_pow_gamma(rho);
        let d = b * b + p.b0_sq() - rg;
        let s = d.hypot(2.0 * b.abs() * rg.sqrt());
        // (S − D)(S + D) = 4B²ρ^γ
        let (s_minus, s_plus) = if d > 0.0 {
            (4.0 * b * b * rg / (s + d), s + d)
        } else {
            (s - d, 4.0 * b * b * rg / (s - d))
        };
        let g = potential_grads(rho, b, p)?;
        Ok(match self.0 {
            Which::W => rel(g.w[0] / g.w[1], s_minus / (2.0 * b * rho)),
            Which::Z => rel(g.z[0] / g.z[1], -s_plus / (2.0 * b * rho)),
        })
    }
}

/// Composite Simpson rule on `panels` (even) panels.
pub fn simpson(h: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let step = (b - a) / panels as f64;
    let mut acc = h(a) + h(b);
    for i in 1..panels {
        let x = a + i as f64 * step;
        acc += if i % 2 == 1 { 4.0 * h(x) } else { 2.0 * h(x) };
    }
    acc * step / 3.0
}

/// `w` and `z` from their defining integrals by brute-force Simpson.
///
/// The `w` integrand `c(1 − s/4)s^p/(1 − s/2)²` is integrated in
/// `u = ln|s − 2|` (or `ln s` past 4) so a pole near `f` stays resolved.
pub fn simpson_wz(rho: f64, b: f64, p: &Params, panels: usize) -> Result<(f64, f64), RelaxError> {
    let pe = 2.0 / (2.0 - p.gamma);
    let c = 2.0 * p.b0_sq() / (2.0 - p.gamma);
    let lead = b * b + p.b0_sq();
    let f = eval_f(rho, b, p)?.to_f64();
    let g = eval_g(rho, b, p)?.to_f64();
    let hw = |s: f64| c * (1.0 - 0.25 * s) / (1.0 - 0.5 * s).powi(2) * s.powf(pe);
    // ∫_f^4 hw ds, oriented
    let iw = if f <= 4.0 {
        simpson(|u| { let s = 2.0 + u.exp(); hw(s) * (s - 2.0) }, (f - 2.0).ln(), 2f64.ln(), panels)
    } else {
        -simpson(|u| { let s = u.exp(); hw(s) * s }, 4f64.ln(), f.ln(), panels)
    };
    let hz = |s: f64| c * (1.0 + 0.25 * s) / (1.0 + 0.5 * s).powi(2) * s.powf(pe);
    let iz = simpson(hz, 0.0, g, panels);
    Ok((lead * f.powf(pe) - iw, lead * g.powf(pe) - iz))
}

/// Adaptive quadrature against [`simpson_wz`], relative to `max(|ref|, 1)`.
struct QuadSimpson;

impl AuditCheck for QuadSimpson {
    fn name(&self) -> &'static str {
        "quad_simpson"
    }
    fn tolerance(&self) -> f64 {
        1e-9
    }
    fn stride(&self) -> usize {
        10
    }
    fn error_at(&self, rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
        let (w_ref, z_ref) = simpson_wz(rho, b, p, SIMPSON_PANELS)?;
        let w = eval_w(rho, b, p)?.to_f64();
        let z = eval_z(rho, b, p)?.to_f64();
        let e = |v: f64, r: f64| (v - r).abs() / r.abs().max(1.0);
        Ok(e(w, w_ref).max(e(z, z_ref)))
    }
}

pub fn registry() -> Vec<Box<dyn AuditCheck>> {
    vec![
        Box::new(FdGradient(Which::W)),
        Box::new(FdGradient(Which::Z)),
        Box::new(FdHessian(Which::W)),
        Box::new(FdHessian(Which::Z)),
        Box::new(Diagonalizes(Which::W)),
        Box::new(Diagonalizes(Which::Z)),
        Box::new(EigenTraceDet),
        Box::new(FgProduct),
        Box::new(GradientRatio(Which::W)),
        Box::new(GradientRatio(Which::Z)),
        Box::new(QuadSimpson),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditOptions {
    pub seed: u64,
    pub points: usize,
    /// Replaces every check's own tolerance.
    pub tolerance: Option<f64>,
    pub params: Params,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            points: DEFAULT_POINTS,
            tolerance: None,
            params: Params {
                gamma: 1.5,
                b0: 1.0,
                epsilon: 0.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub tolerance: f64,
    pub evaluated: usize,
    pub failures: usize,
    pub max_error: f64,
    pub worst_point: Option<[f64; 2]>,
    /// First evaluation error, if any point could not be evaluated.
    pub first_error: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub points: usize,
    pub gamma: f64,
    pub b0: f64,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

fn run_check(check: &dyn AuditCheck, pts: &[(f64, f64)], tol: f64, p: &Params) -> CheckReport {
    let used: Vec<(f64, f64)> = pts.iter().copied().step_by(check.stride().max(1)).collect();
    let results: Vec<Result<f64, RelaxError>> = used.par_iter().map(|&(r, b)| check.error_at(r, b, p)).collect();
    let mut report = CheckReport {
        name: check.name().to_string(),
        tolerance: tol,
        evaluated: used.len(),
        failures: 0,
        max_error: 0.0,
        worst_point: None,
        first_error: None,
        passed: true,
    };
    for (&(r, b), res) in used.iter().zip(results) {
        match res {
            Ok(e) => {
                // a NaN error can never pass
                let e = if e.is_nan() { f64::INFINITY } else { e };
                if e > tol {
                    report.failures += 1;
                }
                if report.worst_point.is_none() || e > report.max_error {
                    report.max_error = e;
                    report.worst_point = Some([r, b]);
                }
            }
            Err(err) => {
                report.failures += 1;
                report.first_error.get_or_insert_with(|| format!("({r}, {b}): {err}"));
            }
        }
    }
    report.passed = report.failures == 0;
    report
}

/// Runs every registered check on the same seeded sample.
pub fn run_audit(opts: &AuditOptions) -> AuditReport {
    let pts = sample_points(opts.seed, opts.points, &opts.params);
    let checks: Vec<CheckReport> = registry()
        .iter()
        .map(|c| run_check(c.as_ref(), &pts, opts.tolerance.unwrap_or(c.tolerance()), &opts.params))
        .collect();
    AuditReport {
        seed: opts.seed,
        points: opts.points,
        gamma: opts.params.gamma,
        b0: opts.params.b0,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_box_and_exclusions() {
        let p = AuditOptions::default().params;
        let pts = sample_points(7, 500, &p);
        assert_eq!(pts.len(), 500);
        for (r, b) in pts {
            assert!((0.2..3.0).contains(&r) && (-2.0..2.0).contains(&b));
            assert!(b.abs() > EXCLUSION && (p.rho_pow_gamma(r) - 1.0).abs() > EXCLUSION);
        }
        assert_eq!(sample_points(3, 20, &p), sample_points(3, 20, &p));
        assert_ne!(sample_points(3, 20, &p), sample_points(4, 20, &p));
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 2);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn registry_names_are_unique() {
        let mut names: Vec<_> = registry().iter().map(|c| c.name()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn small_audit_passes_and_tiny_tolerance_fails() {
        let opts = AuditOptions {
            points: 20,
            ..AuditOptions::default()
        };
        let report = run_audit(&opts);
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        let strict = run_audit(&AuditOptions {
            tolerance: Some(1e-16),
            ..opts
        });
        assert!(!strict.passed);
    }
}
