//! Diagonalizing variables of the relaxation system.
//!
//! With `D = B² + B₀² − ρ^γ` and `S = √(D² + 4B²ρ^γ)`,
//!
//! ```text
//! f = 4ρ^γ / (S − D),   g = 4ρ^γ / (S + D),   p = 2/(2−γ),   q = γ/(2−γ)
//! ```
//!
//! `f` is infinite on `{B = 0, ρ^γ ≤ B₀²}` and `g` on `{B = 0, ρ^γ ≥ B₀²}`.
//! The potentials are
//!
//! ```text
//! w = (B²+B₀²) f^p − ∫_f^4 c (1 − s/4)(1 − s/2)^{-2} s^p ds        (f ≤ 4)
//! w = B² f^p + 4^p B₀² + ∫_4^f c s^q (1 − s/2)^{-2} ds             (f > 4)
//! z = B² g^p + ∫_0^g c s^q (1 + s/2)^{-2} ds
//! ```
//!
//! with `c = 2B₀²/(2−γ)`, and `W = e^{−w}`, `Z = e^{−z}`. The `z` form follows
//! from the textbook one by splitting `(1 + s/4)s = (1 + s/2)² − 1`, which
//! removes the cancellation and makes `z > 0` manifest.

use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fmt::num;
use crate::model::Params;
use crate::quad::{integrate, QuadError, QuadOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxError {
    #[error("rho must be positive and finite (got {0})")]
    NonPositiveRho(f64),
    #[error("b must be finite (got {0})")]
    NonFiniteB(f64),
    #[error("{quantity} overflows at (rho = {rho}, b = {b})")]
    Overflow {
        quantity: &'static str,
        rho: f64,
        b: f64,
    },
    #[error("quadrature for {quantity} failed at (rho = {rho}, b = {b}): {source}")]
    Quadrature {
        quantity: &'static str,
        rho: f64,
        b: f64,
        #[source]
        source: QuadError,
    },
    #[error("zeta roots need a nonzero mean field")]
    ZeroBbar,
    #[error("no root of {0} in the search bracket")]
    NoRoot(&'static str),
    #[error("bad level grid: {0}")]
    BadRange(String),
}

/// A real number or `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// `+∞` maps to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    /// `e^{−x}` with `e^{−∞} = 0`.
    pub fn exp_neg(&self) -> f64 {
        self.finite().map_or(0.0, |v| (-v).exp())
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(out, "{v}"),
            ExtReal::Infinite => write!(out, "inf"),
        }
    }
}

/// Exponents and constants shared by every evaluation for fixed `(γ, B₀)`.
#[derive(Clone, Copy, Debug)]
struct Consts {
    gamma: f64,
    b0_sq: f64,
    p: f64,
    q: f64,
    c: f64,
}

impl Consts {
    fn new(p: &Params) -> Self {
        let two_minus = 2.0 - p.gamma;
        Self {
            gamma: p.gamma,
            b0_sq: p.b0_sq(),
            p: 2.0 / two_minus,
            q: p.gamma / two_minus,
            c: 2.0 * p.b0_sq() / two_minus,
        }
    }
}

/// `f`, `g` and the stable intermediate quantities at one point.
#[derive(Clone, Copy, Debug)]
struct Roots {
    rho: f64,
    b: f64,
    rg: f64,
    s: f64,
    t_plus: f64,
    t_minus: f64,
    f: ExtReal,
    g: ExtReal,
}

fn roots(rho: f64, b: f64, k: &Consts) -> Result<Roots, RelaxError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(RelaxError::NonPositiveRho(rho));
    }
    if !b.is_finite() {
        return Err(RelaxError::NonFiniteB(b));
    }
    let rg = (k.gamma * rho.ln()).exp();
    let b_sq = b * b;
    let d = b_sq + k.b0_sq - rg;
    let s = d.hypot(2.0 * b.abs() * rg.sqrt());
    let overflow = |quantity| RelaxError::Overflow { quantity, rho, b };

    // S ∓ D without cancellation, using (S − D)(S + D) = 4B²ρ^γ
    let f = if b == 0.0 && rg <= k.b0_sq {
        ExtReal::Infinite
    } else {
        let v = if d > 0.0 { (s + d) / b_sq } else { 4.0 * rg / (s - d) };
        if !v.is_finite() {
            return Err(overflow("f"));
        }
        ExtReal::Finite(v)
    };
    let g = if b == 0.0 && rg >= k.b0_sq {
        ExtReal::Infinite
    } else {
        let v = if d < 0.0 { (s - d) / b_sq } else { 4.0 * rg / (s + d) };
        if !v.is_finite() {
            return Err(overflow("g"));
        }
        ExtReal::Finite(v)
    };

    // S ± T with T = B² − B₀² + ρ^γ, using (S + T)(S − T) = 4B²B₀²
    let t = b_sq - k.b0_sq + rg;
    let (t_plus, t_minus) = if b == 0.0 {
        (s + t, s - t)
    } else if t > 0.0 {
        (s + t, 4.0 * b_sq * k.b0_sq / (s + t))
    } else {
        (4.0 * b_sq * k.b0_sq / (s - t), s - t)
    };
    Ok(Roots {
        rho,
        b,
        rg,
        s,
        t_plus,
        t_minus,
        f,
        g,
    })
}

fn power(x: f64, e: f64, quantity: &'static str, r: &Roots) -> Result<f64, RelaxError> {
    let v = x.powf(e);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RelaxError::Overflow {
            quantity,
            rho: r.rho,
            b: r.b,
        })
    }
}

fn quad_err(quantity: &'static str, r: &Roots) -> impl FnOnce(QuadError) -> RelaxError {
    let (rho, b) = (r.rho, r.b);
    move |source| RelaxError::Quadrature {
        quantity,
        rho,
        b,
        source,
    }
}

fn w_from_roots(r: &Roots, k: &Consts) -> Result<ExtReal, RelaxError> {
    let f = match r.f {
        ExtReal::Infinite => return Ok(ExtReal::Infinite),
        ExtReal::Finite(f) => f,
    };
    let opts = QuadOptions::default();
    let b_sq = r.b * r.b;
    let fp = power(f, k.p, "w", r)?;
    let w = if f <= 4.0 {
        // geometric cuts towards the pole at s = 2
        let breaks: Vec<f64> = (0..64)
            .map(|j| 2.0 + 2f64.powi(-j))
            .take_while(|&s| s > f)
            .collect();
        let (p, c) = (k.p, k.c);
        let integrand = move |s: f64| {
            let h = 1.0 - 0.5 * s;
            c * (1.0 - 0.25 * s) / (h * h) * s.powf(p)
        };
        let integral = integrate(integrand, f, 4.0, &breaks, &opts).map_err(quad_err("w", r))?;
        (b_sq + k.b0_sq) * fp - integral.value
    } else {
        let breaks: Vec<f64> = (1..1100)
            .map(|j| 4.0 * 2f64.powi(j))
            .take_while(|&s| s < f)
            .collect();
        let (q, c) = (k.q, k.c);
        let integrand = move |s: f64| {
            let h = 1.0 - 0.5 * s;
            c * s.powf(q) / (h * h)
        };
        let integral = integrate(integrand, 4.0, f, &breaks, &opts).map_err(quad_err("w", r))?;
        b_sq * fp + 4f64.powf(k.p) * k.b0_sq + integral.value
    };
    if !w.is_finite() {
        return Err(RelaxError::Overflow {
            quantity: "w",
            rho: r.rho,
            b: r.b,
        });
    }
    Ok(ExtReal::Finite(w))
}

fn z_from_roots(r: &Roots, k: &Consts) -> Result<ExtReal, RelaxError> {
    let g = match r.g {
        ExtReal::Infinite => return Ok(ExtReal::Infinite),
        ExtReal::Finite(g) => g,
    };
    let gp = power(g, k.p, "z", r)?;
    let breaks: Vec<f64> = (1..12).map(|j| g * 2f64.powi(-j)).collect();
    let (q, c) = (k.q, k.c);
    let integrand = move |s: f64| {
        let h = 1.0 + 0.5 * s;
        c * s.powf(q) / (h * h)
    };
    let integral =
        integrate(integrand, 0.0, g, &breaks, &QuadOptions::default()).map_err(quad_err("z", r))?;
    let z = r.b * r.b * gp + integral.value;
    if !z.is_finite() {
        return Err(RelaxError::Overflow {
            quantity: "z",
            rho: r.rho,
            b: r.b,
        });
    }
    Ok(ExtReal::Finite(z))
}

pub fn eval_f(rho: f64, b: f64, p: &Params) -> Result<ExtReal, RelaxError> {
    Ok(roots(rho, b, &Consts::new(p))?.f)
}

pub fn eval_g(rho: f64, b: f64, p: &Params) -> Result<ExtReal, RelaxError> {
    Ok(roots(rho, b, &Consts::new(p))?.g)
}

pub fn eval_w(rho: f64, b: f64, p: &Params) -> Result<ExtReal, RelaxError> {
    let k = Consts::new(p);
    w_from_roots(&roots(rho, b, &k)?, &k)
}

pub fn eval_z(rho: f64, b: f64, p: &Params) -> Result<ExtReal, RelaxError> {
    let k = Consts::new(p);
    z_from_roots(&roots(rho, b, &k)?, &k)
}

pub fn big_w(rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
    Ok(eval_w(rho, b, p)?.exp_neg())
}

pub fn big_z(rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
    Ok(eval_z(rho, b, p)?.exp_neg())
}

fn alpha_from_roots(r: &Roots, k: &Consts) -> f64 {
    // (B² + B₀²)/ρ + 2ρ^{γ−1}/f, summed without cancellation
    (r.b * r.b + k.b0_sq + r.rg + r.s) / (2.0 * r.rho)
}

fn beta_from_roots(r: &Roots, k: &Consts) -> f64 {
    match r.g {
        ExtReal::Infinite => k.b0_sq / r.rho,
        ExtReal::Finite(g) => k.b0_sq / r.rho * g / (g + 2.0),
    }
}

/// Larger eigenvalue of the diffusion matrix.
pub fn eval_alpha(rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
    let k = Consts::new(p);
    Ok(alpha_from_roots(&roots(rho, b, &k)?, &k))
}

/// Smaller eigenvalue of the diffusion matrix.
pub fn eval_beta(rho: f64, b: f64, p: &Params) -> Result<f64, RelaxError> {
    let k = Consts::new(p);
    Ok(beta_from_roots(&roots(rho, b, &k)?, &k))
}

/// Everything evaluated at one point `(ρ, B)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxPoint {
    pub rho: f64,
    pub b: f64,
    pub f: ExtReal,
    pub g: ExtReal,
    pub w: ExtReal,
    pub z: ExtReal,
    pub big_w: f64,
    pub big_z: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RelaxPoint {
    pub fn eval(rho: f64, b: f64, p: &Params) -> Result<Self, RelaxError> {
        let k = Consts::new(p);
        let r = roots(rho, b, &k)?;
        let w = w_from_roots(&r, &k)?;
        let z = z_from_roots(&r, &k)?;
        Ok(Self {
            rho,
            b,
            f: r.f,
            g: r.g,
            w,
            z,
            big_w: w.exp_neg(),
            big_z: z.exp_neg(),
            alpha: alpha_from_roots(&r, &k),
            beta: beta_from_roots(&r, &k),
        })
    }
}

/// First and second partial derivatives in `(ρ, B)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DerivBundle {
    pub d_rho: f64,
    pub d_b: f64,
    pub d_rho_rho: f64,
    pub d_rho_b: f64,
    pub d_b_b: f64,
}

impl DerivBundle {
    pub fn scaled(&self, by: f64) -> Self {
        Self {
            d_rho: self.d_rho * by,
            d_b: self.d_b * by,
            d_rho_rho: self.d_rho_rho * by,
            d_rho_b: self.d_rho_b * by,
            d_b_b: self.d_b_b * by,
        }
    }

    pub fn gradient(&self) -> [f64; 2] {
        [self.d_rho, self.d_b]
    }

    pub fn hessian(&self) -> [[f64; 2]; 2] {
        [
            [self.d_rho_rho, self.d_rho_b],
            [self.d_rho_b, self.d_b_b],
        ]
    }

    pub fn is_finite(&self) -> bool {
        [self.d_rho, self.d_b, self.d_rho_rho, self.d_rho_b, self.d_b_b]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Analytic partials of `f`, `g`, `w` and `z` on their finite branches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PotentialGrads {
    pub f: [f64; 2],
    pub g: [f64; 2],
    pub w: [f64; 2],
    pub z: [f64; 2],
}

fn grad_f(r: &Roots, k: &Consts) -> Option<[f64; 2]> {
    let f = r.f.finite()?;
    let den = r.s * r.t_plus;
    Some([
        -4.0 * k.gamma * r.rg / r.rho * k.b0_sq / den,
        -4.0 * k.b0_sq * r.b * f / den,
    ])
}

fn grad_g(r: &Roots, k: &Consts) -> Option<[f64; 2]> {
    let g = r.g.finite()?;
    let den = r.s * r.t_minus;
    Some([
        4.0 * k.gamma * r.rg / r.rho * k.b0_sq / den,
        -4.0 * k.b0_sq * r.b * g / den,
    ])
}

/// Partials of `f`, `g`, `w`, `z`; zero wherever the quantity is infinite.
pub fn potential_grads(rho: f64, b: f64, p: &Params) -> Result<PotentialGrads, RelaxError> {
    let k = Consts::new(p);
    let r = roots(rho, b, &k)?;
    let (kk, k2) = (2.0 * k.p * k.gamma, k.p * k.gamma);
    let rg1 = r.rg / rho;
    let mut out = PotentialGrads::default();
    if let (Some(df), Some(f)) = (grad_f(&r, &k), r.f.finite()) {
        out.f = df;
        out.w = [-kk * rg1 * f.powf(k.q), -k2 * b * f.powf(k.p)];
    }
    if let (Some(dg), Some(g)) = (grad_g(&r, &k), r.g.finite()) {
        out.g = dg;
        out.z = [kk * rg1 * g.powf(k.q), -k2 * b * g.powf(k.p)];
    }
    Ok(out)
}

/// Derivatives of `W` divided by `W`; all zero on `{f = ∞}`.
pub fn reduced_w_derivs(rho: f64, b: f64, p: &Params) -> Result<DerivBundle, RelaxError> {
    let k = Consts::new(p);
    let r = roots(rho, b, &k)?;
    let (f, [df_r, df_b]) = match (r.f.finite(), grad_f(&r, &k)) {
        (Some(f), Some(df)) => (f, df),
        _ => return Ok(DerivBundle::default()),
    };
    let (kk, k2) = (2.0 * k.p * k.gamma, k.p * k.gamma);
    let rg1 = r.rg / rho;
    let rg2 = rg1 / rho;
    let fp = power(f, k.p, "f^p", &r)?;
    let fq = fp / f;
    let fq1 = fq / f;
    let dw_r = -kk * rg1 * fq;
    let dw_b = -k2 * b * fp;
    Ok(DerivBundle {
        d_rho: -dw_r,
        d_b: -dw_b,
        d_rho_rho: kk * ((k.gamma - 1.0) * rg2 * fq + k.q * rg1 * fq1 * df_r - rg1 * fq * dw_r),
        d_rho_b: kk * (k.q * rg1 * fq1 * df_b - rg1 * fq * dw_b),
        d_b_b: k2 * (fp + k.p * b * fq * df_b - b * fp * dw_b),
    })
}

/// Derivatives of `Z` divided by `Z`; all zero on `{g = ∞}`.
pub fn reduced_z_derivs(rho: f64, b: f64, p: &Params) -> Result<DerivBundle, RelaxError> {
    let k = Consts::new(p);
    let r = roots(rho, b, &k)?;
    let (g, [dg_r, dg_b]) = match (r.g.finite(), grad_g(&r, &k)) {
        (Some(g), Some(dg)) => (g, dg),
        _ => return Ok(DerivBundle::default()),
    };
    let (kk, k2) = (2.0 * k.p * k.gamma, k.p * k.gamma);
    let rg1 = r.rg / rho;
    let rg2 = rg1 / rho;
    let gp = power(g, k.p, "g^p", &r)?;
    // g may be 0 when ρ^γ underflows; g^{q-1} is then 0 since q > 1
    let gq = g.powf(k.q);
    let gq1 = g.powf(k.q - 1.0);
    let dz_r = kk * gq * rg1;
    let dz_b = -k2 * gp * b;
    Ok(DerivBundle {
        d_rho: -dz_r,
        d_b: -dz_b,
        d_rho_rho: -kk * ((k.gamma - 1.0) * gq * rg2 + k.q * rg1 * gq1 * dg_r - rg1 * gq * dz_r),
        d_rho_b: -kk * (k.q * rg1 * gq1 * dg_b - rg1 * gq * dz_b),
        d_b_b: k2 * (gp + k.p * gq * b * dg_b - gp * b * dz_b),
    })
}

/// All first and second partials of `W`.
pub fn w_derivs(rho: f64, b: f64, p: &Params) -> Result<DerivBundle, RelaxError> {
    let reduced = reduced_w_derivs(rho, b, p)?;
    Ok(reduced.scaled(big_w(rho, b, p)?))
}

/// All first and second partials of `Z`.
pub fn z_derivs(rho: f64, b: f64, p: &Params) -> Result<DerivBundle, RelaxError> {
    let reduced = reduced_z_derivs(rho, b, p)?;
    Ok(reduced.scaled(big_z(rho, b, p)?))
}

pub fn grad_big_w(rho: f64, b: f64, p: &Params) -> Result<[f64; 2], RelaxError> {
    Ok(w_derivs(rho, b, p)?.gradient())
}

pub fn grad_big_z(rho: f64, b: f64, p: &Params) -> Result<[f64; 2], RelaxError> {
    Ok(z_derivs(rho, b, p)?.gradient())
}

pub fn hess_big_w(rho: f64, b: f64, p: &Params) -> Result<[[f64; 2]; 2], RelaxError> {
    Ok(w_derivs(rho, b, p)?.hessian())
}

pub fn hess_big_z(rho: f64, b: f64, p: &Params) -> Result<[[f64; 2]; 2], RelaxError> {
    Ok(z_derivs(rho, b, p)?.hessian())
}

/// Roots of `B̄ζ² + (D̄/ρ̄)ζ − ρ̄^{γ−2}B̄ = 0`.
///
/// `zeta1 > 0` pairs with `α(ρ̄, B̄)` and `zeta2 < 0` with `β(ρ̄, B̄)` for `B̄ > 0`;
/// the combination `ζᵢ(ρ − ρ̄) + (B − B̄)` then diffuses with that eigenvalue
/// at linear order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaPair {
    pub zeta1: f64,
    pub zeta2: f64,
}

pub fn zeta_roots(rho_bar: f64, b_bar: f64, p: &Params) -> Result<ZetaPair, RelaxError> {
    if !(rho_bar > 0.0 && rho_bar.is_finite()) {
        return Err(RelaxError::NonPositiveRho(rho_bar));
    }
    if b_bar == 0.0 || !b_bar.is_finite() {
        return Err(RelaxError::ZeroBbar);
    }
    let rg = p.rho_pow_gamma(rho_bar);
    let d = b_bar * b_bar + p.b0_sq() - rg;
    // monic form ζ² + lin·ζ − prod = 0
    let lin = d / (rho_bar * b_bar);
    let prod = rg / (rho_bar * rho_bar);
    let disc = (0.5 * lin).hypot(prod.sqrt());
    let (big, small) = if lin == 0.0 {
        (prod.sqrt(), -prod.sqrt())
    } else {
        let big = -(0.5 * lin + lin.signum() * disc);
        (big, -prod / big)
    };
    Ok(if big > 0.0 {
        ZetaPair {
            zeta1: big,
            zeta2: small,
        }
    } else {
        ZetaPair {
            zeta1: small,
            zeta2: big,
        }
    })
}

/// Which diagonalizing variable a level table samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    W,
    Z,
}

impl Which {
    pub fn name(&self) -> &'static str {
        match self {
            Which::W => "W",
            Which::Z => "Z",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Branch {
    Finite,
    Infinite,
    Error(String),
}

impl Branch {
    pub fn tag(&self) -> &'static str {
        match self {
            Branch::Finite => "finite",
            Branch::Infinite => "infinite",
            Branch::Error(_) => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSample {
    pub rho: f64,
    pub b: f64,
    /// `W` or `Z`; 0 on the infinite branch, NaN on error. `W` exceeds the
    /// floating-point range near `f = 2` (large `ρ` and `|B|`) and reads `inf` there.
    pub value: f64,
    pub branch: Branch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelTable {
    pub which: Which,
    pub rho_range: (f64, f64),
    pub b_range: (f64, f64),
    pub n_rho: usize,
    pub n_b: usize,
    /// Row-major in `ρ`: sample `(i, j)` sits at `i * n_b + j`.
    pub samples: Vec<LevelSample>,
}

fn axis(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + i as f64 * ((hi - lo) / (n - 1) as f64)
    }
}

/// Samples `W` or `Z` on a uniform `n_rho × n_b` lattice over the closed box.
pub fn level_grid(
    p: &Params,
    rho_range: (f64, f64),
    b_range: (f64, f64),
    n_rho: usize,
    n_b: usize,
    which: Which,
) -> Result<LevelTable, RelaxError> {
    let (r0, r1) = rho_range;
    let (b0, b1) = b_range;
    if !(r0 > 0.0 && r1 > r0 && r1.is_finite()) {
        return Err(RelaxError::BadRange(format!("rho range [{r0}, {r1}] must satisfy 0 < lo < hi")));
    }
    if !(b1 > b0 && b0.is_finite() && b1.is_finite()) {
        return Err(RelaxError::BadRange(format!("b range [{b0}, {b1}] must satisfy lo < hi")));
    }
    if n_rho < 2 || n_b < 2 {
        return Err(RelaxError::BadRange("need at least 2 samples per axis".into()));
    }
    let samples = (0..n_rho * n_b)
        .into_par_iter()
        .map(|idx| {
            let rho = axis(r0, r1, n_rho, idx / n_b);
            let b = axis(b0, b1, n_b, idx % n_b);
            let res = match which {
                Which::W => eval_w(rho, b, p),
                Which::Z => eval_z(rho, b, p),
            };
            let (value, branch) = match res {
                Ok(ExtReal::Finite(v)) => ((-v).exp(), Branch::Finite),
                Ok(ExtReal::Infinite) => (0.0, Branch::Infinite),
                Err(e) => (f64::NAN, Branch::Error(e.to_string())),
            };
            LevelSample {
                rho,
                b,
                value,
                branch,
            }
        })
        .collect();
    Ok(LevelTable {
        which,
        rho_range,
        b_range,
        n_rho,
        n_b,
        samples,
    })
}

impl LevelTable {
    pub fn get(&self, i: usize, j: usize) -> &LevelSample {
        &self.samples[i * self.n_b + j]
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "rho,b,value,branch")?;
        for s in &self.samples {
            writeln!(out, "{},{},{},{}", num(s.rho), num(s.b), num(s.value), s.branch.tag())?;
        }
        Ok(())
    }

    /// Shape of `{value ≤ level}` on the lattice.
    pub fn sublevel(&self, level: f64) -> Sublevel {
        let mut out = Sublevel {
            level,
            members: 0,
            errors: 0,
            min_rho: f64::INFINITY,
            max_rho: f64::NEG_INFINITY,
            max_abs_b: 0.0,
            touches_rho_min: false,
            touches_rho_max: false,
            touches_b_edge: false,
        };
        for i in 0..self.n_rho {
            for j in 0..self.n_b {
                let s = self.get(i, j);
                if matches!(s.branch, Branch::Error(_)) {
                    out.errors += 1;
                    continue;
                }
                if s.value > level {
                    continue;
                }
                out.members += 1;
                out.min_rho = out.min_rho.min(s.rho);
                out.max_rho = out.max_rho.max(s.rho);
                out.max_abs_b = out.max_abs_b.max(s.b.abs());
                out.touches_rho_min |= i == 0;
                out.touches_rho_max |= i + 1 == self.n_rho;
                out.touches_b_edge |= j == 0 || j + 1 == self.n_b;
            }
        }
        out
    }

    /// Lattice points on the infinite branch.
    pub fn infinite_points(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .filter(|s| s.branch == Branch::Infinite)
            .map(|s| (s.rho, s.b))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sublevel {
    pub level: f64,
    pub members: usize,
    pub errors: usize,
    pub min_rho: f64,
    pub max_rho: f64,
    pub max_abs_b: f64,
    pub touches_rho_min: bool,
    pub touches_rho_max: bool,
    pub touches_b_edge: bool,
}

/// Lattice points where both `f` and `g` are infinite.
pub fn singular_points(w: &LevelTable, z: &LevelTable) -> Vec<(f64, f64)> {
    let zs = z.infinite_points();
    w.infinite_points().into_iter().filter(|pt| zs.contains(pt)).collect()
}

/// Bisection for a monotone `h` with a sign change on `[lo, hi]`.
fn bisect(mut lo: f64, mut hi: f64, h: impl Fn(f64) -> Result<f64, RelaxError>, what: &'static str) -> Result<f64, RelaxError> {
    let (h_lo, h_hi) = (h(lo)?, h(hi)?);
    if h_lo.signum() == h_hi.signum() {
        return Err(RelaxError::NoRoot(what));
    }
    let rising = h_lo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (h(mid)? < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bounds on `(ρ, |B|)` implied by `min w ≥ w0` and `min z ≥ z0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    /// `z(ρ, 0) = z0`: no admissible point has smaller density.
    pub rho_min: f64,
    /// `w(ρ, 0) = w0`: no admissible point has larger density.
    pub rho_max: f64,
    /// `w(rho_min, B) = w0`: no admissible point has larger `|B|`.
    pub b_max: f64,
}

fn ext_or_big(x: ExtReal) -> f64 {
    x.finite().unwrap_or(f64::MAX)
}

/// Solves `z(ρ, 0) = z0` on `(0, B₀^{2/γ})`; `z(·, 0)` increases there.
pub fn rho_floor_from_z(z0: f64, p: &Params) -> Result<f64, RelaxError> {
    let rho_sing = p.b0_sq().powf(1.0 / p.gamma);
    let z_at = |rho: f64| -> Result<f64, RelaxError> {
        match eval_z(rho, 0.0, p) {
            Ok(v) => Ok(ext_or_big(v) - z0),
            Err(RelaxError::Overflow { .. }) => Ok(f64::MAX),
            Err(e) => Err(e),
        }
    };
    bisect(rho_sing * 1e-12, rho_sing * (1.0 - 1e-12), z_at, "z(rho, 0) = z0")
}

/// Solves `w(ρ, 0) = w0` on `(B₀^{2/γ}, ∞)`; `w(·, 0)` decreases there.
pub fn rho_ceiling_from_w(w0: f64, p: &Params) -> Result<f64, RelaxError> {
    let rho_sing = p.b0_sq().powf(1.0 / p.gamma);
    let w_at = |rho: f64| -> Result<f64, RelaxError> {
        match eval_w(rho, 0.0, p) {
            Ok(v) => Ok(ext_or_big(v) - w0),
            Err(RelaxError::Overflow { .. }) => Ok(f64::MAX),
            Err(e) => Err(e),
        }
    };
    let lo = rho_sing * (1.0 + 1e-12);
    let mut hi = 2.0 * rho_sing;
    while w_at(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e12 * rho_sing {
            return Err(RelaxError::NoRoot("w(rho, 0) = w0"));
        }
    }
    bisect(lo, hi, w_at, "w(rho, 0) = w0")
}

/// Solves `w(ρ, B) = w0` for `B > 0` at fixed `ρ ≤ B₀^{2/γ}`.
pub fn b_ceiling_from_w(w0: f64, rho: f64, p: &Params) -> Result<f64, RelaxError> {
    let w_at = |b: f64| -> Result<f64, RelaxError> {
        match eval_w(rho, b, p) {
            Ok(v) => Ok(ext_or_big(v) - w0),
            Err(RelaxError::Overflow { .. }) => Ok(f64::MAX),
            Err(e) => Err(e),
        }
    };
    let mut hi = p.b0.abs();
    while w_at(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(RelaxError::NoRoot("w(rho, b) = w0"));
        }
    }
    bisect(hi * 1e-12, hi, w_at, "w(rho, b) = w0")
}

pub fn envelope(w0: f64, z0: f64, p: &Params) -> Result<Envelope, RelaxError> {
    let rho_min = rho_floor_from_z(z0, p)?;
    Ok(Envelope {
        rho_min,
        rho_max: rho_ceiling_from_w(w0, p)?,
        b_max: b_ceiling_from_w(w0, rho_min, p)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::diffusion_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> Params {
        Params::new(1.5, 1.0, 0.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn random_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let rho: f64 = rng.gen_range(0.2..3.0);
            let b: f64 = rng.gen_range(-2.0..2.0);
            if b.abs() > 0.1 && (p.rho_pow_gamma(rho) - p.b0_sq()).abs() > 0.1 {
                out.push((rho, b));
            }
        }
        out
    }

    /// Composite Simpson rule; independent of the adaptive integrator.
    fn simpson(h: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let step = (b - a) / panels as f64;
        let mut acc = h(a) + h(b);
        for i in 1..panels {
            let x = a + i as f64 * step;
            acc += if i % 2 == 1 { 4.0 * h(x) } else { 2.0 * h(x) };
        }
        acc * step / 3.0
    }

    #[test]
    fn f_case_table() {
        let p = params();
        assert_eq!(eval_f(0.5, 0.0, &p).unwrap(), ExtReal::Infinite);
        assert_eq!(eval_f(1.0, 0.0, &p).unwrap(), ExtReal::Infinite);
        let f = eval_f(4.0, 0.0, &p).unwrap().finite().unwrap();
        assert!(rel(f, 16.0 / 7.0) < 1e-15);
        assert!(matches!(eval_f(0.5, 1e-200, &p), Err(RelaxError::Overflow { .. })));
        assert!(eval_f(1.0, 1e-300, &p).unwrap().finite().unwrap() > 1e299);
    }

    #[test]
    fn g_case_table() {
        let p = params();
        assert_eq!(eval_g(2.0, 0.0, &p).unwrap(), ExtReal::Infinite);
        assert_eq!(eval_g(1.0, 0.0, &p).unwrap(), ExtReal::Infinite);
        let rho: f64 = 0.5;
        let rg = rho.powf(1.5);
        let g = eval_g(rho, 0.0, &p).unwrap().finite().unwrap();
        assert!(rel(g, 2.0 * rg / (1.0 - rg)) < 1e-14);
    }

    #[test]
    fn product_and_difference_identities() {
        let p = params();
        let (rho, b): (f64, f64) = (1.3, 0.7);
        let f = eval_f(rho, b, &p).unwrap().to_f64();
        let g = eval_g(rho, b, &p).unwrap().to_f64();
        assert!(rel(f * g, 4.0 * rho.powf(1.5) / (b * b)) < 1e-12);
        for (rho, b) in random_points(100, 3) {
            let f = eval_f(rho, b, &p).unwrap().to_f64();
            let g = eval_g(rho, b, &p).unwrap().to_f64();
            let exact = 2.0 * (b * b + 1.0 - rho.powf(1.5)) / (b * b);
            assert!((f - g - exact).abs() <= 1e-11 * exact.abs().max(f.max(g) * 1e-3), "{rho} {b}");
        }
    }

    #[test]
    fn z_vanishes_at_low_density() {
        let p = params();
        let mut last = f64::INFINITY;
        for rho in [1e-2, 1e-4, 1e-6, 1e-8] {
            let z = eval_z(rho, 0.0, &p).unwrap().finite().unwrap();
            assert!(z > 0.0 && z < last);
            last = z;
        }
        assert!(last < 1e-20);
        let zs = big_z(1e-2, 0.0, &p).unwrap();
        assert!(zs < 1.0 && 1.0 - zs < 1e-5);
    }

    #[test]
    fn w_decreases_along_dense_axis() {
        let p = params();
        let ws: Vec<f64> = [2.0, 4.0, 8.0]
            .iter()
            .map(|&rho| eval_w(rho, 0.0, &p).unwrap().finite().unwrap())
            .collect();
        assert!(ws[0] > ws[1] && ws[1] > ws[2], "{ws:?}");
    }

    #[test]
    fn quadrature_matches_brute_force_simpson() {
        let p = params();
        let (rho, b) = (1.2, 0.4);
        let (gamma, b0_sq) = (1.5, 1.0);
        let pe = 2.0 / (2.0 - gamma);
        let c = 2.0 * b0_sq / (2.0 - gamma);
        let f = eval_f(rho, b, &p).unwrap().to_f64();
        let g = eval_g(rho, b, &p).unwrap().to_f64();

        // textbook forms, integrated by brute force
        let iw = simpson(|s| c * (1.0 - s / 4.0) / (1.0 - s / 2.0).powi(2) * s.powf(pe), f, 4.0, 1_000_000);
        let w_ref = (b * b + b0_sq) * f.powf(pe) - iw;
        let iz = simpson(|s| c * (1.0 + s / 4.0) / (1.0 + s / 2.0).powi(2) * s.powf(pe), 0.0, g, 1_000_000);
        let z_ref = (b * b + b0_sq) * g.powf(pe) - iz;

        let w = eval_w(rho, b, &p).unwrap().to_f64();
        let z = eval_z(rho, b, &p).unwrap().to_f64();
        assert!(rel(w, w_ref) < 1e-9, "w {w} vs {w_ref}");
        assert!(rel(z, z_ref) < 1e-9, "z {z} vs {z_ref}");
    }

    #[test]
    fn w_branches_join_continuously_at_four() {
        // f = 4 solves 4ρ^γ = 4(S − D); find ρ by bisection at fixed b
        let p = params();
        let b = 0.3;
        let mut lo = 0.3;
        let mut hi = 3.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eval_f(mid, b, &p).unwrap().to_f64() > 4.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let wl = eval_w(lo, b, &p).unwrap().to_f64();
        let wh = eval_w(hi, b, &p).unwrap().to_f64();
        assert!((wl - wh).abs() < 1e-9 * wl.abs().max(1.0));
    }

    #[test]
    fn alpha_closed_forms_agree() {
        let p = params();
        let (rho, b): (f64, f64) = (1.7, 0.3);
        let f = eval_f(rho, b, &p).unwrap().to_f64();
        let rg = rho.powf(1.5);
        let a1 = (1.0 / rho) * f / (f - 2.0);
        let a2 = rg / rho + b * b * f / (2.0 * rho);
        let a3 = (b * b + 1.0) / rho + 2.0 * rg / rho / f;
        let a = eval_alpha(rho, b, &p).unwrap();
        for other in [a1, a2, a3] {
            assert!(rel(a, other) < 1e-12, "{a} {other}");
        }
    }

    #[test]
    fn alpha_beta_match_trace_and_determinant() {
        let p = params();
        for (rho, b) in random_points(200, 11) {
            let a = eval_alpha(rho, b, &p).unwrap();
            let be = eval_beta(rho, b, &p).unwrap();
            let m = diffusion_matrix(rho, b, &p);
            assert!(rel(a + be, m.trace()) < 1e-11);
            assert!(rel(a * be, m.det()) < 1e-11);
            let (hi, lo) = m.real_eigenvalues().unwrap();
            assert!(rel(a, hi) < 1e-10 && rel(be, lo) < 1e-10);
        }
    }

    #[test]
    fn identity_point_has_unit_eigenvalues() {
        let p = params();
        assert_eq!(eval_alpha(1.0, 0.0, &p).unwrap(), 1.0);
        assert_eq!(eval_beta(1.0, 0.0, &p).unwrap(), 1.0);
    }

    #[test]
    fn gradients_vanish_on_infinite_branch() {
        let p = params();
        assert_eq!(w_derivs(0.5, 0.0, &p).unwrap(), DerivBundle::default());
        assert_eq!(z_derivs(2.0, 0.0, &p).unwrap(), DerivBundle::default());
        assert_eq!(big_w(0.5, 0.0, &p).unwrap(), 0.0);
        let d = w_derivs(2.0, 0.0, &p).unwrap();
        assert_eq!(d.d_b, 0.0);
        assert!(d.d_rho > 0.0);
    }

    fn fd5(h: f64, v: impl Fn(f64) -> f64) -> f64 {
        (v(-2.0 * h) - 8.0 * v(-h) + 8.0 * v(h) - v(2.0 * h)) / (12.0 * h)
    }

    fn bundle_err(analytic: &[f64], fd: &[f64]) -> f64 {
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = analytic.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        diff / scale
    }

    #[test]
    fn gradients_match_finite_differences_of_big_w_and_big_z() {
        // direct check on W and Z themselves where both are representable
        let p = params();
        let h = 1e-5;
        let mut checked = 0;
        for (rho, b) in random_points(50, 5) {
            let w0 = eval_w(rho, b, &p).unwrap().to_f64();
            let z0 = eval_z(rho, b, &p).unwrap().to_f64();
            if w0.abs() > 600.0 || z0 > 600.0 {
                continue;
            }
            for (bundle, value) in [
                (w_derivs(rho, b, &p).unwrap(), big_w as fn(f64, f64, &Params) -> Result<f64, RelaxError>),
                (z_derivs(rho, b, &p).unwrap(), big_z),
            ] {
                let fr = fd5(h, |e| value(rho + e, b, &p).unwrap());
                let fb = fd5(h, |e| value(rho, b + e, &p).unwrap());
                let err = bundle_err(&bundle.gradient(), &[fr, fb]);
                assert!(err < 1e-6, "({rho}, {b}): {err:e}");
            }
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn hessians_match_finite_differences_in_log_space() {
        let p = params();
        let h = 1e-5;
        for (rho, b) in random_points(50, 9) {
            for reduced in [reduced_w_derivs, reduced_z_derivs] {
                let d = reduced(rho, b, &p).unwrap();
                let grad = |r: f64, bb: f64| reduced(r, bb, &p).unwrap().gradient();
                // ∂²(log W) = H/W − G Gᵀ
                let l_rr = d.d_rho_rho - d.d_rho * d.d_rho;
                let l_rb = d.d_rho_b - d.d_rho * d.d_b;
                let l_bb = d.d_b_b - d.d_b * d.d_b;
                let fd_rr = fd5(h, |e| grad(rho + e, b)[0]);
                let fd_rb = fd5(h, |e| grad(rho, b + e)[0]);
                let fd_br = fd5(h, |e| grad(rho + e, b)[1]);
                let fd_bb = fd5(h, |e| grad(rho, b + e)[1]);
                let err = bundle_err(&[l_rr, l_rb, l_rb, l_bb], &[fd_rr, fd_rb, fd_br, fd_bb]);
                assert!(err < 1e-6, "({rho}, {b}): {err:e}");
            }
        }
    }

    #[test]
    fn potential_gradients_match_finite_differences() {
        let p = params();
        let h = 1e-5;
        for (rho, b) in random_points(30, 13) {
            let g = potential_grads(rho, b, &p).unwrap();
            for (grad, eval) in [
                (g.f, eval_f as fn(f64, f64, &Params) -> Result<ExtReal, RelaxError>),
                (g.g, eval_g),
                (g.w, eval_w),
                (g.z, eval_z),
            ] {
                let fr = fd5(h, |e| eval(rho + e, b, &p).unwrap().to_f64());
                let fb = fd5(h, |e| eval(rho, b + e, &p).unwrap().to_f64());
                let err = bundle_err(&grad, &[fr, fb]);
                assert!(err < 1e-6, "({rho}, {b}): {err:e}");
            }
        }
    }

    #[test]
    fn diagonalization_and_ratio_identities() {
        let p = params();
        for (rho, b) in random_points(100, 17) {
            let m = diffusion_matrix(rho, b, &p);
            let a = eval_alpha(rho, b, &p).unwrap();
            let be = eval_beta(rho, b, &p).unwrap();
            for (d, lambda) in [
                (reduced_w_derivs(rho, b, &p).unwrap(), a),
                (reduced_z_derivs(rho, b, &p).unwrap(), be),
            ] {
                let l = m.left_mul(d.gradient());
                let scale = d.d_rho.abs().max(d.d_b.abs()) * (m.trace() + lambda);
                assert!((l[0] - lambda * d.d_rho).abs() < 1e-10 * scale);
                assert!((l[1] - lambda * d.d_b).abs() < 1e-10 * scale);
            }
            let rg = rho.powf(1.5);
            let dd = b * b + 1.0 - rg;
            let s = dd.hypot(2.0 * b.abs() * rg.sqrt());
            let g = potential_grads(rho, b, &p).unwrap();
            let rw = (s - dd) / (2.0 * b * rho);
            let rz = (-dd - s) / (2.0 * b * rho);
            assert!(rel(g.w[0] / g.w[1], rw) < 1e-9, "{} vs {rw}", g.w[0] / g.w[1]);
            assert!(rel(g.z[0] / g.z[1], rz) < 1e-9, "{} vs {rz}", g.z[0] / g.z[1]);
        }
    }

    #[test]
    fn monotonicity_on_sample_grid() {
        let p = params();
        for i in 0..100 {
            for j in 0..100 {
                let rho = 0.1 + 2.9 * i as f64 / 99.0;
                let b = -2.0 + 4.0 * j as f64 / 99.0;
                let gw = reduced_w_derivs(rho, b, &p).unwrap();
                let gz = reduced_z_derivs(rho, b, &p).unwrap();
                assert!(gw.d_rho >= 0.0);
                if b >= 0.0 {
                    assert!(gw.d_b >= 0.0);
                }
                assert!(gz.d_b * b.signum() >= 0.0);
                let pt = RelaxPoint::eval(rho, b, &p).unwrap();
                if let Some(f) = pt.f.finite() {
                    assert!(f > 2.0);
                }
                if let Some(g) = pt.g.finite() {
                    assert!(g > 0.0);
                }
                if let Some(z) = pt.z.finite() {
                    assert!(z > 0.0);
                }
                assert!(pt.alpha > 0.0 && pt.beta > 0.0 && pt.big_z < 1.0);
            }
        }
    }

    #[test]
    fn zeta_examples() {
        let p = params();
        let z = zeta_roots(1.0, 0.5, &p).unwrap();
        for zeta in [z.zeta1, z.zeta2] {
            let res = 0.5 * zeta * zeta + 0.25 * zeta - 0.5;
            assert!(res.abs() < 1e-12);
        }
        assert!(z.zeta1 > 0.0 && z.zeta2 < 0.0);
        assert!((z.zeta1 * z.zeta2 + 1.0).abs() < 1e-13);

        // vanishing linear term: ρ̄ = (B̄² + B₀²)^{1/γ}
        let b_bar: f64 = 0.5;
        let rho_bar = (b_bar * b_bar + 1.0f64).powf(1.0 / 1.5);
        let z = zeta_roots(rho_bar, b_bar, &p).unwrap();
        let expect = rho_bar.powf(-0.25);
        assert!(rel(z.zeta1, expect) < 1e-12 && rel(-z.zeta2, expect) < 1e-12);

        assert_eq!(zeta_roots(1.0, 0.0, &p), Err(RelaxError::ZeroBbar));
    }

    #[test]
    fn zeta_pairs_with_eigenvalues() {
        let p = params();
        let z = zeta_roots(1.0, 0.5, &p).unwrap();
        let m = diffusion_matrix(1.0, 0.5, &p);
        let a = eval_alpha(1.0, 0.5, &p).unwrap();
        let be = eval_beta(1.0, 0.5, &p).unwrap();
        for (zeta, lambda) in [(z.zeta1, a), (z.zeta2, be)] {
            let l = m.left_mul([zeta, 1.0]);
            assert!((l[0] - lambda * zeta).abs() < 1e-12);
            assert!((l[1] - lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn level_grid_locates_singular_point() {
        let p = params();
        let w = level_grid(&p, (0.0625, 3.0), (-2.0, 2.0), 95, 129, Which::W).unwrap();
        let z = level_grid(&p, (0.0625, 3.0), (-2.0, 2.0), 95, 129, Which::Z).unwrap();
        assert_eq!(singular_points(&w, &z), vec![(1.0, 0.0)]);
        assert!(z.samples.iter().all(|s| s.value < 1.0));
        for i in 0..w.n_rho {
            for j in 0..w.n_b {
                let (a, b) = (w.get(i, j), w.get(i, w.n_b - 1 - j));
                assert_eq!(a.b, -b.b);
                assert_eq!(a.branch, b.branch);
                let same = a.value == b.value || (a.value - b.value).abs() <= 1e-12 * a.value.abs();
                assert!(same, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn level_grid_rejects_bad_ranges() {
        let p = params();
        assert!(level_grid(&p, (0.0, 1.0), (-1.0, 1.0), 4, 4, Which::W).is_err());
        assert!(level_grid(&p, (0.1, 1.0), (1.0, -1.0), 4, 4, Which::W).is_err());
        assert!(level_grid(&p, (0.1, 1.0), (-1.0, 1.0), 1, 4, Which::W).is_err());
    }

    #[test]
    fn level_csv_has_header_and_rows() {
        let p = params();
        let t = level_grid(&p, (0.5, 1.5), (-1.0, 1.0), 3, 3, Which::Z).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "rho,b,value,branch");
        assert_eq!(lines.len(), 10);
        assert!(lines.iter().any(|l| l.ends_with(",infinite")));
    }

    #[test]
    fn envelope_bounds_are_consistent() {
        let p = params();
        let w0 = eval_w(1.0, 0.5, &p).unwrap().to_f64();
        let z0 = eval_z(1.0, 0.5, &p).unwrap().to_f64();
        let env = envelope(w0, z0, &p).unwrap();
        assert!(env.rho_min > 0.0 && env.rho_min < 1.0);
        assert!(env.rho_max > 1.0);
        assert!(env.b_max >= 0.5);
        let z_at = eval_z(env.rho_min, 0.0, &p).unwrap().to_f64();
        assert!(rel(z_at, z0) < 1e-9);
        let w_at = eval_w(env.rho_max, 0.0, &p).unwrap().to_f64();
        assert!(rel(w_at, w0) < 1e-9);
    }
}
