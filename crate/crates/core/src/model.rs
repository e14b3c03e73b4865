//! The planar compressible magnetic relaxation system.
//!
//! Density `ρ` and the out-of-plane field `B` evolve by
//!
//! ```text
//! ∂t ρ = ∂x²( ρ^γ/γ + B²/2 )                                    − ε ∂x⁴ ρ
//! ∂t B = ∂x( (B/ρ) ∂x( ρ^γ/γ + B²/2 ) + (B₀²/ρ) ∂x B )        − ε ∂x⁴ B
//! ```
//!
//! Both right-hand sides are evaluated in flux form with the outer derivative
//! applied last, so the discrete means of `ρ` and `B` are conserved to roundoff.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Field, Grid, GridError};

/// Largest admissible exponent `2/(2-γ)`; keeps `f^{2/(2-γ)}` representable.
pub const MAX_RELAX_EXPONENT: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("gamma must lie in (1, 2) (got {0})")]
    GammaOutOfRange(f64),
    #[error("gamma = {0} gives 2/(2-gamma) above {MAX_RELAX_EXPONENT}; exponents would overflow")]
    GammaTooStiff(f64),
    #[error("b0 must be finite and nonzero (got {0})")]
    ZeroB0(f64),
    #[error("epsilon must be finite and >= 0 (got {0})")]
    BadEpsilon(f64),
    #[error("vacuum breach: rho = {rho:e} at index {index} (x = {x})")]
    Vacuum { index: usize, x: f64, rho: f64 },
    #[error("non-finite value in {field} at index {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Model constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub gamma: f64,
    pub b0: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl Params {
    pub fn new(gamma: f64, b0: f64, epsilon: f64) -> Result<Self, ModelError> {
        let p = Self { gamma, b0, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gamma > 1.0 && self.gamma < 2.0) {
            return Err(ModelError::GammaOutOfRange(self.gamma));
        }
        if 2.0 / (2.0 - self.gamma) > MAX_RELAX_EXPONENT {
            return Err(ModelError::GammaTooStiff(self.gamma));
        }
        if !(self.b0.is_finite() && self.b0 != 0.0) {
            return Err(ModelError::ZeroB0(self.b0));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(ModelError::BadEpsilon(self.epsilon));
        }
        Ok(())
    }

    pub fn b0_sq(&self) -> f64 {
        self.b0 * self.b0
    }

    /// `ρ^γ` through `exp(γ ln ρ)`; callers guarantee `ρ > 0`.
    #[inline]
    pub fn rho_pow_gamma(&self, rho: f64) -> f64 {
        (self.gamma * rho.ln()).exp()
    }
}

/// Density and magnetic field at one time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub rho: Field,
    pub b: Field,
    pub time: f64,
}

impl State {
    pub fn new(rho: Field, b: Field, time: f64) -> Result<Self, ModelError> {
        if rho.grid() != b.grid() {
            return Err(GridError::GridMismatch.into());
        }
        Ok(Self { rho, b, time })
    }

    pub fn constant(grid: &Grid, rho: f64, b: f64) -> Self {
        Self {
            rho: grid.constant(rho),
            b: grid.constant(b),
            time: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    /// Checks finiteness of both fields and strict positivity of `ρ`.
    pub fn check_admissible(&self) -> Result<(), ModelError> {
        if let Some(index) = self.rho.first_non_finite() {
            return Err(ModelError::NonFinite { field: "rho", index });
        }
        if let Some(index) = self.b.first_non_finite() {
            return Err(ModelError::NonFinite { field: "b", index });
        }
        let (index, &rho) = self
            .rho
            .values()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("grid is nonempty");
        if rho <= 0.0 {
            return Err(ModelError::Vacuum {
                index,
                x: self.grid().x(index),
                rho,
            });
        }
        Ok(())
    }
}

/// Velocity recovered from the friction law; `u^y` vanishes identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity {
    pub ux: Field,
    pub uz: Field,
}

/// Time derivatives of `(ρ, B)`.
pub fn rhs(s: &State, p: &Params) -> Result<(Field, Field), ModelError> {
    s.check_admissible()?;
    let grid = s.grid();
    let rho = s.rho.values();
    let b = s.b.values();
    let b0_sq = p.b0_sq();

    let mut pressure: Vec<f64> = rho
        .iter()
        .zip(b)
        .map(|(&r, &bb)| p.rho_pow_gamma(r) / p.gamma + 0.5 * bb * bb)
        .collect();
    if grid.dealias() {
        pressure = grid.dealias_values(&pressure);
    }
    let (p_x, p_xx) = grid.deriv12_values(&pressure);
    let b_x = grid.deriv_values(b, 1)?;

    let mut flux: Vec<f64> = (0..grid.n())
        .map(|j| (b[j] * p_x[j] + b0_sq * b_x[j]) / rho[j])
        .collect();
    if grid.dealias() {
        flux = grid.dealias_values(&flux);
    }
    let mut drho = p_xx;
    let mut db = grid.deriv_values(&flux, 1)?;

    if p.epsilon > 0.0 {
        let rho4 = grid.deriv_values(rho, 4)?;
        let b4 = grid.deriv_values(b, 4)?;
        for j in 0..grid.n() {
            drho[j] -= p.epsilon * rho4[j];
            db[j] -= p.epsilon * b4[j];
        }
    }
    Ok((Field::from_raw(grid, drho), Field::from_raw(grid, db)))
}

pub fn velocity(s: &State, p: &Params) -> Result<Velocity, ModelError> {
    s.check_admissible()?;
    let grid = s.grid();
    let rho = s.rho.values();
    let b = s.b.values();
    let rho_x = grid.deriv_values(rho, 1)?;
    let b_x = grid.deriv_values(b, 1)?;
    let ux = (0..grid.n())
        .map(|j| {
            let r = rho[j];
            -(p.rho_pow_gamma(r) / r * rho_x[j] + b[j] * b_x[j]) / r
        })
        .collect();
    let uz = (0..grid.n()).map(|j| p.b0 * b_x[j] / rho[j]).collect();
    Ok(Velocity {
        ux: Field::from_raw(grid, ux),
        uz: Field::from_raw(grid, uz),
    })
}

/// Real 2×2 matrix stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Eigenvalues `(larger, smaller)` when the off-diagonal product is nonnegative.
    pub fn real_eigenvalues(&self) -> Option<(f64, f64)> {
        let [[a, b], [c, d]] = self.0;
        let half_gap = 0.5 * (a - d);
        let disc = half_gap * half_gap + b * c;
        if disc < 0.0 {
            return None;
        }
        let mid = 0.5 * (a + d);
        let root = disc.sqrt();
        let hi = mid + root;
        // smaller root from the product when the sum would cancel
        let lo = if hi != 0.0 && mid > 0.0 {
            self.det() / hi
        } else {
            mid - root
        };
        Some((hi, lo))
    }

    /// `vᵀ M`.
    pub fn left_mul(&self, v: [f64; 2]) -> [f64; 2] {
        [
            v[0] * self.0[0][0] + v[1] * self.0[1][0],
            v[0] * self.0[0][1] + v[1] * self.0[1][1],
        ]
    }
}

/// Coefficients of the second-order terms of the system at a point:
/// `[[ρ^{γ-1}, B], [ρ^{γ-2} B, (B² + B₀²)/ρ]]`.
pub fn diffusion_matrix(rho: f64, b: f64, p: &Params) -> Mat2 {
    let rg = p.rho_pow_gamma(rho);
    Mat2([
        [rg / rho, b],
        [rg / (rho * rho) * b, (b * b + p.b0_sq()) / rho],
    ])
}
