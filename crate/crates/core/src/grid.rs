// SPDX-License-Identifier: Apache-2.0

//! Uniform periodic grid on the torus and the spectral calculus built on it.
//!
//! All derivatives are exact to roundoff for band-limited data: values are
//! transformed with a complex FFT, multiplied by `(i k)^order` and transformed
//! back. The Nyquist mode is dropped for odd orders so that real data stays
//! real.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("n must be even (got {0})")]
    OddCount(usize),
    #[error("n must be at least 16 (got {0})")]
    TooSmall(usize),
    #[error("domain length must be positive and finite (got {0})")]
    BadLength(f64),
    #[error("derivative order must be in 1..=4 (got {0})")]
    BadOrder(u32),
    #[error("field has {got} samples but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite sample {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
}

struct GridInner {
    n: usize,
    length: f64,
    dx: f64,
    wavenumbers: Vec<f64>,
    dealias: bool,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic discretization of `[0, length)` with `n` points.
///
/// Cheap to clone; FFT plans are shared.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.inner.n)
            .field("length", &self.inner.length)
            .field("dealias", &self.inner.dealias)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n
                && self.inner.length == other.inner.length
                && self.inner.dealias == other.inner.dealias)
    }
}

/// Builds a grid of `n` points on a torus of the given length.
pub fn make_grid(n: usize, length: f64) -> Result<Grid, GridError> {
    Grid::new(n, length)
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self, GridError> {
        Self::build(n, length, false)
    }

    /// Default torus of length 2π.
    pub fn periodic(n: usize) -> Result<Self, GridError> {
        Self::new(n, 2.0 * PI)
    }

    /// Same grid with the 2/3-rule filter on nonlinear products switched on or off.
    pub fn with_dealias(&self, dealias: bool) -> Self {
        Self::build(self.n(), self.length(), dealias).expect("validated at construction")
    }

    fn build(n: usize, length: f64, dealias: bool) -> Result<Self, GridError> {
        if !n.is_multiple_of(2) {
            return Err(GridError::OddCount(n));
        }
        if n < 16 {
            return Err(GridError::TooSmall(n));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(GridError::BadLength(length));
        }
        let scale = 2.0 * PI / length;
        let half = n / 2;
        let wavenumbers = (0..n)
            .map(|j| {
                let m = if j <= half { j as f64 } else { j as f64 - n as f64 };
                m * scale
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Self {
            inner: Arc::new(GridInner {
                n,
                length,
                dx: length / n as f64,
                wavenumbers,
                dealias,
                forward,
                inverse,
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn length(&self) -> f64 {
        self.inner.length
    }

    pub fn dx(&self) -> f64 {
        self.inner.dx
    }

    pub fn dealias(&self) -> bool {
        self.inner.dealias
    }

    /// Angular wavenumbers in FFT order; index `n/2` holds the (positive) Nyquist mode.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    /// Fundamental wavenumber `2π / length`.
    pub fn k1(&self) -> f64 {
        2.0 * PI / self.inner.length
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.inner.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n()).map(|j| self.x(j)).collect()
    }

    /// Samples `f` at the grid points.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.clone(),
            values: (0..self.n()).map(|j| f(self.x(j))).collect(),
        }
    }

    pub fn constant(&self, c: f64) -> Field {
        Field {
            grid: self.clone(),
            values: vec![c; self.n()],
        }
    }

    /// Normalized spectrum: `c_k = (1/n) Σ_j f_j e^{-i k x_j}`.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.inner.forward.process(&mut buf);
        let inv_n = 1.0 / self.n() as f64;
        for c in &mut buf {
            *c *= inv_n;
        }
        buf
    }

    /// Inverse of [`Grid::forward`], returning the real part.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inner.inverse.process(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    fn spectral_multiplier(&self, order: u32) -> Vec<Complex64> {
        let half = self.n() / 2;
        self.wavenumbers()
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                if j == half && order % 2 == 1 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k).powu(order)
                }
            })
            .collect()
    }

    /// Applies `(i k)^order` to raw samples.
    pub fn deriv_values(&self, values: &[f64], order: u32) -> Result<Vec<f64>, GridError> {
        if !(1..=4).contains(&order) {
            return Err(GridError::BadOrder(order));
        }
        let mut spec = self.forward(values);
        for (c, m) in spec.iter_mut().zip(self.spectral_multiplier(order)) {
            *c *= m;
        }
        Ok(self.inverse(spec))
    }

    /// First and second derivatives from a single forward transform.
    pub fn deriv12_values(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let spec = self.forward(values);
        let half = self.n() / 2;
        let mut d1 = spec.clone();
        let mut d2 = spec;
        for (j, &k) in self.wavenumbers().iter().enumerate() {
            d1[j] = if j == half {
                Complex64::new(0.0, 0.0)
            } else {
                d1[j] * Complex64::new(0.0, k)
            };
            d2[j] *= -k * k;
        }
        (self.inverse(d1), self.inverse(d2))
    }

    /// 2/3-rule projection: zeroes every mode with `|m| > n/3`.
    pub fn dealias_values(&self, values: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(values);
        let cutoff = self.n() / 3;
        let half = self.n() / 2;
        for (j, c) in spec.iter_mut().enumerate() {
            let m = if j <= half { j } else { self.n() - j };
            if m > cutoff {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse(spec)
    }

    /// `sqrt(length · Σ_k |k|^{2s} |c_k|²)`, the discrete counterpart of `‖∂ˢf‖_{L²}`.
    pub fn seminorm_values(&self, values: &[f64], s: u32) -> f64 {
        let spec = self.forward(values);
        let sum: f64 = spec
            .iter()
            .zip(self.wavenumbers())
            .map(|(c, &k)| {
                let weight = if s == 0 { 1.0 } else { k.abs().powi(2 * s as i32) };
                weight * c.norm_sqr()
            })
            .sum();
        (self.length() * sum).sqrt()
    }
}

/// Real samples on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n() {
            return Err(GridError::LengthMismatch {
                expected: grid.n(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Wraps samples without the finiteness scan; callers check separately.
    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn deriv(&self, order: u32) -> Result<Field, GridError> {
        let values = self.grid.deriv_values(&self.values, order)?;
        Ok(Field::from_raw(&self.grid, values))
    }

    /// Arithmetic mean, equal to the zero Fourier mode.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sobolev_seminorm(&self, s: u32) -> f64 {
        self.grid.seminorm_values(&self.values, s)
    }

    /// Grid quadrature `Σ f_j dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(Field::from_raw(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// First index holding a non-finite sample.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(64, 2.0 * PI).unwrap();
        assert_eq!(g.dx(), 2.0 * PI / 64.0);
        assert!((g.dx() * 64.0 - g.length()).abs() < 1e-15);

        let g = make_grid(16, 1.0).unwrap();
        assert_eq!(g.wavenumbers().len(), 16);
        for (j, &k) in g.wavenumbers().iter().enumerate() {
            let m = (k / (2.0 * PI)).round();
            assert!((k - 2.0 * PI * m).abs() < 1e-12, "mode {j}: {k}");
        }

        let err = make_grid(15, 2.0 * PI).unwrap_err();
        assert_eq!(err, GridError::OddCount(15));
        assert!(err.to_string().contains("n must be even"));
        assert_eq!(make_grid(8, 1.0).unwrap_err(), GridError::TooSmall(8));
        assert!(matches!(make_grid(32, 0.0), Err(GridError::BadLength(_))));
        assert!(matches!(make_grid(32, -1.0), Err(GridError::BadLength(_))));
    }

    #[test]
    fn wavenumber_layout_is_hermitian() {
        let g = Grid::periodic(32).unwrap();
        let k = g.wavenumbers();
        for j in 1..16 {
            assert_eq!(k[j], -k[32 - j]);
        }
        assert_eq!(k[16], 16.0);
    }

    #[test]
    fn deriv_examples() {
        let g = Grid::periodic(64).unwrap();
        let d = g.sample(f64::sin).deriv(1).unwrap();
        let exact = g.sample(f64::cos);
        assert!(max_err(d.values(), exact.values()) < 1e-12);

        for order in 1..=4 {
            let d = g.constant(2.5).deriv(order).unwrap();
            assert!(d.max_abs() < 1e-13);
        }

        let d = g.sample(|x| (3.0 * x).sin()).deriv(2).unwrap();
        let exact = g.sample(|x| -9.0 * (3.0 * x).sin());
        assert!(max_err(d.values(), exact.values()) < 1e-11);

        assert_eq!(g.constant(1.0).deriv(5).unwrap_err(), GridError::BadOrder(5));
        assert_eq!(g.constant(1.0).deriv(0).unwrap_err(), GridError::BadOrder(0));
    }

    #[test]
    fn third_and_fourth_derivatives() {
        let g = Grid::periodic(64).unwrap();
        let f = g.sample(|x| (2.0 * x).cos());
        let d3 = f.deriv(3).unwrap();
        let d4 = f.deriv(4).unwrap();
        let e3 = g.sample(|x| 8.0 * (2.0 * x).sin());
        let e4 = g.sample(|x| 16.0 * (2.0 * x).cos());
        assert!(max_err(d3.values(), e3.values()) < 1e-11);
        let e = max_err(d4.values(), e4.values());
        assert!(e / 16.0 < 1e-10, "fourth derivative relative error {e:e}");
    }

    #[test]
    fn mean_examples() {
        let g = Grid::periodic(64).unwrap();
        assert_eq!(g.constant(3.0).mean(), 3.0);
        assert!(g.sample(f64::sin).mean().abs() < 1e-15);
        assert!((g.sample(|x| 1.0 + 0.1 * (2.0 * x).cos()).mean() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn seminorm_examples() {
        let g = Grid::periodic(64).unwrap();
        assert!(g.constant(4.0).sobolev_seminorm(1) < 1e-14);
        assert!((g.sample(f64::sin).sobolev_seminorm(0) - PI.sqrt()).abs() < 1e-12);
        let f = g.sample(|x| (2.0 * x).sin());
        let ratio = f.sobolev_seminorm(1) / f.sobolev_seminorm(0);
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dealias_drops_high_modes_only() {
        let g = Grid::periodic(48).unwrap();
        let low = g.sample(|x| (5.0 * x).cos());
        let high = g.sample(|x| (20.0 * x).cos());
        assert!(max_err(&g.dealias_values(low.values()), low.values()) < 1e-14);
        assert!(g.dealias_values(high.values()).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn deriv12_matches_separate_calls() {
        let g = Grid::periodic(32).unwrap();
        let f = g.sample(|x| (x.sin()).exp());
        let (d1, d2) = g.deriv12_values(f.values());
        assert!(max_err(&d1, f.deriv(1).unwrap().values()) < 1e-13);
        assert!(max_err(&d2, f.deriv(2).unwrap().values()) < 1e-12);
    }

    #[test]
    fn field_validation() {
        let g = Grid::periodic(16).unwrap();
        assert!(matches!(
            Field::new(&g, vec![0.0; 15]),
            Err(GridError::LengthMismatch { expected: 16, got: 15 })
        ));
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(matches!(Field::new(&g, v), Err(GridError::NonFinite { index: 3, .. })));
        let other = Grid::periodic(32).unwrap();
        assert_eq!(
            g.constant(1.0).zip_with(&other.constant(1.0), |a, b| a + b),
            Err(GridError::GridMismatch)
        );
    }
}
