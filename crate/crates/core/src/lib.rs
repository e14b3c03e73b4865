// SPDX-License-Identifier: Apache-2.0

//! Pseudo-spectral solver and verification harness for the planar
//! compressible magnetic relaxation system.

pub mod audit;
pub mod config;
pub mod converge;
pub mod diagnostics;
pub mod experiment;
pub mod fmt;
pub mod grid;
pub mod integrator;
pub mod levels;
pub mod model;
pub mod quad;
pub mod relaxvars;
pub mod scenario;

pub use grid::{Field, Grid, GridError};
pub use model::{ModelError, Params, State};
