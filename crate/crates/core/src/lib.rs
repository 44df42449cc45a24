//! Scale functions, spectra and quasi-stationary laws for Markov processes
//! without negative jumps, on a discrete grid.
//!
//! A [`Model`] bundles a state grid, a reference measure, the 0-scale kernel
//! `W` and the boundary case. [`scale`] evaluates `W^(q)` and `Z^(q)`,
//! [`spectral`] finds the zeros of the characteristic function, [`qsd`] turns
//! the leading zero into a quasi-stationary law, and [`verify`] provides
//! independent oracles (dense eigensolves, uniformization, simulation).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod model;
pub mod models;
pub mod qsd;
pub mod scale;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use model::{BoundaryCase, ComplexRate, Model};
