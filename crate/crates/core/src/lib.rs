//! Positive semidefinite Ornstein-Uhlenbeck type processes.
//!
//! The library builds matrix-valued OU processes driven by matrix
//! subordinators: construction of the linear drift operator `X -> AX + XA^T`
//! and its lifted forms, jump-measure models for the driving subordinator,
//! exact pathwise simulation, stationary moment formulas, and
//! method-of-moments calibration that inverts those formulas.
//!
//! Entry points:
//! - [`driftop::DriftOperator`] for the drift and its semigroup,
//! - [`subordinators::SubordinatorModel`] for driver families,
//! - [`oup::OuProcessSpec`] for simulation and moments,
//! - [`calibration`] for fitting and consistency checks.

pub mod calibration;
pub mod driftop;
pub mod error;
pub mod oup;
pub mod quad;
pub mod rng;
pub mod subordinators;
pub mod symcore;

pub use error::{Error, Result};
pub use symcore::{HalfVec, PsdMat, SymMat};
