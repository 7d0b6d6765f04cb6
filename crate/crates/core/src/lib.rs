//! Fixed-bed catalytic reactor simulation and grid-structured surrogate
//! models that reconstruct unmeasured reactor states from sparse
//! temperature measurements.

pub mod autodiff;
pub mod dataset;
pub mod cells;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod grid_model;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
