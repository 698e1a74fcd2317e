//! Shared-parameter joint modeling of cycle-level geometric features of a
//! longitudinal process and a discrete time-to-event measured on a coarser,
//! nested timescale.

pub mod cli;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod features;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod prediction;
pub mod rng;
pub mod simulation;

pub use error::{Error, ErrorCategory, Result};
