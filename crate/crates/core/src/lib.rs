//! Design-based estimation of the mean curve of a finite population of
//! discretized trajectories, from an unequal-probability sample whose curves
//! are only partially observed.

pub mod bandwidth;
pub mod design;
pub mod error;
pub mod estimators;
pub mod grid_kernel;
pub mod oracle_sim;
pub mod population;
pub mod response;
pub mod variance;

pub use error::{Error, Result};
