//! Tracer-kinetics toolkit for dynamic PET.
//!
//! The crate simulates dynamic PET data from the two-tissue compartment
//! model, estimates kinetic parameters with graphical analysis and nonlinear
//! least squares, and trains an invertible network that maps the early
//! frames of a scan to kinetic parameter images from which the full
//! sequence is rebuilt.

pub mod config;
pub mod error;
pub mod estimation;
pub mod graphical;
pub mod image;
pub mod inn;
pub mod io;
pub mod kinetics;
pub mod metrics;
pub mod phantom;
pub mod training;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
