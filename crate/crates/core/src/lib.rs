//! Stacked intelligent metasurface (SIM) downlink simulator.
//!
//! Builds the layered diffraction model of a SIM-equipped base station,
//! evaluates the statistical-CSI achievable sum spectral efficiency in
//! closed form, and maximizes it by alternating projected-gradient phase
//! updates with weighted-MMSE power allocation.

pub mod ao;
pub mod cascade;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phase;
pub mod power;
pub mod propagation;
pub mod run;
pub mod scene;

pub use error::{Result, SimError};
