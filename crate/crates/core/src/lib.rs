//! Simulation and analysis of cell populations on the unit circle with
//! responsive/signaling (RS) feedback.
//!
//! * [`model`]: regions, response functions, populations.
//! * [`simulator`]: exact event-driven and stochastic integration.
//! * [`cluster`]: groups, gaps, isolation and histogram cluster counts.
//! * [`retmap`]: the cluster return map, piecewise-affine composition and
//!   fixed-point classification.
//! * [`cyclic`]: cyclic `M + 1` cluster solutions and their spectra.
//! * [`pde`]: steady density profile of the continuum model.
//! * [`experiments`]: reproducible parameter sweeps and data export.

pub mod error;
pub mod model;
pub mod simulator;
pub mod cluster;
pub mod retmap;
pub mod cyclic;
pub mod pde;
pub mod experiments;

pub use error::{Error, Result};
