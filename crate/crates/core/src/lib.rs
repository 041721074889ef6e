//! Simulation and analysis of correlation post-selected imaging through thin
//! scattering layers with spatially entangled photon pairs.

pub mod error;
pub mod events;
pub mod experiments;
pub mod fit;
pub mod coincidence;
pub mod config;
pub mod grid;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod screens;
pub mod source;

pub use error::{Error, Result};
pub use grid::{BiphotonState, Direction, Domain, Field1D, Fourier, GridSpec, C64};
