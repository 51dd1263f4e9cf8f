//! Energies, minimizers and existence thresholds for three mean-field variational models
//! with competing forces: the generalized liquid drop model, a flocking model with a
//! density cap, and the generalized Keller–Segel model with its relaxed (atom) form.
//!
//! All densities are radial and piecewise constant on a [`kernels::RadialGrid`].

pub mod energy;
pub mod error;
pub mod flocking;
pub mod geometry;
pub mod keller_segel;
pub mod kernels;
pub mod liquid_drop;
pub mod oracles;
pub mod sweep;

pub use energy::EnergyBreakdown;
pub use error::{Error, Result};
