//! Radial reduction and quadrature of power-law interaction energies.

mod grid;
pub mod quadrature;
mod sphere;
mod table;

pub use grid::{GridSpec, RadialDensity, RadialGrid};
pub use sphere::{angular_kernel_average, PowerKernel};
pub use table::{interaction_energy, potential, AngularAverageTable};
