//! Volumes and surface measures of balls and spheres in R^N.

use statrs::function::gamma::{gamma, ln_gamma};
use std::f64::consts::PI;

/// Surface measure |S^{N-1}| of the unit sphere in R^N (|S^0| = 2).
pub fn sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * PI.powf(n / 2.0) / gamma(n / 2.0)
}

/// Lebesgue measure |B_1| of the unit ball in R^N.
pub fn ball_volume(dim: usize) -> f64 {
    sphere_area(dim) / dim as f64
}

/// Radius of the ball of volume `volume` in R^N.
pub fn ball_radius(dim: usize, volume: f64) -> f64 {
    (volume / ball_volume(dim)).powf(1.0 / dim as f64)
}

/// `∫_0^π sin^k θ dθ`.
pub(crate) fn sine_power_integral(k: f64) -> f64 {
    PI.sqrt() * (ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0 + 1.0)).exp()
}
