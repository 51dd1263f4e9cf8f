//! Ball and split-ball energies of the generalized liquid drop model, the thresholds
//! `m_*` and `m_c^stab`, and the complete one-dimensional solution.
//!
//! In N ≥ 2 nothing here minimizes over general sets: ball configurations give upper
//! bounds, and the thresholds follow from the ball energy in closed form.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::energy::EnergyBreakdown;
use crate::error::{domain, Result};
use crate::geometry::{ball_volume, sphere_area};
use crate::kernels::{GridSpec, PowerKernel, RadialDensity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GldParams {
    pub dim: usize,
    pub lambda: f64,
    pub mass: f64,
}

impl GldParams {
    pub fn new(dim: usize, lambda: f64, mass: f64) -> Result<Self> {
        check_lambda(dim, lambda)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return domain(format!("mass must be positive, got {mass}"));
        }
        Ok(Self { dim, lambda, mass })
    }
}

fn check_lambda(dim: usize, lambda: f64) -> Result<()> {
    if dim == 0 {
        return domain("dimension must be at least 1");
    }
    if !(lambda > 0.0 && lambda < dim as f64) {
        return domain(format!("λ must lie in (0, N) = (0, {dim}), got {lambda}"));
    }
    Ok(())
}

/// `I_N(λ) = ½∬_{B_1×B_1} |x−y|^{−λ} dx dy`.
///
/// Closed form in one dimension; kernel quadrature on the unit ball otherwise. Cached per (N, λ).
pub fn ball_riesz_constant(dim: usize, lambda: f64) -> Result<f64> {
    check_lambda(dim, lambda)?;
    if dim == 1 {
        return Ok(2f64.powf(2.0 - lambda) / ((1.0 - lambda) * (2.0 - lambda)));
    }
    static CACHE: OnceLock<RwLock<HashMap<(usize, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (dim, lambda.to_bits());
    if let Some(v) = cache.read().unwrap().get(&key) {
        return Ok(*v);
    }
    // Constant density fills every cell, so the grid only affects quadrature, not representation.
    let grid = GridSpec::uniform(dim, 24, 1.0).build()?;
    let rho = RadialDensity::ball(grid, 1.0, 1.0);
    let value = crate::kernels::interaction_energy(&rho, PowerKernel::riesz(lambda))?;
    cache.write().unwrap().insert(key, value);
    Ok(value)
}

/// Energy of the ball of volume `mass`, using `I_N(λ)` from [`ball_riesz_constant`].
pub fn ball_energy(params: &GldParams) -> Result<EnergyBreakdown> {
    let i_n = ball_riesz_constant(params.dim, params.lambda)?;
    Ok(ball_energy_with_constant(params, i_n))
}

/// Ball energy with a caller-supplied `I_N(λ)`.
pub fn ball_energy_with_constant(params: &GldParams, riesz_constant: f64) -> EnergyBreakdown {
    let n = params.dim as f64;
    let m = params.mass;
    let perimeter = n.powf((n - 1.0) / n) * sphere_area(params.dim).powf(1.0 / n) * m.powf((n - 1.0) / n);
    let repulsive = (m / ball_volume(params.dim)).powf((2.0 * n - params.lambda) / n) * riesz_constant;
    EnergyBreakdown { perimeter, repulsive, ..Default::default() }.summed()
}

/// Pieces of a split configuration, placed at infinite mutual distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSplit {
    masses: Vec<f64>,
}

impl BallSplit {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return domain("a split needs at least one piece and all piece masses must be positive");
        }
        Ok(Self { masses })
    }
    pub fn equal(mass: f64, pieces: usize) -> Result<Self> {
        Self::new(vec![mass / pieces as f64; pieces])
    }
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// `Σ_k E[ball of volume m_k]`: an upper bound for the ground-state energy at mass `m`.
pub fn split_energy(params: &GldParams, split: &BallSplit) -> Result<f64> {
    let total = split.total();
    if (total - params.mass).abs() > 1e-12 * params.mass {
        return domain(format!("split masses sum to {total}, expected {}", params.mass));
    }
    let i_n = ball_riesz_constant(params.dim, params.lambda)?;
    Ok(split
        .masses()
        .iter()
        .map(|&m| ball_energy_with_constant(&GldParams { mass: m, ..*params }, i_n).total)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GldThresholds {
    pub m_star: f64,
    pub m_c_stab: f64,
}

fn threshold(dim: usize, lambda: f64, prefactor: f64, riesz_constant: f64) -> f64 {
    let n = dim as f64;
    let bv = ball_volume(dim);
    let per = sphere_area(dim);
    (prefactor * per / riesz_constant).powf(n / (n - lambda + 1.0)) * bv
}

/// Mass at which one ball and two half-balls at infinite distance have equal energy.
pub fn m_star(dim: usize, lambda: f64) -> Result<f64> {
    let i_n = ball_riesz_constant(dim, lambda)?;
    let m = m_star_with_constant(dim, lambda, i_n)?;
    debug_assert!({
        let e = |m: f64| charmstar_difference(dim, lambda, m, i_n);
        e(m * (1.0 - 1e-6)) < 0.0 && e(m * (1.0 + 1e-6)) > 0.0
    });
    Ok(m)
}

pub fn m_star_with_constant(dim: usize, lambda: f64, riesz_constant: f64) -> Result<f64> {
    check_lambda(dim, lambda)?;
    let n = dim as f64;
    let pre = (2f64.powf(1.0 / n) - 1.0) / (1.0 - 2f64.powf(-(n - lambda) / n));
    Ok(threshold(dim, lambda, pre, riesz_constant))
}

/// Mass above which the ball is unstable under volume-preserving perturbations.
pub fn m_c_stab(dim: usize, lambda: f64) -> Result<f64> {
    m_c_stab_with_constant(dim, lambda, ball_riesz_constant(dim, lambda)?)
}

pub fn m_c_stab_with_constant(dim: usize, lambda: f64, riesz_constant: f64) -> Result<f64> {
    check_lambda(dim, lambda)?;
    let n = dim as f64;
    let pre = (n + 1.0) / (lambda * (n - lambda));
    Ok(threshold(dim, lambda, pre, riesz_constant))
}

pub fn thresholds(dim: usize, lambda: f64) -> Result<GldThresholds> {
    Ok(GldThresholds { m_star: m_star(dim, lambda)?, m_c_stab: m_c_stab(dim, lambda)? })
}

/// One-dimensional `m_*` from the interval decomposition:
/// `(2(1−λ)(2−λ) / (1 − 2^{λ−1}))^{1/(2−λ)}`.
pub fn m_star_1d(lambda: f64) -> Result<f64> {
    check_lambda(1, lambda)?;
    Ok((2.0 * (1.0 - lambda) * (2.0 - lambda) / (1.0 - 2f64.powf(lambda - 1.0))).powf(1.0 / (2.0 - lambda)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDimSolution {
    pub energy: f64,
    /// Optimal number of intervals (smallest on ties).
    pub k_opt: u64,
    pub piece_mass: f64,
}

/// Exact ground state of the 1D model: `min_K 2K + K^{λ−1} m^{2−λ} / ((1−λ)(2−λ))`,
/// attained with `K` equal intervals.
pub fn solve_1d(lambda: f64, mass: f64) -> Result<OneDimSolution> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return domain(format!("λ must lie in (0, 1) in one dimension, got {lambda}"));
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return domain(format!("mass must be positive, got {mass}"));
    }
    let c = mass.powf(2.0 - lambda) / ((1.0 - lambda) * (2.0 - lambda));
    let f = |k: u64| 2.0 * k as f64 + (k as f64).powf(lambda - 1.0) * c;
    let mut best = (1u64, f(1));
    let mut prev = best.1;
    let mut k = 1u64;
    // f is convex in K, so the scan stops at the first strict increase.
    loop {
        k += 1;
        let v = f(k);
        if v < best.1 - 1e-12 * best.1.abs() {
            best = (k, v);
        }
        if v > prev {
            break;
        }
        prev = v;
    }
    Ok(OneDimSolution { energy: best.1, k_opt: best.0, piece_mass: mass / best.0 as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

fn charmstar_difference(dim: usize, lambda: f64, mass: f64, i_n: f64) -> f64 {
    let e = |m: f64| ball_energy_with_constant(&GldParams { dim, lambda, mass: m }, i_n).total;
    e(mass) - 2.0 * e(mass / 2.0)
}

/// Sign of `E[ball(m)] − 2 E[ball(m/2)]`, zero within `1e-9` relative.
pub fn charmstar_sign(dim: usize, lambda: f64, mass: f64) -> Result<Sign> {
    charmstar_sign_with_tolerance(dim, lambda, mass, 1e-9)
}

pub fn charmstar_sign_with_tolerance(dim: usize, lambda: f64, mass: f64, rtol: f64) -> Result<Sign> {
    let params = GldParams::new(dim, lambda, mass)?;
    let i_n = ball_riesz_constant(dim, lambda)?;
    let whole = ball_energy_with_constant(&params, i_n).total;
    let diff = charmstar_difference(dim, lambda, mass, i_n);
    Ok(if diff.abs() <= rtol * whole.abs() {
        Sign::Zero
    } else if diff < 0.0 {
        Sign::Negative
    } else {
        Sign::Positive
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn m_star_33() -> f64 {
        5.0 * (2f64.powf(1.0 / 3.0) - 1.0) / (1.0 - 2f64.powf(-2.0 / 3.0))
    }

    #[test]
    fn one_dim_ball_energy() {
        for &(lambda, m) in &[(0.5, 1.0), (0.2, 3.0), (0.9, 0.4)] {
            let e = ball_energy(&GldParams::new(1, lambda, m).unwrap()).unwrap();
            assert_relative_eq!(e.perimeter, 2.0, epsilon = 1e-14);
            assert_relative_eq!(e.total, 2.0 + m.powf(2.0 - lambda) / ((1.0 - lambda) * (2.0 - lambda)), max_relative = 1e-13);
        }
    }

    #[test]
    fn coulomb_unit_ball_energy() {
        let e = ball_energy(&GldParams::new(3, 1.0, 4.0 * PI / 3.0).unwrap()).unwrap();
        assert_relative_eq!(e.perimeter, 4.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(e.repulsive, 16.0 * PI * PI / 15.0, max_relative = 1e-9);
    }

    #[test]
    fn riesz_term_scales_homogeneously() {
        let e1 = ball_energy(&GldParams::new(2, 0.7, 1.0).unwrap()).unwrap();
        let e5 = ball_energy(&GldParams::new(2, 0.7, 5.0).unwrap()).unwrap();
        assert_relative_eq!(e5.repulsive / e1.repulsive, 5f64.powf((4.0 - 0.7) / 2.0), max_relative = 1e-13);
    }

    #[test]
    fn split_energies() {
        let p = GldParams::new(3, 1.0, 2.5).unwrap();
        let whole = ball_energy(&p).unwrap().total;
        assert_eq!(split_energy(&p, &BallSplit::equal(2.5, 1).unwrap()).unwrap(), whole);
        let ms = m_star(3, 1.0).unwrap();
        let p = GldParams::new(3, 1.0, ms).unwrap();
        assert_relative_eq!(
            split_energy(&p, &BallSplit::equal(ms, 2).unwrap()).unwrap(),
            ball_energy(&p).unwrap().total,
            max_relative = 1e-12
        );
        let p = GldParams::new(1, 0.5, 4.0).unwrap();
        let v = split_energy(&p, &BallSplit::equal(4.0, 2).unwrap()).unwrap();
        assert_relative_eq!(v, 4.0 + (4.0 / 3.0) * 8.0 / 2f64.sqrt(), max_relative = 1e-13);
        assert!(split_energy(&p, &BallSplit::equal(3.0, 2).unwrap()).is_err());
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(m_star(3, 1.0).unwrap(), m_star_33(), max_relative = 1e-9);
        assert_relative_eq!(m_c_stab(3, 1.0).unwrap(), 10.0, max_relative = 1e-9);
        assert_relative_eq!(m_star(1, 0.5).unwrap(), 2.971, max_relative = 2e-4);
        assert_relative_eq!(m_c_stab(1, 0.5).unwrap(), 5.24, max_relative = 1e-3);
        let ms = m_star_1d(0.3).unwrap();
        assert_relative_eq!(m_star(1, 0.3).unwrap(), ms, max_relative = 1e-12);
    }

    fn gamma_ball_constant(dim: usize, lambda: f64) -> f64 {
        use statrs::function::gamma::gamma;
        let (n, p) = (dim as f64, -lambda);
        let mean = 2f64.powf(n + p) * n * gamma(n / 2.0 + 1.0) * gamma((n + p + 1.0) / 2.0)
            / ((n + p) * PI.sqrt() * gamma(n + 1.0 + p / 2.0));
        0.5 * ball_volume(dim).powi(2) * mean
    }

    #[test]
    fn ball_constant_matches_gamma_form() {
        for &(dim, lambda) in &[(2, 0.5), (2, 1.5), (3, 1.0), (3, 2.2), (4, 1.0), (4, 3.5), (5, 2.0)] {
            let v = ball_riesz_constant(dim, lambda).unwrap();
            assert_relative_eq!(v, gamma_ball_constant(dim, lambda), max_relative = 1e-8);
        }
    }

    #[test]
    fn m_star_below_m_c_stab() {
        for dim in 1..=4 {
            for k in 1..8 {
                let lambda = dim as f64 * k as f64 / 8.0;
                if dim == 1 || lambda != 1.0 {
                    let t = thresholds(dim, lambda).unwrap();
                    assert!(t.m_star < t.m_c_stab, "N={dim} λ={lambda}: {t:?}");
                }
            }
        }
    }

    #[test]
    fn solve_1d_examples() {
        let s = solve_1d(0.5, 1.0).unwrap();
        assert_eq!(s.k_opt, 1);
        assert_relative_eq!(s.energy, 10.0 / 3.0, max_relative = 1e-14);
        let s = solve_1d(0.5, 4.0).unwrap();
        assert_eq!(s.k_opt, 2);
        assert_relative_eq!(s.piece_mass, 2.0);
        assert_relative_eq!(s.energy, 11.5425, max_relative = 1e-4);
        let s = solve_1d(0.5, m_star_1d(0.5).unwrap()).unwrap();
        assert_eq!(s.k_opt, 1);
        assert!(solve_1d(1.0, 1.0).is_err());
    }

    #[test]
    fn solve_1d_matches_enumeration() {
        for &lambda in &[0.1, 0.5, 0.8] {
            for &m in &[0.5f64, 3.0, 20.0, 150.0] {
                let c = m.powf(2.0 - lambda) / ((1.0 - lambda) * (2.0 - lambda));
                let (k, v) = (1..2000u64)
                    .map(|k| (k, 2.0 * k as f64 + (k as f64).powf(lambda - 1.0) * c))
                    .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
                let s = solve_1d(lambda, m).unwrap();
                assert_eq!(s.k_opt, k);
                assert_eq!(s.energy, v);
            }
        }
    }

    #[test]
    fn charmstar_signs() {
        assert_eq!(charmstar_sign(3, 1.0, 2.0).unwrap(), Sign::Negative);
        assert_eq!(charmstar_sign(3, 1.0, m_star(3, 1.0).unwrap()).unwrap(), Sign::Zero);
        assert_eq!(charmstar_sign_with_tolerance(3, 1.0, 3.512, 1e-4).unwrap(), Sign::Zero);
        assert_eq!(charmstar_sign(3, 1.0, 5.0).unwrap(), Sign::Positive);
    }

    #[test]
    fn rejects_out_of_range_lambda() {
        assert!(GldParams::new(3, 3.0, 1.0).is_err());
        assert!(m_star(2, 0.0).is_err());
        assert!(m_c_stab(1, 1.5).is_err());
    }
}
