//! Brute-force references for tests: Monte Carlo double integrals, exhaustive projections on
//! tiny grids, closed-form ball energies and the semi-explicit α = 4 atom.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::energy::EnergyBreakdown;
use crate::error::{domain, Error, Result};
use crate::flocking::FlockParams;
use crate::geometry::{ball_radius, ball_volume};
use crate::keller_segel::GksParams;
use crate::kernels::{PowerKernel, RadialDensity, RadialGrid};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 1_000_000, seed: 0x5eed }
    }
}

/// Densities the sampler can draw from.
#[derive(Debug, Clone)]
pub enum SampledDensity {
    /// `ρ = (mass / |B_R|) 1_{B_R}`.
    Ball { dim: usize, radius: f64, mass: f64 },
    Radial(RadialDensity),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
}

struct Sampler {
    dim: usize,
    mass: f64,
    /// Cumulative mass fractions and shell edges; a single shell for a ball.
    cumulative: Vec<f64>,
    edges: Vec<f64>,
}

impl Sampler {
    fn new(rho: &SampledDensity) -> Result<Self> {
        match rho {
            SampledDensity::Ball { dim, radius, mass } => {
                if *dim == 0 || !(*radius > 0.0) || !(*mass > 0.0) {
                    return domain(format!("invalid ball: N = {dim}, R = {radius}, m = {mass}"));
                }
                Ok(Self { dim: *dim, mass: *mass, cumulative: vec![1.0], edges: vec![0.0, *radius] })
            }
            SampledDensity::Radial(d) => {
                if d.values().iter().any(|v| *v < 0.0) {
                    return Err(Error::Constraint("density has negative values".into()));
                }
                let mass = d.mass();
                if !(mass > 0.0) {
                    return domain("density has no mass to sample");
                }
                let mut acc = 0.0;
                let cumulative = d
                    .values()
                    .iter()
                    .zip(d.grid().w())
                    .map(|(v, w)| {
                        acc += v * w;
                        acc / mass
                    })
                    .collect();
                Ok(Self { dim: d.grid().dim(), mass, cumulative, edges: d.grid().edges().to_vec() })
            }
        }
    }

    fn point(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|c| *c < u).min(self.cumulative.len() - 1);
        let n = self.dim as f64;
        let (a, b) = (self.edges[i].powf(n), self.edges[i + 1].powf(n));
        let r = (a + rng.random::<f64>() * (b - a)).powf(1.0 / n);
        let mut norm = 0.0;
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
            norm += *x * *x;
        }
        let scale = r / norm.sqrt();
        out.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Estimate of `½∬ρ(x)|x−y|^p ρ(y)` from independent pairs, with its standard error.
///
/// Samples are split into fixed chunks, each with its own ChaCha stream, and reduced in chunk
/// order, so the result is identical for a given seed regardless of thread count.
pub fn mc_double_integral(rho: &SampledDensity, kernel: PowerKernel, cfg: &McConfig) -> Result<McEstimate> {
    if cfg.samples < 10_000 {
        return domain(format!("at least 10⁴ samples required, got {}", cfg.samples));
    }
    let sampler = Sampler::new(rho)?;
    kernel.check(sampler.dim)?;
    let p = kernel.exponent;
    let chunks = cfg.samples.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(cfg.samples - c * CHUNK);
            let (mut x, mut y) = (vec![0.0; sampler.dim], vec![0.0; sampler.dim]);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                sampler.point(&mut rng, &mut x);
                sampler.point(&mut rng, &mut y);
                let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                let k = d2.powf(0.5 * p);
                s += k;
                s2 += k * k;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let n = cfg.samples as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let factor = 0.5 * sampler.mass * sampler.mass;
    Ok(McEstimate { estimate: factor * mean, std_error: factor * (var / n).sqrt(), samples: cfg.samples, seed: cfg.seed })
}

/// `½∬_{B_1×B_1} |x−y|^p dx dy` in closed form.
pub fn ball_kernel_constant(dim: usize, p: f64) -> Result<f64> {
    if dim == 0 {
        return domain("dimension must be at least 1");
    }
    PowerKernel { exponent: p }.check(dim)?;
    let n = dim as f64;
    let log = (n + p) * 2f64.ln() + ln_gamma(n / 2.0 + 1.0) + ln_gamma((n + p + 1.0) / 2.0)
        - ln_gamma(n + 1.0 + p / 2.0);
    Ok(0.5 * ball_volume(dim).powi(2) * n * log.exp() / ((n + p) * PI.sqrt()))
}

/// Minimizer of `Σ w (ρ − v)²` over `{0 ≤ ρ ≤ 1, Σ w ρ = m}` by enumerating which cells sit at
/// 0, at 1 or strictly between.
pub fn brute_force_bathtub(grid: &RadialGrid, v: &[f64], mass: f64) -> Result<RadialDensity> {
    let n = grid.len();
    if n > 12 {
        return domain(format!("enumeration is limited to 12 cells, got {n}"));
    }
    if v.len() != n {
        return Err(Error::GridMismatch(format!("{} values for {n} cells", v.len())));
    }
    let w = grid.w();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut state = vec![0u8; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let (mut wf, mut wv, mut full) = (0.0, 0.0, 0.0);
        for i in 0..n {
            match state[i] {
                1 => {
                    wf += w[i];
                    wv += w[i] * v[i];
                }
                2 => full += w[i],
                _ => {}
            }
        }
        let rho: Vec<f64> = if wf > 0.0 {
            let mu = (wv + full - mass) / wf;
            let rho: Vec<f64> = (0..n).map(|i| [0.0, v[i] - mu, 1.0][state[i] as usize]).collect();
            if rho.iter().any(|r| !(-1e-12..=1.0 + 1e-12).contains(r)) {
                continue;
            }
            rho
        } else {
            if (full - mass).abs() > 1e-12 * mass.max(1.0) {
                continue;
            }
            state.iter().map(|s| if *s == 2 { 1.0 } else { 0.0 }).collect()
        };
        let cost: f64 = (0..n).map(|i| w[i] * (rho[i] - v[i]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, rho));
        }
    }
    let (_, rho) = best.ok_or_else(|| Error::Infeasible(format!("mass {mass} does not fit under the cap")))?;
    RadialDensity::new(grid.clone(), rho.into_iter().map(|r| r.clamp(0.0, 1.0)).collect())
}

/// Model whose energy is evaluated on `h 1_{B_R}` in closed form.
#[derive(Debug, Clone, Copy)]
pub enum ScanModel {
    /// Candidates satisfy `h ≤ 1` and `h |B_R| = m`.
    Flocking(FlockParams),
    /// Candidates carry unit mass.
    Gks(GksParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallCandidate {
    pub radius: f64,
    pub height: f64,
    pub energy: EnergyBreakdown,
}

/// Closed-form energy of `h 1_{B_R}`.
pub fn ball_candidate_energy(model: &ScanModel, radius: f64, height: f64) -> Result<EnergyBreakdown> {
    if !(radius > 0.0 && height > 0.0) {
        return domain(format!("radius and height must be positive, got R = {radius}, h = {height}"));
    }
    let self_energy = |dim: usize, p: f64| -> Result<f64> {
        Ok(height * height * radius.powf(2.0 * dim as f64 + p) * ball_kernel_constant(dim, p)?)
    };
    let e = match model {
        ScanModel::Flocking(f) => EnergyBreakdown {
            repulsive: self_energy(f.dim, -f.lambda)?,
            attractive: self_energy(f.dim, f.alpha)?,
            ..Default::default()
        },
        ScanModel::Gks(g) => EnergyBreakdown {
            entropy: -height.powf(g.q) * ball_volume(g.dim) * radius.powi(g.dim as i32),
            attractive: self_energy(g.dim, g.alpha)?,
            ..Default::default()
        },
    };
    Ok(e.summed())
}

/// Best `h 1_{B_R}` of the model's mass over the given heights (heights above the cap are
/// skipped for flocking).
pub fn constant_on_ball_scan(model: &ScanModel, heights: &[f64]) -> Result<BallCandidate> {
    let (dim, mass, cap) = match model {
        ScanModel::Flocking(f) => (f.dim, f.mass, 1.0),
        ScanModel::Gks(g) => (g.dim, 1.0, f64::INFINITY),
    };
    heights
        .iter()
        .filter(|h| **h > 0.0 && **h <= cap)
        .map(|&h| {
            let radius = ball_radius(dim, mass / h);
            Ok(BallCandidate { radius, height: h, energy: ball_candidate_energy(model, radius, h)? })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| a.energy.total.total_cmp(&b.energy.total))
        .ok_or_else(|| Error::Domain("empty scan range".into()))
}

/// `n` heights spaced geometrically in `[lo, hi]`.
pub fn geometric_heights(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo * (ratio * i as f64).exp() }).collect()
}

/// Atom of the semi-explicit relaxed minimizer for `α = 4`:
/// `ρ = (q / (|x|⁴ + c|x|²))^κ`, `c = 2(1 + 2/N) ∫|x|²ρ`, whose mass is
/// `N(2κ − N/2 − 1) / (2(N+2)(N/2 − κ))`. Zero when that mass reaches 1.
pub fn alpha4_semi_explicit_atom(dim: usize, q: f64) -> Result<f64> {
    let n = dim as f64;
    if !(q > 0.0 && q < 1.0) {
        return domain(format!("q must lie in (0, 1), got {q}"));
    }
    let kappa = 1.0 / (1.0 - q);
    let x = n / 2.0 - kappa;
    let y = 2.0 * kappa - n / 2.0 - 1.0;
    if !(x > 0.0 && y > 0.0) {
        return domain(format!("no singular profile for N = {dim}, q = {q}: need (N+2)/4 < κ < N/2"));
    }
    let mass = n * y / (2.0 * (n + 2.0) * x);
    Ok((1.0 - mass).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ball_constant_in_one_dimension() {
        // ½∬_{(−1,1)²}|x−y|^p = 2^{2+p}/((1+p)(2+p))
        for p in [-0.5, 1.0, 2.0, 3.3] {
            let exact = 2f64.powf(2.0 + p) / ((1.0 + p) * (2.0 + p));
            assert_relative_eq!(ball_kernel_constant(1, p).unwrap(), exact, max_relative = 1e-13);
        }
        assert_relative_eq!(ball_kernel_constant(3, -1.0).unwrap(), 16.0 * PI * PI / 15.0, max_relative = 1e-13);
    }

    #[test]
    fn semi_explicit_atom_vanishes_at_threshold() {
        let qc = 11.0 / 18.0;
        assert!(alpha4_semi_explicit_atom(6, qc).unwrap().abs() < 1e-12);
        assert!(alpha4_semi_explicit_atom(6, 0.605).unwrap() > 0.1);
        assert_eq!(alpha4_semi_explicit_atom(6, 0.62).unwrap(), 0.0);
    }

    #[test]
    fn sampler_respects_shells() {
        let s = Sampler::new(&SampledDensity::Ball { dim: 3, radius: 2.0, mass: 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = [0.0; 3];
        for _ in 0..1000 {
            s.point(&mut rng, &mut x);
            assert!(x.iter().map(|v| v * v).sum::<f64>() <= 4.0 + 1e-12);
        }
    }
}
