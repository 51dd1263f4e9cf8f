//! The flocking model: Riesz repulsion plus power-law attraction, over densities
//! `0 ≤ ρ ≤ 1` of fixed mass, and the same energy over probability densities without the cap.
//!
//! Minimizers are radial here by construction; symmetry-breaking minimizers cannot be detected.

pub(crate) mod qp;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyBreakdown;
use crate::error::{domain, Error, Result};
use crate::geometry::ball_radius;
use crate::kernels::{AngularAverageTable, GridSpec, PowerKernel, RadialDensity, RadialGrid};
use qp::{QpOptions, Quadratic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockParams {
    pub dim: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub mass: f64,
}

impl FlockParams {
    pub fn new(dim: usize, lambda: f64, alpha: f64, mass: f64) -> Result<Self> {
        check_exponents(dim, lambda, alpha)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return domain(format!("mass must be positive, got {mass}"));
        }
        Ok(Self { dim, lambda, alpha, mass })
    }
}

fn check_exponents(dim: usize, lambda: f64, alpha: f64) -> Result<()> {
    if dim == 0 {
        return domain("dimension must be at least 1");
    }
    if !(lambda > 0.0 && lambda < dim as f64) {
        return domain(format!("λ must lie in (0, N) = (0, {dim}), got {lambda}"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return domain(format!("α must be positive, got {alpha}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Liquid,
    Intermediate,
    Solid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabel {
    pub phase: Phase,
    pub max_density: f64,
    /// `|{ρ ≥ 1 − tol}|`
    pub plateau_measure: f64,
    /// `|{tol < ρ < 1 − tol}|`
    pub intermediate_measure: f64,
    /// `|{ρ > tol}|`
    pub support_measure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTolerances {
    pub value: f64,
    /// Intermediate measure allowed in a solid, relative to the mass.
    pub measure: f64,
}

impl Default for PhaseTolerances {
    fn default() -> Self {
        Self { value: 1e-3, measure: 1e-3 }
    }
}

/// Solid if the intermediate set is negligible or is the one cell at the plateau edge;
/// Liquid if `max ρ ≤ 1 − tol`; Intermediate otherwise.
pub fn classify_phase(rho: &RadialDensity, tol: PhaseTolerances) -> PhaseLabel {
    let w = rho.grid().w();
    let v = rho.values();
    let t = tol.value;
    let (mut plateau, mut mid, mut support) = (0.0, 0.0, 0.0);
    let mut mid_cells = Vec::new();
    for (i, (&x, &wi)) in v.iter().zip(w).enumerate() {
        if x > t {
            support += wi;
        }
        if x >= 1.0 - t {
            plateau += wi;
        } else if x > t {
            mid += wi;
            mid_cells.push(i);
        }
    }
    let max_density = rho.max();
    let mass = rho.mass();
    // A sharp interface inside one cell shows up as a single partial cell after a solid core.
    let interface_cell = match mid_cells.as_slice() {
        [i] => *i > 0 && v[..*i].iter().all(|&x| x >= 1.0 - t) && v[i + 1..].iter().all(|&x| x <= t),
        _ => false,
    };
    let phase = if max_density <= 1.0 - t {
        Phase::Liquid
    } else if mid <= tol.measure * mass || interface_cell {
        Phase::Solid
    } else {
        Phase::Intermediate
    };
    PhaseLabel { phase, max_density, plateau_measure: plateau, intermediate_measure: mid, support_measure: support }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Characteristic function of the ball of volume `m`.
    Ball,
    /// `m` times the minimizer of the uncapped problem, projected onto the constraint set.
    Measure,
    /// Constant density on the whole grid.
    Uniform,
    /// All of the above; the lowest final energy wins.
    Best,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Grid cells (uniform layout).
    pub cells: usize,
    /// Outer radius; chosen from the mass when absent.
    pub rmax: Option<f64>,
    pub max_iter: usize,
    pub energy_tol: f64,
    pub kkt_tol: f64,
    /// Active-set Newton step every this many iterations (0 disables).
    pub polish_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { cells: GridSpec::DEFAULT_N, rmax: None, max_iter: 20_000, energy_tol: 1e-12, kkt_tol: 1e-6, polish_every: 25 }
    }
}

impl SolverOptions {
    fn qp(&self) -> QpOptions {
        QpOptions {
            max_iter: self.max_iter,
            energy_tol: self.energy_tol,
            kkt_tol: self.kkt_tol,
            polish_every: self.polish_every,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub density: RadialDensity,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub step: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Energy after every accepted step, starting with the initial guess.
    pub history: Vec<f64>,
    pub init: Option<InitPolicy>,
}

/// Kernel tables of the flocking energy on one grid.
#[derive(Debug, Clone)]
pub struct FlockModel {
    dim: usize,
    repulsive: AngularAverageTable,
    attractive: AngularAverageTable,
    combined: Vec<f64>,
}

impl FlockModel {
    pub fn new(grid: &RadialGrid, lambda: f64, alpha: f64) -> Result<Self> {
        check_exponents(grid.dim(), lambda, alpha)?;
        let (repulsive, attractive) = rayon::join(
            || AngularAverageTable::new(grid, PowerKernel::riesz(lambda)),
            || AngularAverageTable::new(grid, PowerKernel::attractive(alpha)),
        );
        let (repulsive, attractive) = (repulsive?, attractive?);
        let combined = repulsive.matrix().iter().zip(attractive.matrix()).map(|(a, b)| a + b).collect();
        Ok(Self { dim: grid.dim(), repulsive, attractive, combined })
    }

    pub fn grid(&self) -> &RadialGrid {
        self.repulsive.grid()
    }

    /// Energy without the feasibility checks of [`flock_energy`].
    pub fn energy(&self, rho: &RadialDensity) -> Result<EnergyBreakdown> {
        let repulsive = self.repulsive.interaction_energy(rho)?;
        let attractive = self.attractive.interaction_energy(rho)?;
        let e = EnergyBreakdown { repulsive, attractive, ..Default::default() }.summed();
        if !e.total.is_finite() {
            return Err(Error::NonFinite(format!("flocking energy {}", e.total)));
        }
        Ok(e)
    }

    /// `φ = K_{−λ} * ρ + K_α * ρ` at the cell centres.
    pub fn potential(&self, rho: &RadialDensity) -> Result<Vec<f64>> {
        let a = self.repulsive.potential(rho)?;
        let b = self.attractive.potential(rho)?;
        Ok(a.into_iter().zip(b).map(|(x, y)| x + y).collect())
    }

    /// KKT residual of `ρ` for the problem with density cap `cap`.
    pub fn kkt_residual(&self, rho: &RadialDensity, cap: f64) -> Result<f64> {
        let q = self.quadratic(rho.mass(), cap);
        let phi = self.potential(rho)?;
        Ok(q.kkt(rho.values(), &phi).0)
    }

    fn quadratic(&self, mass: f64, cap: f64) -> Quadratic<'_> {
        Quadratic { matrix: &self.combined, w: self.grid().w(), cap, mass }
    }

    fn solve(&self, init: &RadialDensity, mass: f64, cap: f64, opts: &SolverOptions) -> Result<SolveReport> {
        let q = self.quadratic(mass, cap);
        let out = q.minimize(init.values(), &opts.qp())?;
        let density = RadialDensity::new(self.grid().clone(), out.rho)?;
        let energy = self.energy(&density)?;
        Ok(SolveReport {
            density,
            energy,
            iterations: out.iterations,
            step: out.step,
            kkt_residual: out.kkt,
            converged: out.converged,
            history: out.history,
            init: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn check_feasible(rho: &RadialDensity, params: &FlockParams) -> Result<()> {
    if rho.grid().dim() != params.dim {
        return Err(Error::GridMismatch(format!("density in dimension {}, params in {}", rho.grid().dim(), params.dim)));
    }
    if let Some(x) = rho.values().iter().find(|x| **x > 1.0 + 1e-9) {
        return Err(Error::Constraint(format!("density {x} exceeds the cap 1")));
    }
    let m = rho.mass();
    if (m - params.mass).abs() > 1e-6 * params.mass {
        return Err(Error::Constraint(format!("density has mass {m}, expected {}", params.mass)));
    }
    Ok(())
}

/// `½∬ρ(|x−y|^{−λ} + |x−y|^α)ρ` for a feasible density; builds the kernel tables.
pub fn flock_energy(rho: &RadialDensity, params: &FlockParams) -> Result<EnergyBreakdown> {
    check_feasible(rho, params)?;
    FlockModel::new(rho.grid(), params.lambda, params.alpha)?.energy(rho)
}

/// Weighted-ℓ² projection of `v` onto `{0 ≤ ρ ≤ 1, ∫ρ = m}`.
pub fn bathtub_project(grid: &RadialGrid, v: &[f64], mass: f64) -> Result<RadialDensity> {
    project_capped(grid, v, mass, 1.0)
}

/// As [`bathtub_project`] with an arbitrary cap (`f64::INFINITY` for the simplex).
pub fn project_capped(grid: &RadialGrid, v: &[f64], mass: f64, cap: f64) -> Result<RadialDensity> {
    if v.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} values for {} cells", v.len(), grid.len())));
    }
    if !(cap > 0.0) {
        return domain(format!("cap must be positive, got {cap}"));
    }
    let (rho, _) = qp::project(v, grid.w(), mass, cap)?;
    RadialDensity::new(grid.clone(), rho)
}

/// Three times the radius of the ball of volume `m`. [`minimize_flock`] also widens the grid
/// to cover the support of the uncapped minimizer.
pub fn default_rmax(dim: usize, mass: f64) -> f64 {
    3.0 * ball_radius(dim, mass)
}

fn grid_for(dim: usize, rmax: f64, opts: &SolverOptions) -> Result<RadialGrid> {
    GridSpec::uniform(dim, opts.cells, rmax).build()
}

/// Minimizes the uncapped energy over radial probability densities.
///
/// The outer radius grows until the support sits inside 80% of the grid, then shrinks to
/// twice the support radius when the support is much smaller than the grid.
pub fn minimize_measure(dim: usize, lambda: f64, alpha: f64, opts: &SolverOptions) -> Result<SolveReport> {
    check_exponents(dim, lambda, alpha)?;
    let mut rmax = opts.rmax.unwrap_or(3.0);
    let fixed = opts.rmax.is_some();
    let mut last = None;
    for _ in 0..8 {
        let grid = grid_for(dim, rmax, opts)?;
        let model = FlockModel::new(&grid, lambda, alpha)?;
        let init = RadialDensity::ball(grid.clone(), 0.5 * rmax, 1.0);
        let init = init.scaled(1.0 / init.mass());
        let report = model.solve(&init, 1.0, f64::INFINITY, opts)?;
        let support = report.density.support_radius(1e-12 * report.density.max());
        if fixed {
            return Ok(report);
        }
        if support > 0.8 * rmax {
            rmax *= 2.0;
        } else if support < 0.25 * rmax && last.is_none() {
            rmax = 2.0 * support;
            last = Some(report);
        } else {
            return Ok(report);
        }
    }
    last.ok_or_else(|| Error::Infeasible("support of the measure minimizer did not fit in the grid".into()))
}

/// Minimizes the flocking energy at fixed mass with `0 ≤ ρ ≤ 1`.
pub fn minimize_flock(params: &FlockParams, init: InitPolicy, opts: &SolverOptions) -> Result<SolveReport> {
    let needs_measure = opts.rmax.is_none() || matches!(init, InitPolicy::Measure | InitPolicy::Best);
    let measure = if needs_measure {
        let measure_opts = SolverOptions { rmax: None, ..opts.clone() };
        Some(minimize_measure(params.dim, params.lambda, params.alpha, &measure_opts)?)
    } else {
        None
    };
    let rmax = opts.rmax.unwrap_or_else(|| {
        let base = default_rmax(params.dim, params.mass);
        let support = measure.as_ref().map_or(0.0, |r| r.density.support_radius(1e-12 * r.density.max()));
        base.max(1.25 * support)
    });
    let grid = grid_for(params.dim, rmax, opts)?;
    if params.mass < *grid.w().last().unwrap() {
        return Err(Error::Infeasible(format!(
            "mass {} is below the capacity of one grid cell; refine the grid",
            params.mass
        )));
    }
    let model = FlockModel::new(&grid, params.lambda, params.alpha)?;
    let policies: &[InitPolicy] = match init {
        InitPolicy::Best => &[InitPolicy::Ball, InitPolicy::Measure, InitPolicy::Uniform],
        ref p => std::slice::from_ref(p),
    };
    let mut best: Option<SolveReport> = None;
    for &policy in policies {
        let start = match policy {
            InitPolicy::Ball => RadialDensity::ball(grid.clone(), ball_radius(params.dim, params.mass), 1.0),
            InitPolicy::Measure => {
                let m = measure.as_ref().expect("measure minimizer computed above");
                let v = m.density.resample(&grid)?.scaled(params.mass);
                bathtub_project(&grid, v.values(), params.mass)?
            }
            InitPolicy::Uniform => {
                let h = params.mass / grid.volume();
                RadialDensity::new(grid.clone(), vec![h; grid.len()])?
            }
            InitPolicy::Best => unreachable!(),
        };
        let mut report = model.solve(&start, params.mass, 1.0, opts)?;
        report.init = Some(policy);
        let better = match &best {
            None => true,
            Some(b) => (report.converged, -report.energy.total) > (b.converged, -b.energy.total),
        };
        if better {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one initialization"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_dim_interval_energy() {
        let m: f64 = 2.0 * 20.0 * 3.0 / 64.0;
        let grid = GridSpec::uniform(1, 64, 3.0).build().unwrap();
        let rho = RadialDensity::ball(grid, 0.5 * m, 1.0);
        let p = FlockParams::new(1, 0.5, 1.0, m).unwrap();
        let e = flock_energy(&rho, &p).unwrap();
        assert_relative_eq!(e.repulsive, 4.0 / 3.0 * m.powf(1.5), max_relative = 1e-9);
        assert_relative_eq!(e.attractive, m.powi(3) / 6.0, max_relative = 1e-9);
    }

    #[test]
    fn rejects_infeasible_density() {
        let grid = GridSpec::uniform(3, 32, 2.0).build().unwrap();
        let rho = RadialDensity::ball(grid, 1.0, 2.0);
        let p = FlockParams::new(3, 1.0, 2.0, rho.mass()).unwrap();
        assert!(matches!(flock_energy(&rho, &p), Err(Error::Constraint(_))));
    }

    #[test]
    fn projection_examples() {
        let grid = GridSpec::uniform(3, 40, 2.0).build().unwrap();
        let feasible = RadialDensity::ball(grid.clone(), 1.3, 0.7);
        let p = bathtub_project(&grid, feasible.values(), feasible.mass()).unwrap();
        for (a, b) in p.values().iter().zip(feasible.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = grid.edges()[20];
        let m = crate::geometry::ball_volume(3) * r.powi(3);
        let v: Vec<f64> = (0..40).map(|i| if i < 20 { 10.0 } else { 0.0 }).collect();
        let p = bathtub_project(&grid, &v, m).unwrap();
        let expected = RadialDensity::ball(grid.clone(), r, 1.0);
        assert!(p.l1_distance(&expected).unwrap() < 1e-9 * m);
        assert!(matches!(bathtub_project(&grid, &vec![0.0; 40], 1e3), Err(Error::Infeasible(_))));
    }

    #[test]
    fn phase_examples() {
        let grid = GridSpec::uniform(3, 200, 3.0).build().unwrap();
        let ball = RadialDensity::ball(grid.clone(), 1.234, 1.0);
        assert_eq!(classify_phase(&ball, Default::default()).phase, Phase::Solid);
        assert_eq!(classify_phase(&ball.scaled(0.5), Default::default()).phase, Phase::Liquid);
        let ramp = RadialDensity::from_profile(grid, |r| (2.0 - r).clamp(0.0, 1.0)).unwrap();
        assert_eq!(classify_phase(&ramp, Default::default()).phase, Phase::Intermediate);
    }

    #[test]
    fn quadratic_attraction_is_second_moment() {
        let grid = GridSpec::hybrid(3, 128, 2.0).build().unwrap();
        let rho = RadialDensity::from_profile(grid.clone(), |r| (-r * r).exp()).unwrap();
        let rho = rho.scaled(1.0 / rho.mass());
        let t = AngularAverageTable::new(&grid, PowerKernel::attractive(2.0)).unwrap();
        assert_relative_eq!(t.interaction_energy(&rho).unwrap(), rho.moment(2.0), max_relative = 1e-10);
    }

    #[test]
    fn small_solve_is_monotone_and_feasible() {
        let p = FlockParams::new(3, 1.0, 2.0, 1.0).unwrap();
        let opts = SolverOptions { cells: 128, ..Default::default() };
        let r = minimize_flock(&p, InitPolicy::Uniform, &opts).unwrap();
        assert!(r.converged, "kkt {} after {}", r.kkt_residual, r.iterations);
        assert!(r.history.windows(2).all(|h| h[1] <= h[0]));
        assert_relative_eq!(r.density.mass(), 1.0, max_relative = 1e-8);
        assert!(r.density.max() <= 1.0);
    }
}
