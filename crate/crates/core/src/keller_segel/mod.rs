//! The generalized Keller–Segel functional `−∫ρ^q + ½∬ρ|x−y|^αρ` at unit mass, and its
//! relaxation with a Dirac atom of mass `M` at the origin.

use serde::{Deserialize, Serialize};
use rayon::prelude::*;

use crate::energy::EnergyBreakdown;
use crate::error::{domain, Error, Result};
use crate::flocking::SolveReport;
use crate::geometry::sphere_area;
use crate::kernels::{AngularAverageTable, GridSpec, PowerKernel, RadialDensity, RadialGrid};

const RATIO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GksParams {
    pub dim: usize,
    pub q: f64,
    pub alpha: f64,
}

impl GksParams {
    pub fn new(dim: usize, q: f64, alpha: f64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        if !(q > 0.0 && q < 1.0) {
            return domain(format!("q must lie in (0, 1), got {q}"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return domain(format!("α must be positive, got {alpha}"));
        }
        Ok(Self { dim, q, alpha })
    }

    /// `κ = 1/(1−q)`, the decay exponent of stationary profiles.
    pub fn kappa(&self) -> f64 {
        1.0 / (1.0 - self.q)
    }

    fn n(&self) -> f64 {
        self.dim as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Existence {
    MinusInfinity,
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Subconformal,
    Conformal,
    Superconformal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistenceVerdict {
    pub existence: Existence,
    pub regime: Regime,
}

/// `−∞` iff `q ≤ N/(N+α)`; regime from `q` against `2N/(2N+α)`.
///
/// Comparisons are made on `q(N+α)` against `N` (and `q(2N+α)` against `2N`) with a relative
/// slack of `1e−12`, so decimal inputs equal to the rational thresholds land on them.
pub fn existence_verdict(params: &GksParams) -> ExistenceVerdict {
    let (n, q, a) = (params.n(), params.q, params.alpha);
    let lhs = q * (n + a);
    let existence = if lhs <= n * (1.0 + RATIO_TOL) { Existence::MinusInfinity } else { Existence::Finite };
    let c = q * (2.0 * n + a) - 2.0 * n;
    let regime = if c.abs() <= RATIO_TOL * 2.0 * n {
        Regime::Conformal
    } else if c < 0.0 {
        Regime::Subconformal
    } else {
        Regime::Superconformal
    };
    ExistenceVerdict { existence, regime }
}

/// `e = (2N − (2N+α)q) / (N − α − Nq)`, with `E(m) = m^e E(1)`.
pub fn mass_scaling_exponent(params: &GksParams) -> Result<f64> {
    if existence_verdict(params).existence == Existence::MinusInfinity {
        return domain(format!(
            "energy is −∞ for q = {} ≤ N/(N+α) = {}",
            params.q,
            params.n() / (params.n() + params.alpha)
        ));
    }
    let (n, q, a) = (params.n(), params.q, params.alpha);
    let den = n - a - n * q;
    if den == 0.0 {
        return domain(format!("scaling exponent undefined: N − α − Nq = 0 at q = {}", (n - a) / n));
    }
    let e = (2.0 * n - (2.0 * n + a) * q) / den;
    Ok(if existence_verdict(params).regime == Regime::Conformal { 0.0 } else { e })
}

/// Length scale `ℓ = m^{(q−2)/(α−N+Nq)}` of the mass-`m` rescaling `ρ_m(x) = m ℓ^{−N} ρ(x/ℓ)`.
pub fn mass_scaling_length(params: &GksParams, mass: f64) -> f64 {
    let (n, q, a) = (params.n(), params.q, params.alpha);
    mass.powf((q - 2.0) / (a - n + n * q))
}

fn entropy(rho: &RadialDensity, q: f64) -> f64 {
    -rho.grid().w().iter().zip(rho.values()).map(|(w, v)| w * v.powf(q)).sum::<f64>()
}

/// Energy of a unit-mass density.
pub fn gks_energy(rho: &RadialDensity, params: &GksParams) -> Result<EnergyBreakdown> {
    gks_energy_with_mass(rho, params, 1.0)
}

/// Energy of a density whose mass is declared as `mass` (checked to `1e−6` relative).
pub fn gks_energy_with_mass(rho: &RadialDensity, params: &GksParams, mass: f64) -> Result<EnergyBreakdown> {
    check_dim(rho.grid(), params)?;
    let m = rho.mass();
    if (m - mass).abs() > 1e-6 * mass {
        return Err(Error::Constraint(format!("density has mass {m}, declared {mass}")));
    }
    let attractive = AngularAverageTable::new(rho.grid(), PowerKernel::attractive(params.alpha))?.interaction_energy(rho)?;
    Ok(EnergyBreakdown { entropy: entropy(rho, params.q), attractive, ..Default::default() }.summed())
}

fn check_dim(grid: &RadialGrid, params: &GksParams) -> Result<()> {
    if grid.dim() != params.dim {
        return Err(Error::GridMismatch(format!("grid in dimension {}, params in {}", grid.dim(), params.dim)));
    }
    Ok(())
}

/// A density together with an atom of mass `M` at the origin; total mass 1.
#[derive(Debug, Clone)]
pub struct RelaxedState {
    pub rho: RadialDensity,
    pub atom: f64,
}

impl RelaxedState {
    pub fn new(rho: RadialDensity, atom: f64) -> Result<Self> {
        if !(atom >= 0.0 && atom <= 1.0) {
            return Err(Error::Constraint(format!("atom mass {atom} outside [0, 1]")));
        }
        let total = rho.mass() + atom;
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Constraint(format!("density mass plus atom is {total}, expected 1")));
        }
        Ok(Self { rho, atom })
    }
}

/// `gks_energy(ρ) + M ∫|x|^α ρ`; the atom has no entropy and no self-interaction.
pub fn relaxed_energy(state: &RelaxedState, params: &GksParams) -> Result<EnergyBreakdown> {
    check_dim(state.rho.grid(), params)?;
    RelaxedState::new(state.rho.clone(), state.atom)?;
    let rho = &state.rho;
    let attractive = if rho.mass() > 0.0 {
        AngularAverageTable::new(rho.grid(), PowerKernel::attractive(params.alpha))?.interaction_energy(rho)?
    } else {
        0.0
    };
    Ok(EnergyBreakdown {
        entropy: entropy(rho, params.q),
        attractive,
        atom: state.atom * rho.moment(params.alpha),
        ..Default::default()
    }
    .summed())
}

/// Outer radius beyond which `(q/|x|^α)^κ` carries mass below `1e−6`.
pub fn default_rmax(params: &GksParams) -> f64 {
    let (n, q, a) = (params.n(), params.q, params.alpha);
    let k = params.kappa();
    let decay = a * k - n;
    (sphere_area(params.dim) * q.powf(k) / (decay * 1e-6)).powf(1.0 / decay).max(2.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxedOptions {
    /// Grid cells (hybrid layout).
    pub cells: usize,
    pub rmax: Option<f64>,
    pub max_iter: usize,
    pub energy_tol: f64,
    pub kkt_tol: f64,
    /// Declares `M_* > 0` above this.
    pub atom_tol: f64,
    /// Keeps `M = 0` throughout.
    pub forbid_atom: bool,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        Self {
            cells: GridSpec::DEFAULT_N,
            rmax: None,
            max_iter: 20_000,
            energy_tol: 1e-12,
            kkt_tol: 1e-6,
            atom_tol: 1e-3,
            forbid_atom: false,
        }
    }
}

/// Kernel table and `|x|^α` cell averages for the relaxed problem on one grid.
#[derive(Debug, Clone)]
pub struct RelaxedModel {
    params: GksParams,
    table: AngularAverageTable,
    centered: Vec<f64>,
    moments: Vec<f64>,
}

struct Subproblem {
    rho: Vec<f64>,
    atom: f64,
}

impl RelaxedModel {
    pub fn new(grid: &RadialGrid, params: &GksParams) -> Result<Self> {
        check_dim(grid, params)?;
        let table = AngularAverageTable::new(grid, PowerKernel::attractive(params.alpha))?;
        let centered = table.centered_matrix();
        Ok(Self { params: *params, table, centered, moments: grid.radial_moments(params.alpha) })
    }

    pub fn grid(&self) -> &RadialGrid {
        self.table.grid()
    }

    fn w(&self) -> &[f64] {
        self.grid().w()
    }

    fn entropy_of(&self, rho: &[f64]) -> f64 {
        -self.w().iter().zip(rho).map(|(w, v)| w * v.powf(self.params.q)).sum::<f64>()
    }

    fn coupling_of(&self, rho: &[f64]) -> f64 {
        self.w().iter().zip(&self.moments).zip(rho).map(|((w, a), v)| w * a * v).sum()
    }

    /// Exact minimizer of the entropy plus the linear model `Σ w g ρ + g_M M` at total mass 1,
    /// given `delta = g − g_M`. Returns the multiplier shifted by `g_M`.
    fn subproblem(&self, delta: &[f64], forbid_atom: bool) -> Result<(Subproblem, f64)> {
        let q = self.params.q;
        let k = self.params.kappa();
        let w = self.w();
        let dmin = delta.iter().cloned().fold(f64::INFINITY, f64::min);
        let profile = |mu: f64| -> Vec<f64> { delta.iter().map(|d| (q / (d - mu)).powf(k)).collect() };
        let mass = |mu: f64| -> f64 { delta.iter().zip(w).map(|(d, wi)| wi * (q / (d - mu)).powf(k)).sum() };
        if !forbid_atom && dmin > 0.0 && mass(0.0) <= 1.0 {
            let rho = profile(0.0);
            let atom = (1.0 - rho.iter().zip(w).map(|(r, w)| r * w).sum::<f64>()).max(0.0);
            return Ok((Subproblem { rho, atom }, 0.0));
        }
        let hi0 = if forbid_atom { dmin } else { dmin.min(0.0) };
        let mut hi = hi0;
        let mut step = 1.0f64.max(hi0.abs());
        let mut lo = hi0 - step;
        while mass(lo) > 1.0 {
            step *= 2.0;
            lo = hi0 - step;
            if !step.is_finite() {
                return Err(Error::NonFinite("multiplier bracket".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if mass(mid) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut rho = profile(lo);
        let m: f64 = rho.iter().zip(w).map(|(r, w)| r * w).sum();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::NonFinite(format!("subproblem mass {m}")));
        }
        rho.iter_mut().for_each(|r| *r /= m);
        Ok((Subproblem { rho, atom: 0.0 }, lo))
    }

    /// Energy parts `(entropy, interaction, atom coupling)` from a precomputed `Wρ`.
    fn parts(&self, rho: &[f64], wr: &[f64], atom: f64) -> (f64, f64, f64) {
        let inter = 0.5 * rho.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        (self.entropy_of(rho), inter, atom * self.coupling_of(rho))
    }

    pub fn energy(&self, state: &RelaxedState) -> Result<EnergyBreakdown> {
        let wr = self.table.apply(state.rho.values());
        let (entropy, attractive, atom) = self.parts(state.rho.values(), &wr, state.atom);
        Ok(EnergyBreakdown { entropy, attractive, atom, ..Default::default() }.summed())
    }

    /// Total-variation distance to the exact minimizer of the partially linearized functional.
    pub fn kkt_residual(&self, state: &RelaxedState, forbid_atom: bool) -> Result<f64> {
        let cr = self.apply_centered(state.rho.values());
        Ok(self.kkt_from(state.rho.values(), &cr, state.atom, forbid_atom)?.0)
    }

    /// `C ρ` for the centered kernel.
    fn apply_centered(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let row = |i: usize| -> f64 { self.centered[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum() };
        if n >= 256 {
            (0..n).into_par_iter().map(row).collect()
        } else {
            (0..n).map(row).collect()
        }
    }

    /// Gradient minus the atom's gradient: `φ − ∫|y|^α ρ + M |x|^α`.
    fn delta(&self, cr: &[f64], atom: f64) -> Vec<f64> {
        cr.iter().zip(self.w()).zip(&self.moments).map(|((a, w), m)| a / w + atom * m).collect()
    }

    /// Distance in total variation between `(ρ, M)` and the exact minimizer of the partially
    /// linearized functional at `(ρ, M)`; zero exactly at stationary points.
    fn kkt_from(&self, rho: &[f64], cr: &[f64], atom: f64, forbid_atom: bool) -> Result<(f64, Subproblem)> {
        let (sub, _) = self.subproblem(&self.delta(cr, atom), forbid_atom)?;
        let tv: f64 = rho.iter().zip(&sub.rho).zip(self.w()).map(|((a, b), w)| w * (a - b).abs()).sum();
        Ok((tv + (sub.atom - atom).abs(), sub))
    }

    /// Damped self-consistent iteration with an exact line search on the segment.
    pub fn minimize(&self, init: &RelaxedState, opts: &RelaxedOptions) -> Result<(RelaxedState, SolveReport)> {
        if !self.grid().same_as(init.rho.grid()) {
            return Err(Error::GridMismatch("initial state lives on a different grid".into()));
        }
        let mut rho = init.rho.values().to_vec();
        let mut atom = if opts.forbid_atom { 0.0 } else { init.atom };
        if opts.forbid_atom && init.atom > 0.0 {
            let m: f64 = rho.iter().zip(self.w()).map(|(r, w)| r * w).sum();
            if m <= 0.0 {
                return Err(Error::Constraint("initial state has no density to carry the atom's mass".into()));
            }
            rho.iter_mut().for_each(|r| *r /= m);
        }
        let mut wr = self.table.apply(&rho);
        let mut cr = self.apply_centered(&rho);
        let total = |p: (f64, f64, f64)| p.0 + p.1 + p.2;
        let mut energy = total(self.parts(&rho, &wr, atom));
        if !energy.is_finite() {
            return Err(Error::NonFinite(format!("initial relaxed energy {energy}")));
        }
        let mut history = vec![energy];
        let mut last_decrease = f64::INFINITY;
        let mut iterations = 0;
        let mut step = 1.0;
        let mut stalls = 0;
        let (mut kkt, mut sub) = self.kkt_from(&rho, &cr, atom, opts.forbid_atom)?;
        while iterations < opts.max_iter {
            if kkt < opts.kkt_tol && last_decrease < opts.energy_tol {
                break;
            }
            iterations += 1;
            if iterations % 64 == 0 {
                wr = self.table.apply(&rho);
                cr = self.apply_centered(&rho);
            }
            let d: Vec<f64> = sub.rho.iter().zip(&rho).map(|(a, b)| a - b).collect();
            let da = sub.atom - atom;
            let wd = self.table.apply(&d);
            let at = |t: f64| -> f64 {
                let r: Vec<f64> = rho.iter().zip(&d).map(|(x, y)| (x + t * y).max(0.0)).collect();
                let inter: f64 = 0.5 * r.iter().zip(wr.iter().zip(&wd)).map(|(x, (a, b))| x * (a + t * b)).sum::<f64>();
                self.entropy_of(&r) + inter + (atom + t * da).max(0.0) * self.coupling_of(&r)
            };
            let t = golden_min(&at, 0.0, 1.0, 60);
            let e_new = at(t);
            let dec = if e_new.is_finite() && e_new <= energy && t > 0.0 {
                for ((x, y), (a, b)) in rho.iter_mut().zip(&d).zip(wr.iter_mut().zip(&wd)) {
                    *x = (*x + t * y).max(0.0);
                    *a += t * b;
                }
                let cd = self.apply_centered(&d);
                cr.iter_mut().zip(&cd).for_each(|(a, b)| *a += t * b);
                atom = (atom + t * da).max(0.0);
                let dec = energy - e_new;
                energy = e_new;
                history.push(energy);
                step = t;
                stalls = 0;
                dec
            } else {
                stalls += 1;
                0.0
            };
            last_decrease = dec;
            (kkt, sub) = self.kkt_from(&rho, &cr, atom, opts.forbid_atom)?;
            if stalls > 3 {
                wr = self.table.apply(&rho);
                cr = self.apply_centered(&rho);
                (kkt, sub) = self.kkt_from(&rho, &cr, atom, opts.forbid_atom)?;
                if stalls > 10 {
                    break;
                }
            }
        }
        let converged = kkt < opts.kkt_tol && last_decrease < opts.energy_tol;
        let density = RadialDensity::new(self.grid().clone(), rho)?;
        let m = density.mass();
        let atom = if opts.forbid_atom { 0.0 } else { (1.0 - m).max(0.0).min(atom.max(1.0 - m)) };
        let state = RelaxedState { rho: density.clone(), atom };
        let energy = self.energy(&state)?;
        let report = SolveReport {
            density,
            energy,
            iterations,
            step,
            kkt_residual: kkt,
            converged,
            history,
            init: None,
        };
        Ok((state, report))
    }

    /// Stationary profile `(q/(|x|^α + c))^κ` (cell moments of `|x|^α`) with `c` fixed by unit mass.
    pub fn power_profile(&self) -> Result<RelaxedState> {
        let (sub, _) = self.subproblem(&self.moments, true)?;
        RelaxedState::new(RadialDensity::new(self.grid().clone(), sub.rho)?, 0.0)
    }
}

fn golden_min(f: &impl Fn(f64) -> f64, a: f64, b: f64, iters: usize) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(mid, f(mid)), (1.0, f(1.0)), (b, f(b))];
    candidates.iter().fold((0.0, f(0.0)), |best, &(t, v)| if v < best.1 { (t, v) } else { best }).0
}

fn relaxed_grid(params: &GksParams, cells: usize, rmax: Option<f64>) -> Result<RadialGrid> {
    GridSpec::hybrid(params.dim, cells, rmax.unwrap_or_else(|| default_rmax(params))).build()
}

/// Minimizes the relaxed functional over `(ρ, M)` with `∫ρ + M = 1`.
pub fn minimize_relaxed(params: &GksParams, opts: &RelaxedOptions) -> Result<(RelaxedState, SolveReport)> {
    let model = RelaxedModel::new(&relaxed_grid(params, opts.cells, opts.rmax)?, params)?;
    minimize_relaxed_with(&model, None, opts)
}

/// As [`minimize_relaxed`] on a prepared model, optionally from a given state.
pub fn minimize_relaxed_with(
    model: &RelaxedModel,
    init: Option<&RelaxedState>,
    opts: &RelaxedOptions,
) -> Result<(RelaxedState, SolveReport)> {
    let params = &model.params;
    if existence_verdict(params).existence == Existence::MinusInfinity {
        return domain(format!(
            "energy is −∞ for q = {} ≤ N/(N+α); nothing to minimize",
            params.q
        ));
    }
    let start = match init {
        Some(s) => s.clone(),
        None => model.power_profile()?,
    };
    model.minimize(&start, opts)
}

/// The α = 2 minimizer `(q/(|x|² + c))^κ` with `c` fixed by unit discrete mass.
pub fn alpha2_exact_profile(dim: usize, q: f64) -> Result<RadialDensity> {
    let params = GksParams::new(dim, q, 2.0)?;
    alpha2_exact_profile_on(&relaxed_grid(&params, GridSpec::DEFAULT_N, None)?, q)
}

pub fn alpha2_exact_profile_on(grid: &RadialGrid, q: f64) -> Result<RadialDensity> {
    let params = GksParams::new(grid.dim(), q, 2.0)?;
    if existence_verdict(&params).existence == Existence::MinusInfinity {
        return domain(format!("α = 2 profile needs q > N/(N+2), got {q}"));
    }
    let k = params.kappa();
    let unit = |c: f64| RadialDensity::from_profile(grid.clone(), |r| (q / (r * r + c)).powf(k));
    let (mut lo, mut hi) = (1e-12, 1.0);
    while unit(hi)?.mass() > 1.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Infeasible("no α = 2 profile of unit mass on this grid".into()));
        }
    }
    if unit(lo)?.mass() < 1.0 {
        return Err(Error::Infeasible("grid too small to hold the α = 2 profile".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if unit(mid)?.mass() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = unit(0.5 * (lo + hi))?;
    let m = rho.mass();
    Ok(rho.scaled(1.0 / m))
}

/// `(N−2)(3N+4) / (3N(N+2))` as a reduced fraction for `N ≥ 6`.
pub fn alpha4_threshold_ratio(dim: usize) -> Option<(u64, u64)> {
    if dim < 6 {
        return None;
    }
    let n = dim as u64;
    let (num, den) = ((n - 2) * (3 * n + 4), 3 * n * (n + 2));
    let g = gcd(num, den);
    Some((num / g, den / g))
}

/// Largest `q` with atom concentration for `α = 4`, or `None` when `N ≤ 5`.
pub fn alpha4_threshold(dim: usize) -> Option<f64> {
    alpha4_threshold_ratio(dim).map(|(a, b)| a as f64 / b as f64)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// `½∬ρ|x−y|⁴ρ = m₄ + (1 + 2/N) m₂²` for a radial unit-mass density.
pub fn alpha4_moment_energy(rho: &RadialDensity) -> Result<f64> {
    let m = rho.mass();
    if (m - 1.0).abs() > 1e-6 {
        return Err(Error::Constraint(format!("moment identity needs unit mass, got {m}")));
    }
    let n = rho.grid().dim() as f64;
    let m2 = rho.moment(2.0);
    Ok(rho.moment(4.0) + (1.0 + 2.0 / n) * m2 * m2)
}
