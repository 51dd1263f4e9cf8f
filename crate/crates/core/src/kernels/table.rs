//! Cell-pair integrals of power-law kernels over radial grids.
//!
//! For a density that is constant on each shell, the double integral
//! `½∬ρ(x)|x−y|^p ρ(y)` equals `½ Σ_ij ρ_i W_ij ρ_j` with
//! `W_ij = ∫_{cell i}∫_{cell j} σ² r^{N−1} s^{N−1} A(r, s) dr ds` and `A` the sphere average.
//! Pairs close to the diagonal use closed forms (N = 1, 3) or graded quadrature in the
//! difference variable `r − s`; separated pairs use tensor Gauss–Legendre.

use rayon::prelude::*;

use super::grid::{RadialDensity, RadialGrid};
use super::quadrature::gauss_legendre;
use super::sphere::{PowerKernel, SphereAverage};
use crate::error::{Error, Result};
use crate::geometry::sphere_area;

const NEAR_BAND: usize = 2;
const MID_BAND: usize = 8;

/// Cell-pair kernel integrals `W` for one (grid, kernel) pair. Immutable once built.
#[derive(Debug, Clone)]
pub struct AngularAverageTable {
    kernel: PowerKernel,
    grid: RadialGrid,
    w: Vec<f64>,
}

impl AngularAverageTable {
    pub fn new(grid: &RadialGrid, kernel: PowerKernel) -> Result<Self> {
        kernel.check(grid.dim())?;
        let n = grid.len();
        let builder = PairIntegrator::new(grid, kernel);
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| builder.pair(i, j)).collect())
            .collect();
        let mut w = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + off;
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("kernel table entry {bad}")));
        }
        Ok(Self { kernel, grid: grid.clone(), w })
    }

    pub fn kernel(&self) -> PowerKernel {
        self.kernel
    }
    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }
    /// Raw cell-pair integral `W_ij`.
    pub fn pair_integral(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.grid.len() + j]
    }
    /// Cell-averaged sphere average `A_ij = W_ij / (w_i w_j)`.
    pub fn average(&self, i: usize, j: usize) -> f64 {
        self.pair_integral(i, j) / (self.grid.w()[i] * self.grid.w()[j])
    }
    pub(crate) fn matrix(&self) -> &[f64] {
        &self.w
    }

    /// `C_ij = ∫∫ σ² r^{N−1} s^{N−1} (A(r, s) − s^p)`, so that `(Cρ)_i / w_i = φ_i − ∫|y|^p ρ`.
    /// Exact without cancellation for even powers; `W_ij − w_i w_j ⟨s^p⟩_j` otherwise.
    pub(crate) fn centered_matrix(&self) -> Vec<f64> {
        let n = self.grid.len();
        let builder = PairIntegrator::new(&self.grid, self.kernel);
        if let Some(order) = builder.poly_order {
            let e = self.grid.edges();
            let n1 = builder.dim as i32 - 1;
            return (0..n * n)
                .into_par_iter()
                .map(|ij| {
                    let (i, j) = (ij / n, ij % n);
                    builder.tensor_fn(e[i], e[i + 1], e[j], e[j + 1], order, |r, s| {
                        builder.sigma2 * r.powi(n1) * s.powi(n1) * builder.avg.eval_centered(r, s)
                    })
                })
                .collect();
        }
        let m = self.grid.radial_moments(self.kernel.exponent);
        let w = self.grid.w();
        (0..n * n).map(|ij| self.w[ij] - w[ij / n] * w[ij % n] * m[ij % n]).collect()
    }

    fn check(&self, rho: &RadialDensity) -> Result<()> {
        if !self.grid.same_as(rho.grid()) {
            return Err(Error::GridMismatch("density and kernel table use different grids".into()));
        }
        Ok(())
    }

    /// `W ρ` (an energy gradient in the Euclidean metric).
    pub(crate) fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let row = |i: usize| -> f64 {
            self.w[i * n..(i + 1) * n].iter().zip(values).map(|(a, b)| a * b).sum()
        };
        if n >= 256 {
            (0..n).into_par_iter().map(row).collect()
        } else {
            (0..n).map(row).collect()
        }
    }

    pub fn interaction_energy(&self, rho: &RadialDensity) -> Result<f64> {
        self.check(rho)?;
        let wr = self.apply(rho.values());
        Ok(0.5 * wr.iter().zip(rho.values()).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `φ(r_i) = Σ_j w_j A_ij ρ_j`.
    pub fn potential(&self, rho: &RadialDensity) -> Result<Vec<f64>> {
        self.check(rho)?;
        Ok(self.potential_of(rho.values()))
    }

    pub(crate) fn potential_of(&self, values: &[f64]) -> Vec<f64> {
        self.apply(values).into_iter().zip(self.grid.w()).map(|(a, w)| a / w).collect()
    }
}

/// `½∬ρ K ρ` for a radial density; builds a fresh table.
pub fn interaction_energy(rho: &RadialDensity, kernel: PowerKernel) -> Result<f64> {
    AngularAverageTable::new(rho.grid(), kernel)?.interaction_energy(rho)
}

/// Potential `∫K(|x−y|)ρ(y)dy` at the cells of `rho`'s grid; builds a fresh table.
pub fn potential(rho: &RadialDensity, kernel: PowerKernel) -> Result<Vec<f64>> {
    AngularAverageTable::new(rho.grid(), kernel)?.potential(rho)
}

struct PairIntegrator<'a> {
    grid: &'a RadialGrid,
    dim: usize,
    sigma2: f64,
    avg: SphereAverage,
    poly_order: Option<usize>,
}

impl<'a> PairIntegrator<'a> {
    fn new(grid: &'a RadialGrid, kernel: PowerKernel) -> Self {
        let dim = grid.dim();
        let sigma = sphere_area(dim);
        let poly_order = kernel
            .even_power()
            .map(|k| ((dim - 1 + 2 * k as usize) / 2 + 2).min(16));
        Self {
            grid,
            dim,
            sigma2: sigma * sigma,
            avg: SphereAverage::new(dim, kernel),
            poly_order,
        }
    }

    fn density(&self, r: f64, s: f64) -> f64 {
        let n = self.dim as i32 - 1;
        self.sigma2 * r.powi(n) * s.powi(n) * self.avg.eval(r, s)
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        let e = self.grid.edges();
        let (a, b, c, d) = (e[i], e[i + 1], e[j], e[j + 1]);
        let gap = i.abs_diff(j);
        if let Some(order) = self.poly_order {
            return self.tensor(a, b, c, d, order);
        }
        if gap <= NEAR_BAND {
            match self.avg {
                SphereAverage::OneDim { p } => return one_dim_exact(p, a, b, c, d),
                SphereAverage::ThreeDim { p } => {
                    let q = p + 2.0;
                    let minus = rect(a, b, c, d, |r, s| h_minus(q, r, s));
                    let plus = self.tensor_fn(a, b, c, d, 8, |r, s| r * s * (r + s).powf(q));
                    return 8.0 * std::f64::consts::PI.powi(2) / q * (plus - minus);
                }
                _ => {}
            }
        }
        if gap <= 1 {
            return self.graded(a, b, c, d);
        }
        self.tensor(a, b, c, d, if gap <= MID_BAND { 6 } else { 3 })
    }

    fn tensor(&self, a: f64, b: f64, c: f64, d: f64, order: usize) -> f64 {
        self.tensor_fn(a, b, c, d, order, |r, s| self.density(r, s))
    }

    fn tensor_fn(&self, a: f64, b: f64, c: f64, d: f64, order: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
        let rule = gauss_legendre(order);
        rule.on(a, b)
            .map(|(r, wr)| wr * rule.on(c, d).map(|(s, ws)| ws * f(r, s)).sum::<f64>())
            .sum()
    }

    /// Rotated coordinates `u = r − s`, `v = r + s`; geometric panels in `u` toward the diagonal.
    fn graded(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        let (ulo, uhi) = (a - d, b - c);
        let mut breaks = vec![ulo, uhi, a - c, b - d];
        if ulo <= 0.0 && uhi >= 0.0 {
            breaks.push(0.0);
            let width = (b - a).max(d - c);
            let mut t = width;
            for _ in 0..90 {
                t *= 0.5;
                if t < ulo.abs() {
                    breaks.push(-t);
                }
                if t < uhi {
                    breaks.push(t);
                }
            }
        }
        breaks.retain(|u| *u >= ulo && *u <= uhi);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup();
        let ru = gauss_legendre(6);
        let rv = gauss_legendre(6);
        let mut total = 0.0;
        for win in breaks.windows(2) {
            if win[1] <= win[0] {
                continue;
            }
            for (u, wu) in ru.on(win[0], win[1]) {
                let vlo = (2.0 * a - u).max(2.0 * c + u);
                let vhi = (2.0 * b - u).min(2.0 * d + u);
                if vhi <= vlo {
                    continue;
                }
                let inner: f64 = rv
                    .on(vlo, vhi)
                    .map(|(v, wv)| {
                        let (r, s) = (0.5 * (v + u), 0.5 * (v - u));
                        let n = self.dim as i32 - 1;
                        wv * self.sigma2 * r.powi(n) * s.powi(n) * self.avg.eval_gap(r, s, u.abs())
                    })
                    .sum();
                total += 0.5 * wu * inner;
            }
        }
        total
    }
}

fn rect(a: f64, b: f64, c: f64, d: f64, h: impl Fn(f64, f64) -> f64) -> f64 {
    h(b, d) - h(a, d) - h(b, c) + h(a, c)
}

/// Mixed antiderivative of `r s |r − s|^q`.
fn h_minus(q: f64, r: f64, s: f64) -> f64 {
    let u = r - s;
    let au = u.abs();
    let sg = u.signum();
    let c2 = (q + 1.0) * (q + 2.0);
    let c3 = c2 * (q + 3.0);
    let c4 = c3 * (q + 4.0);
    let phi2 = au.powf(q + 2.0) / c2;
    let phi3 = sg * au.powf(q + 3.0) / c3;
    let phi4 = au.powf(q + 4.0) / c4;
    -r * s * phi2 + phi4 - u * phi3
}

/// `∫_{a<|x|<b}∫_{c<|y|<d} |x − y|^p` in one dimension, in closed form.
fn one_dim_exact(p: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let g = |t: f64| t.abs().powf(p + 2.0) / ((p + 1.0) * (p + 2.0));
    let minus = g(a - d) + g(b - c) - g(a - c) - g(b - d);
    let plus = g(b + d) - g(a + d) - g(b + c) + g(a + c);
    2.0 * (minus + plus)
}
