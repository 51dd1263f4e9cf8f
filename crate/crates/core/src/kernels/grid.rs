use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::ball_volume;

/// How a [`RadialGrid`] places its cell edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Total number of cells.
    pub n: usize,
    pub rmax: f64,
    /// Cells spent on geometric refinement of the first uniform cell.
    pub geometric_cells: usize,
    /// Smallest edge relative to the uniform spacing.
    pub inner_ratio: f64,
}

impl GridSpec {
    pub const DEFAULT_N: usize = 1024;

    /// The default hybrid layout: 1/16 of the cells geometric down to `1e-7` of the spacing.
    pub fn hybrid(dim: usize, n: usize, rmax: f64) -> Self {
        let geometric_cells = if n >= 64 { n / 16 } else { 0 };
        Self { dim, n, rmax, geometric_cells, inner_ratio: 1e-7 }
    }

    pub fn uniform(dim: usize, n: usize, rmax: f64) -> Self {
        Self { dim, n, rmax, geometric_cells: 0, inner_ratio: 1.0 }
    }

    pub fn build(&self) -> Result<RadialGrid> {
        RadialGrid::from_spec(self)
    }
}

/// Radial cells `[e_i, e_{i+1})` of a ball of radius `rmax` in R^N.
///
/// `w[i]` is the exact volume of the i-th spherical shell, so `Σ w_i f(r_i)` is the midpoint
/// rule for `∫ f dx` over radial functions and `Σ w_i = |B_{rmax}|`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dim: usize,
    edges: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
    spec: Option<GridSpec>,
}

impl RadialGrid {
    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        if spec.dim == 0 {
            return domain("dimension must be at least 1");
        }
        if !(spec.rmax > 0.0 && spec.rmax.is_finite()) {
            return domain("rmax must be positive and finite");
        }
        if spec.n < 2 || spec.geometric_cells >= spec.n {
            return domain("grid needs at least two cells and fewer geometric than total cells");
        }
        let uniform = spec.n - spec.geometric_cells;
        let h = spec.rmax / uniform as f64;
        let mut edges = Vec::with_capacity(spec.n + 1);
        edges.push(0.0);
        let g = spec.geometric_cells;
        if g > 0 {
            if !(spec.inner_ratio > 0.0 && spec.inner_ratio < 1.0) {
                return domain("inner_ratio must lie in (0, 1)");
            }
            let beta = spec.inner_ratio.powf(-1.0 / g as f64);
            for j in (1..=g).rev() {
                edges.push(h * beta.powi(-(j as i32)));
            }
        }
        for k in 1..=uniform {
            edges.push(h * k as f64);
        }
        *edges.last_mut().unwrap() = spec.rmax;
        let mut grid = Self::from_edges(spec.dim, edges)?;
        grid.spec = Some(*spec);
        Ok(grid)
    }

    /// Grid from explicit edges `0 = e_0 < e_1 < … < e_n`.
    pub fn from_edges(dim: usize, edges: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        if edges.len() < 2 || edges[0] != 0.0 {
            return domain("edges must start at 0 and contain at least one cell");
        }
        if edges.windows(2).any(|p| !(p[1] > p[0])) || !edges.iter().all(|e| e.is_finite()) {
            return domain("edges must be finite and strictly increasing");
        }
        let bv = ball_volume(dim);
        let n = dim as i32;
        let r = edges.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let w = edges.windows(2).map(|p| bv * (p[1].powi(n) - p[0].powi(n))).collect();
        Ok(Self { dim, edges, r, w, spec: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.r.len()
    }
    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
    /// Cell-centre radii.
    pub fn r(&self) -> &[f64] {
        &self.r
    }
    /// Shell volumes.
    pub fn w(&self) -> &[f64] {
        &self.w
    }
    pub fn rmax(&self) -> f64 {
        *self.edges.last().unwrap()
    }
    pub fn spec(&self) -> Option<&GridSpec> {
        self.spec.as_ref()
    }
    pub fn volume(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Index of the cell containing radius `x` (clamped to the grid).
    pub fn cell_of(&self, x: f64) -> usize {
        match self.edges.binary_search_by(|e| e.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.len() - 1),
        }
    }

    /// Cell width at index `i`.
    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Cell averages of `|x|^k` over each shell, exactly.
    pub fn radial_moments(&self, k: f64) -> Vec<f64> {
        let n = self.dim as f64;
        let bv = ball_volume(self.dim);
        self.edges
            .windows(2)
            .zip(&self.w)
            .map(|(p, w)| bv * n * (p[1].powf(n + k) - p[0].powf(n + k)) / (n + k) / w)
            .collect()
    }

    /// Same cells scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_edges(self.dim, self.edges.iter().map(|e| e * factor).collect())
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.dim == other.dim && self.edges == other.edges
    }
}

/// A nonnegative radial density, piecewise constant on the cells of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    grid: RadialGrid,
    values: Vec<f64>,
}

impl RadialDensity {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Constraint(format!("density values must be finite and nonnegative, got {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: RadialGrid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    /// Constant `height` on `|x| < radius`, with the boundary cell filled by volume fraction.
    pub fn ball(grid: RadialGrid, radius: f64, height: f64) -> Self {
        let n = grid.dim() as i32;
        let values = grid
            .edges()
            .windows(2)
            .map(|p| {
                if p[1] <= radius {
                    height
                } else if p[0] >= radius {
                    0.0
                } else {
                    height * (radius.powi(n) - p[0].powi(n)) / (p[1].powi(n) - p[0].powi(n))
                }
            })
            .collect();
        Self { grid, values }
    }

    /// Cell averages of a radial profile `f(|x|)` (Gauss–Legendre per cell).
    pub fn from_profile(grid: RadialGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let rule = super::quadrature::gauss_legendre(8);
        let n = grid.dim() as i32;
        let values = grid
            .edges()
            .windows(2)
            .map(|p| {
                let num = rule.integrate(p[0], p[1], |r| r.powi(n - 1) * f(r));
                num * n as f64 / (p[1].powi(n) - p[0].powi(n))
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn mass(&self) -> f64 {
        self.grid.w().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
    /// `∫|x|^k ρ dx`, exact for piecewise-constant ρ.
    pub fn moment(&self, k: f64) -> f64 {
        let m = self.grid.radial_moments(k);
        self.grid.w().iter().zip(&m).zip(&self.values).map(|((w, m), v)| w * m * v).sum()
    }
    /// Outer edge of the last cell with value above `tol`.
    pub fn support_radius(&self, tol: f64) -> f64 {
        self.values
            .iter()
            .rposition(|v| *v > tol)
            .map(|i| self.grid.edges()[i + 1])
            .unwrap_or(0.0)
    }
    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * factor).collect() }
    }
    /// Cell averages on another grid of the same dimension; mass outside the new grid is dropped.
    pub fn resample(&self, grid: &RadialGrid) -> Result<Self> {
        if grid.dim() != self.grid.dim() {
            return Err(Error::GridMismatch("resampling across dimensions".into()));
        }
        let n = grid.dim() as i32;
        let src = self.grid.edges();
        let values = grid
            .edges()
            .windows(2)
            .zip(grid.w())
            .map(|(p, w)| {
                let mut acc = 0.0;
                let start = self.grid.cell_of(p[0]);
                for k in start..self.grid.len() {
                    let (a, b) = (src[k].max(p[0]), src[k + 1].min(p[1]));
                    if src[k] >= p[1] {
                        break;
                    }
                    if b > a {
                        acc += self.values[k] * (b.powi(n) - a.powi(n));
                    }
                }
                acc * ball_volume(grid.dim()) / w
            })
            .collect();
        Ok(Self { grid: grid.clone(), values })
    }

    /// Weighted L¹ distance `∫|ρ − σ|`.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("densities live on different grids".into()));
        }
        Ok(self
            .grid
            .w()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum())
    }
}
