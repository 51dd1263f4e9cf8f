use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::quadrature::adaptive_on;
use crate::error::{domain, Result};
use crate::geometry::sine_power_integral;

/// Power-law kernel `K(t) = t^p`; `p = −λ` for the Riesz repulsion, `p = α` for attraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerKernel {
    pub exponent: f64,
}

impl PowerKernel {
    pub fn riesz(lambda: f64) -> Self {
        Self { exponent: -lambda }
    }
    pub fn attractive(alpha: f64) -> Self {
        Self { exponent: alpha }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let p = self.exponent;
        if !p.is_finite() || p <= -(dim as f64) {
            return domain(format!("kernel exponent {p} ≤ −N = −{dim}: the double integral diverges"));
        }
        Ok(())
    }

    /// `Some(k)` when `p = 2k` for a nonnegative integer `k`.
    pub(crate) fn even_power(&self) -> Option<u32> {
        let half = self.exponent / 2.0;
        (half >= 0.0 && half == half.round() && half <= 16.0).then_some(half as u32)
    }
}

pub(crate) const ANGULAR_RTOL: f64 = 1e-10;

/// Average of `|r e − s ω|^p` over `ω ∈ S^{N−1}`, by adaptive quadrature in the polar angle.
///
/// In one dimension the sphere is `{±1}` and the average is the two-point mean. For `r = s`
/// the value is `+∞` when `p ≤ −(N−1)`.
pub fn angular_kernel_average(dim: usize, kernel: PowerKernel, r: f64, s: f64) -> Result<f64> {
    kernel.check(dim)?;
    if !(r > 0.0 && s > 0.0) {
        return domain(format!("radii must be positive, got r = {r}, s = {s}"));
    }
    Ok(angular_quadrature(dim, kernel.exponent, r, s))
}

pub(crate) fn angular_quadrature(dim: usize, p: f64, r: f64, s: f64) -> f64 {
    angular_quadrature_gap(dim, p, r, s, (r - s).abs())
}

/// As [`angular_quadrature`] with `gap = |r − s|` supplied, for gaps below the rounding of `r − s`.
pub(crate) fn angular_quadrature_gap(dim: usize, p: f64, r: f64, s: f64, gap: f64) -> f64 {
    if dim == 1 {
        return 0.5 * (gap.powf(p) + (r + s).powf(p));
    }
    let n = dim as f64;
    if gap == 0.0 && p <= -(n - 1.0) {
        return f64::INFINITY;
    }
    // Symmetrise the arguments so the result is exactly symmetric.
    let (r, s) = if r >= s { (r, s) } else { (s, r) };
    let k = n - 2.0;
    let diff2 = gap * gap;
    let rs4 = 4.0 * r * s;
    let f = |theta: f64| {
        let h = (0.5 * theta).sin();
        (diff2 + rs4 * h * h).powf(0.5 * p) * theta.sin().powf(k)
    };
    // Geometric panels toward θ = 0, where the integrand varies on the scale |r − s|/√(rs).
    let scale = (gap / (r * s).sqrt()).max(1e-150);
    let mut breaks = vec![std::f64::consts::PI];
    let mut t = std::f64::consts::PI;
    let floor = scale * 0.5;
    while t > floor {
        t *= 0.25;
        breaks.push(t);
    }
    breaks.push(0.0);
    breaks.reverse();
    adaptive_on(&f, &breaks, ANGULAR_RTOL * 0.1, 0.0) / sine_power_integral(k)
}

const PANELS: usize = 100;
const DEGREE: usize = 20;

/// `g(u) = avg(1, 1 − u)` on `u ∈ [2^{−PANELS}, 1]`, piecewise Chebyshev on dyadic panels.
#[derive(Debug)]
pub(crate) struct RatioTable {
    dim: usize,
    p: f64,
    coeffs: Vec<[f64; DEGREE + 1]>,
}

impl RatioTable {
    fn build(dim: usize, p: f64) -> Self {
        let nodes: Vec<f64> = (0..=DEGREE)
            .map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / (DEGREE + 1) as f64).cos())
            .collect();
        let coeffs = (0..PANELS)
            .map(|k| {
                let hi = 0.5f64.powi(k as i32);
                let (c, h) = (0.75 * hi, 0.25 * hi);
                let vals: Vec<f64> = nodes
                    .iter()
                    .map(|x| {
                        let u = c + h * x;
                        angular_quadrature_gap(dim, p, 1.0, 1.0 - u, u)
                    })
                    .collect();
                let mut a = [0.0; DEGREE + 1];
                for (m, am) in a.iter_mut().enumerate() {
                    let sum: f64 = nodes
                        .iter()
                        .zip(&vals)
                        .map(|(x, v)| v * (m as f64 * x.acos()).cos())
                        .sum();
                    *am = 2.0 * sum / (DEGREE + 1) as f64;
                }
                a[0] *= 0.5;
                a
            })
            .collect();
        Self { dim, p, coeffs }
    }

    fn shared(dim: usize, p: f64) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<RatioTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().unwrap().get(&(dim, p.to_bits())) {
            return t.clone();
        }
        let table = Arc::new(Self::build(dim, p));
        cache.lock().unwrap().insert((dim, p.to_bits()), table.clone());
        table
    }

    fn eval(&self, r: f64, s: f64, gap: f64) -> f64 {
        let big = r.max(s);
        let u = (gap / big).min(1.0);
        let k = (-u.log2()).floor().max(0.0) as usize;
        if k >= PANELS || u <= 0.0 {
            return angular_quadrature_gap(self.dim, self.p, r, s, gap);
        }
        let hi = 0.5f64.powi(k as i32);
        let x = ((u - 0.75 * hi) / (0.25 * hi)).clamp(-1.0, 1.0);
        let a = &self.coeffs[k];
        let (mut b1, mut b2) = (0.0, 0.0);
        for &am in a[1..].iter().rev() {
            let b0 = 2.0 * x * b1 - b2 + am;
            b2 = b1;
            b1 = b0;
        }
        big.powf(self.p) * (x * b1 - b2 + a[0])
    }
}

/// Closed-form sphere averages where they exist, falling back to quadrature.
#[derive(Debug, Clone)]
pub(crate) enum SphereAverage {
    OneDim { p: f64 },
    /// N = 3: `((r+s)^{p+2} − |r−s|^{p+2}) / (2 r s (p+2))`.
    ThreeDim { p: f64 },
    /// `p = 2k`: `Σ_a c_a r^{2a} s^{2(k−a)}`, from the even moments of `⟨e, ω⟩`.
    EvenPower { k: u32, coeffs: [f64; 17] },
    Quadrature(Arc<RatioTable>),
}

impl SphereAverage {
    pub(crate) fn new(dim: usize, kernel: PowerKernel) -> Self {
        let p = kernel.exponent;
        if let Some(k) = kernel.even_power() {
            // E[t^{2j}] = Π_{l<j} (2l+1)/(N+2l)
            let mut moments = [0.0; 17];
            moments[0] = 1.0;
            for j in 1..=16 {
                let l = (j - 1) as f64;
                moments[j] = moments[j - 1] * (2.0 * l + 1.0) / (dim as f64 + 2.0 * l);
            }
            // (r² + s² − 2rs t)^k averaged, collected by powers of r².
            let k = k as usize;
            let binom = |n: usize, m: usize| (0..m).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64);
            let mut coeffs = [0.0; 17];
            for i in (0..=k).step_by(2) {
                let outer = binom(k, i) * 2f64.powi(i as i32) * moments[i / 2];
                for l in 0..=(k - i) {
                    coeffs[l + i / 2] += outer * binom(k - i, l);
                }
            }
            return Self::EvenPower { k: k as u32, coeffs };
        }
        if dim == 1 {
            return Self::OneDim { p };
        }
        if dim == 3 && (p + 2.0).abs() > 1e-12 {
            return Self::ThreeDim { p };
        }
        Self::Quadrature(RatioTable::shared(dim, p))
    }

    pub(crate) fn eval(&self, r: f64, s: f64) -> f64 {
        match *self {
            Self::OneDim { p } => 0.5 * ((r - s).abs().powf(p) + (r + s).powf(p)),
            Self::ThreeDim { p } => {
                let q = p + 2.0;
                ((r + s).powf(q) - (r - s).abs().powf(q)) / (2.0 * r * s * q)
            }
            Self::EvenPower { k, coeffs } => even_poly(k, &coeffs, r, s, 0),
            Self::Quadrature(ref t) => t.eval(r, s, (r - s).abs()),
        }
    }

    /// `avg(r, s) − s^p`, without cancellation for even powers.
    pub(crate) fn eval_centered(&self, r: f64, s: f64) -> f64 {
        match *self {
            Self::EvenPower { k, coeffs } => even_poly(k, &coeffs, r, s, 1),
            Self::OneDim { p } | Self::ThreeDim { p } => self.eval(r, s) - s.powf(p),
            Self::Quadrature(ref t) => self.eval(r, s) - s.powf(t.p),
        }
    }

    /// Evaluation with `|r − s|` supplied separately.
    pub(crate) fn eval_gap(&self, r: f64, s: f64, gap: f64) -> f64 {
        match *self {
            Self::Quadrature(ref t) => t.eval(r, s, gap),
            _ => self.eval(r, s),
        }
    }
}

fn even_poly(k: u32, coeffs: &[f64; 17], r: f64, s: f64, from: u32) -> f64 {
    let (r2, s2) = (r * r, s * s);
    (from..=k).map(|a| coeffs[a as usize] * r2.powi(a as i32) * s2.powi((k - a) as i32)).sum()
}
