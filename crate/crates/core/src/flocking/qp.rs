//! Quadratic minimization over `{0 ≤ ρ ≤ cap, Σ w ρ = m}` in the `w`-weighted metric.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

const BOUND_TOL: f64 = 1e-10;

/// `clamp(v − μ, 0, cap)` with `Σ w clamp(v − μ, 0, cap) = mass`.
pub(crate) fn project(v: &[f64], w: &[f64], mass: f64, cap: f64) -> Result<(Vec<f64>, f64)> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Domain(format!("mass must be positive, got {mass}")));
    }
    let total: f64 = w.iter().sum();
    if cap.is_finite() && mass > cap * total * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "mass {mass} exceeds the capacity {} of the grid",
            cap * total
        )));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("profile value {x}")));
    }
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mass_at = |mu: f64| -> f64 { v.iter().zip(w).map(|(x, w)| w * (x - mu).clamp(0.0, cap)).sum() };
    let mut hi = vmax;
    let mut lo = if cap.is_finite() { vmin - cap } else { vmin - mass / total };
    if cap.is_finite() && mass >= cap * total {
        return Ok((vec![cap; v.len()], lo));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass_at(mid) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Exact multiplier from the free set identified by the bracket.
    let mu0 = 0.5 * (lo + hi);
    let (mut wf, mut wv, mut fixed) = (0.0, 0.0, 0.0);
    for (x, wi) in v.iter().zip(w) {
        let y = x - mu0;
        if y >= cap {
            fixed += wi * cap;
        } else if y > 0.0 {
            wf += wi;
            wv += wi * x;
        }
    }
    let mu = if wf > 0.0 { (wv - (mass - fixed)) / wf } else { mu0 };
    let mu = if mu.is_finite() && (mu - mu0).abs() <= (hi - lo).abs() + 1e-12 * (1.0 + mu0.abs()) { mu } else { mu0 };
    Ok((v.iter().map(|x| (x - mu).clamp(0.0, cap)).collect(), mu))
}

/// Symmetric matrix with its `w`-weighted gradient.
pub(crate) struct Quadratic<'a> {
    pub matrix: &'a [f64],
    pub w: &'a [f64],
    pub cap: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct QpOptions {
    pub max_iter: usize,
    pub energy_tol: f64,
    pub kkt_tol: f64,
    pub polish_every: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct QpOutcome {
    pub rho: Vec<f64>,
    pub iterations: usize,
    pub step: f64,
    pub kkt: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Quadratic<'_> {
    fn n(&self) -> usize {
        self.w.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let row = |i: usize| dot(&self.matrix[i * n..(i + 1) * n], x);
        if n >= 256 {
            (0..n).into_par_iter().map(row).collect()
        } else {
            (0..n).map(row).collect()
        }
    }

    /// Complementarity residual and the fitted multiplier for a gradient `φ = Wρ / w`.
    pub fn kkt(&self, rho: &[f64], phi: &[f64]) -> (f64, f64) {
        let cap = self.cap;
        let at_zero = |x: f64| x <= BOUND_TOL;
        let at_cap = |x: f64| cap.is_finite() && x >= cap - BOUND_TOL;
        let (mut sw, mut swp) = (0.0, 0.0);
        let (mut max_cap, mut min_zero) = (f64::NEG_INFINITY, f64::INFINITY);
        for ((&x, &p), &w) in rho.iter().zip(phi).zip(self.w) {
            if at_zero(x) {
                min_zero = min_zero.min(p);
            } else if at_cap(x) {
                max_cap = max_cap.max(p);
            } else {
                sw += w;
                swp += w * p;
            }
        }
        let mu = if sw > 0.0 {
            swp / sw
        } else if max_cap.is_finite() && min_zero.is_finite() {
            0.5 * (max_cap + min_zero)
        } else if max_cap.is_finite() {
            max_cap
        } else {
            min_zero
        };
        let scale = phi.iter().fold(1.0f64, |a, p| a.max(p.abs()));
        let worst = rho
            .iter()
            .zip(phi)
            .map(|(&x, &p)| {
                if at_zero(x) {
                    (mu - p).max(0.0)
                } else if at_cap(x) {
                    (p - mu).max(0.0)
                } else {
                    (p - mu).abs()
                }
            })
            .fold(0.0, f64::max);
        (worst / scale, mu)
    }

    /// Newton step on the current free set: solves `[W_FF −w_F; w_Fᵀ 0]`.
    fn newton_direction(&self, rho: &[f64]) -> Option<Vec<f64>> {
        let n = self.n();
        let free: Vec<usize> = (0..n)
            .filter(|&i| rho[i] > BOUND_TOL && !(self.cap.is_finite() && rho[i] >= self.cap - BOUND_TOL))
            .collect();
        let k = free.len();
        if k == 0 || k > 4096 {
            return None;
        }
        let mut is_free = vec![false; n];
        for &i in &free {
            is_free[i] = true;
        }
        let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut b = DVector::<f64>::zeros(k + 1);
        let fixed_mass: f64 = (0..n).filter(|&i| !is_free[i]).map(|i| self.w[i] * rho[i]).sum();
        for (a_row, &i) in free.iter().enumerate() {
            let row = &self.matrix[i * n..(i + 1) * n];
            for (a_col, &j) in free.iter().enumerate() {
                a[(a_row, a_col)] = row[j];
            }
            a[(a_row, k)] = -self.w[i];
            a[(k, a_row)] = self.w[i];
            b[a_row] = -(0..n).filter(|&j| !is_free[j]).map(|j| row[j] * rho[j]).sum::<f64>();
        }
        b[k] = self.mass - fixed_mass;
        let sol = a.lu().solve(&b)?;
        if sol.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let mut d = vec![0.0; n];
        for (a_row, &i) in free.iter().enumerate() {
            d[i] = sol[a_row] - rho[i];
        }
        Some(d)
    }

    pub fn energy_of(&self, rho: &[f64], wr: &[f64]) -> f64 {
        0.5 * dot(rho, wr)
    }

    pub fn minimize(&self, init: &[f64], opts: &QpOptions) -> Result<QpOutcome> {
        let (mut rho, _) = project(init, self.w, self.mass, self.cap)?;
        let mut wr = self.apply(&rho);
        let mut energy = self.energy_of(&rho, &wr);
        if !energy.is_finite() {
            return Err(Error::NonFinite(format!("initial energy {energy}")));
        }
        let mut history = vec![energy];
        let mut phi: Vec<f64> = wr.iter().zip(self.w).map(|(a, w)| a / w).collect();
        let mut step = 1.0 / phi.iter().fold(1e-300f64, |a, p| a.max(p.abs())).max(1e-300);
        let mut last_decrease = f64::INFINITY;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut kkt = self.kkt(&rho, &phi).0;
        let mut iterations = 0;
        let mut stalls = 0;

        // Line search along `d` on the exact quadratic; `max_beta` keeps the iterate feasible.
        let take = |rho: &mut Vec<f64>, wr: &mut Vec<f64>, energy: &mut f64, d: &[f64], max_beta: f64| -> f64 {
            let wd = self.apply(d);
            let slope = dot(&*wr, d);
            let curv = dot(d, &wd);
            if slope >= 0.0 {
                return 0.0;
            }
            let beta = if curv > 0.0 { (-slope / curv).min(max_beta) } else { max_beta };
            let trial: Vec<f64> = rho
                .iter()
                .zip(d)
                .map(|(x, di)| (x + beta * di).clamp(0.0, self.cap))
                .collect();
            let trial_wr: Vec<f64> = wr.iter().zip(&wd).map(|(a, b)| a + beta * b).collect();
            let e = self.energy_of(&trial, &trial_wr);
            if e.is_finite() && e <= *energy {
                let dec = *energy - e;
                *rho = trial;
                *wr = trial_wr;
                *energy = e;
                dec
            } else {
                0.0
            }
        };

        while iterations < opts.max_iter {
            if kkt < opts.kkt_tol && last_decrease < opts.energy_tol {
                return Ok(QpOutcome { rho, iterations, step, kkt, converged: true, history });
            }
            iterations += 1;
            if iterations % 64 == 0 {
                wr = self.apply(&rho);
            }
            let polish = opts.polish_every > 0 && iterations % opts.polish_every == 0;
            let mut dec = 0.0;
            if polish {
                if let Some(d) = self.newton_direction(&rho) {
                    let mut max_beta: f64 = 1.0;
                    for (x, di) in rho.iter().zip(&d) {
                        if *di < 0.0 {
                            max_beta = max_beta.min(-x / di);
                        } else if *di > 0.0 && self.cap.is_finite() {
                            max_beta = max_beta.min((self.cap - x) / di);
                        }
                    }
                    if max_beta > 0.0 {
                        dec = take(&mut rho, &mut wr, &mut energy, &d, max_beta);
                    }
                }
            } else {
                let v: Vec<f64> = rho.iter().zip(&phi).map(|(x, p)| x - step * p).collect();
                let (target, _) = project(&v, self.w, self.mass, self.cap)?;
                let d: Vec<f64> = target.iter().zip(&rho).map(|(a, b)| a - b).collect();
                dec = take(&mut rho, &mut wr, &mut energy, &d, 1.0);
            }
            let new_phi: Vec<f64> = wr.iter().zip(self.w).map(|(a, w)| a / w).collect();
            if !polish {
                // Barzilai–Borwein step from the last accepted pair.
                if let Some((r0, p0)) = &prev {
                    let s: Vec<f64> = rho.iter().zip(r0).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = new_phi.iter().zip(p0).map(|(a, b)| a - b).collect();
                    let ss: f64 = s.iter().zip(self.w).map(|(a, w)| w * a * a).sum();
                    let sy: f64 = s.iter().zip(&y).zip(self.w).map(|((a, b), w)| w * a * b).sum();
                    if sy > 0.0 && ss > 0.0 {
                        step = (ss / sy).clamp(step * 1e-3, step * 1e3);
                    } else if dec == 0.0 {
                        step *= 0.5;
                    }
                }
            }
            prev = Some((rho.clone(), new_phi.clone()));
            phi = new_phi;
            kkt = self.kkt(&rho, &phi).0;
            if dec > 0.0 {
                history.push(energy);
                stalls = 0;
            } else {
                stalls += 1;
            }
            last_decrease = dec;
            if stalls > 50 {
                break;
            }
        }
        let converged = kkt < opts.kkt_tol && last_decrease < opts.energy_tol;
        Ok(QpOutcome { rho, iterations, step, kkt, converged, history })
    }
}
