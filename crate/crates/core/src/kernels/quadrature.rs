//! Gauss–Legendre rules and an adaptive Gauss–Kronrod (7/15) integrator.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to [a, b].
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached rule of the given order (orders 1..=16).
pub fn gauss_legendre(order: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (1..=16).map(GaussLegendre::new).collect());
    &rules[order - 1]
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod on [a, b] with relative tolerance `rtol` (absolute floor `atol`).
pub fn adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, rtol: f64, atol: f64) -> f64 {
    adaptive_on(&f, &[a, b], rtol, atol)
}

/// Adaptive integration over consecutive panels given by `breaks`.
pub fn adaptive_on(f: &impl Fn(f64) -> f64, breaks: &[f64], rtol: f64, atol: f64) -> f64 {
    let mut stack: Vec<(f64, f64, f64, f64, u32)> = Vec::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        let (v, e) = kronrod15(f, w[0], w[1]);
        stack.push((w[0], w[1], v, e, 0));
        total += v;
        total_err += e;
    }
    let mut done = 0.0;
    let mut done_err = 0.0;
    let mut pending: Vec<(f64, f64, f64, f64, u32)> = Vec::new();
    // Bisect panels until the summed error estimate meets the tolerance.
    for _ in 0..60 {
        if total_err <= rtol * total.abs() + atol {
            break;
        }
        let tol_each = (rtol * total.abs() + atol) / stack.len().max(1) as f64;
        let mut new_total = done;
        let mut new_err = done_err;
        for (a, b, v, e, depth) in stack.drain(..) {
            if !(e > tol_each) || depth > 50 {
                done += v;
                done_err += e;
                new_total += v;
                new_err += e;
                continue;
            }
            let m = 0.5 * (a + b);
            let (v1, e1) = kronrod15(f, a, m);
            let (v2, e2) = kronrod15(f, m, b);
            pending.push((a, m, v1, e1, depth + 1));
            pending.push((m, b, v2, e2, depth + 1));
            new_total += v1 + v2;
            new_err += e1 + e2;
        }
        std::mem::swap(&mut stack, &mut pending);
        total = new_total;
        total_err = new_err;
        if stack.is_empty() {
            break;
        }
    }
    total
}
