//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use meanfield_core::flocking::{self, FlockParams, InitPolicy, Phase, PhaseTolerances, SolverOptions};
use meanfield_core::keller_segel::*;
use meanfield_core::kernels::{interaction_energy, GridSpec, PowerKernel, RadialDensity};
use meanfield_core::liquid_drop::{m_star, m_star_1d};
use meanfield_core::oracles::*;
use meanfield_core::sweep::{run_sweep, SweepConfig};

type Outcome = Result<String, String>;

/// Histories and KKT residuals of every solver run in the suite.
static RUNS: Mutex<Vec<(String, Vec<f64>, f64, bool)>> = Mutex::new(Vec::new());

fn record(name: String, history: &[f64], kkt: f64, converged: bool) {
    RUNS.lock().unwrap().push((name, history.to_vec(), kkt, converged));
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn cli(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .arg("--json")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn field(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("missing {key}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn coulomb_constant() -> String {
    format!("{:e}", 16.0 * PI * PI / 15.0)
}

fn criterion_1() -> Outcome {
    let exact = 5.0 * (2f64.powf(1.0 / 3.0) - 1.0) / (1.0 - 2f64.powf(-2.0 / 3.0));
    let quad = field(&cli(&["gld", "thresholds", "--dim", "3", "--lambda", "1"])?, "m_star")?;
    let c = coulomb_constant();
    let oracle = field(&cli(&["gld", "thresholds", "--dim", "3", "--lambda", "1", "--riesz-constant", &c])?, "m_star")?;
    ensure(rel(quad, exact) <= 1e-3, format!("quadrature m_* = {quad}, expected {exact}"))?;
    ensure(rel(oracle, exact) <= 1e-9, format!("oracle m_* = {oracle}, expected {exact}"))?;
    Ok(format!("m_* = {quad:.10} (rel {:.1e}), with oracle constant rel {:.1e}", rel(quad, exact), rel(oracle, exact)))
}

fn criterion_2() -> Outcome {
    let quad = field(&cli(&["gld", "thresholds", "--dim", "3", "--lambda", "1"])?, "m_c_stab")?;
    let c = coulomb_constant();
    let oracle = field(&cli(&["gld", "thresholds", "--dim", "3", "--lambda", "1", "--riesz-constant", &c])?, "m_c_stab")?;
    ensure(rel(quad, 10.0) <= 1e-3, format!("quadrature m_c_stab = {quad}"))?;
    ensure(rel(oracle, 10.0) <= 1e-12, format!("oracle m_c_stab = {oracle}"))?;
    Ok(format!("m_c_stab = {quad:.12} (rel {:.1e}), with oracle constant rel {:.1e}", rel(quad, 10.0), rel(oracle, 10.0)))
}

fn criterion_3() -> Outcome {
    let mut worst_formula: f64 = 0.0;
    let mut worst_flip: f64 = 0.0;
    for i in 1..20 {
        let lambda = 0.05 * i as f64;
        let closed = m_star_1d(lambda).map_err(|e| e.to_string())?;
        let general = m_star(1, lambda).map_err(|e| e.to_string())?;
        worst_formula = worst_formula.max(rel(general, closed));
        let l = format!("{lambda}");
        let (lo, hi) = (format!("{}", 0.5 * closed), format!("{}", 2.0 * closed));
        let b = cli(&[
            "sweep", "bisect", "--predicate", "k-opt-above-1", "--param", "mass", "--lo", &lo, "--hi", &hi,
            "--bracket-tol", "1e-4", "--lambda", &l,
        ])?;
        let (blo, bhi) = (field(&b, "lo")?, field(&b, "hi")?);
        ensure(blo <= closed && closed <= bhi, format!("λ = {lambda}: flip in [{blo}, {bhi}], formula {closed}"))?;
        let below = cli(&["gld", "solve-1d", "--lambda", &l, "--mass", &format!("{blo}")])?;
        let above = cli(&["gld", "solve-1d", "--lambda", &l, "--mass", &format!("{bhi}")])?;
        ensure(below["k"] == 1 && above["k"] == 2, format!("λ = {lambda}: K_opt does not flip across [{blo}, {bhi}]"))?;
        worst_flip = worst_flip.max(field(&b, "critical")? - closed).max(closed - field(&b, "critical")?);
    }
    ensure(worst_formula <= 1e-9, format!("formula mismatch {worst_formula:.1e}"))?;
    Ok(format!("19 values of λ: formula rel {worst_formula:.1e}, flip within {worst_flip:.1e}"))
}

fn relaxed(params: &GksParams, opts: &RelaxedOptions) -> Result<RelaxedState, String> {
    let (s, r) = minimize_relaxed(params, opts).map_err(|e| e.to_string())?;
    record(format!("relaxed N={} q={} α={}", params.dim, params.q, params.alpha), &r.history, r.kkt_residual, r.converged);
    ensure(r.converged, format!("{params:?} did not converge (KKT {:.1e})", r.kkt_residual))?;
    Ok(s)
}

fn criterion_4() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = format!(
        "model = \"gks\"\noutput = \"{}\"\n[params]\ndim = 6\nalpha = 4.0\n[sweep]\nname = \"q\"\nstart = 0.602\nstop = 0.74\nstep = 0.005\n[solver]\ncells = 1024\natom_tol = 1e-3\n",
        tmp.path().display()
    );
    let cfg = SweepConfig::from_toml_str(&text).map_err(|e| e.to_string())?;
    let out = run_sweep(&cfg).map_err(|e| e.to_string())?;
    for r in &out.rows {
        ensure(r.error.is_none() && r.converged, format!("q = {}: {:?}", r.value, r.error))?;
        ensure(r.kkt_residual.is_some_and(|k| k < 1e-6), format!("q = {}: KKT {:?}", r.value, r.kkt_residual))?;
    }
    let atoms: Vec<bool> = out.rows.iter().map(|r| r.label == "atom").collect();
    let flips = atoms.windows(2).filter(|w| w[0] != w[1]).count();
    ensure(flips == 1 && atoms[0], format!("atom pattern {atoms:?}"))?;
    let k = atoms.iter().position(|a| !a).unwrap();
    let transition = 0.5 * (out.rows[k - 1].value + out.rows[k].value);
    let target = 11.0 / 18.0;
    ensure((transition - target).abs() <= 0.02, format!("transition at q ≈ {transition}"))?;

    let opts = RelaxedOptions::default();
    let m605 = relaxed(&GksParams::new(6, 0.605, 4.0).unwrap(), &opts)?.atom;
    let m650 = relaxed(&GksParams::new(6, 0.65, 4.0).unwrap(), &opts)?.atom;
    ensure(m605 > 1e-3, format!("M_*(0.605) = {m605}"))?;
    ensure(m650 <= 1e-3, format!("M_*(0.65) = {m650}"))?;
    Ok(format!(
        "transition in [{:.3}, {:.3}] vs 11/18 = {target:.4}; M_*(0.605) = {m605:.4}, M_*(0.65) = {m650:.1e}",
        out.rows[k - 1].value, out.rows[k].value
    ))
}

fn criterion_5() -> Outcome {
    let s = relaxed(&GksParams::new(3, 0.8, 2.0).unwrap(), &RelaxedOptions::default())?;
    let exact = alpha2_exact_profile_on(s.rho.grid(), 0.8).map_err(|e| e.to_string())?;
    let l1 = s.rho.l1_distance(&exact).map_err(|e| e.to_string())? / exact.mass();
    ensure(s.atom <= 1e-3, format!("M_* = {}", s.atom))?;
    ensure(l1 <= 1e-2, format!("relative L1 = {l1}"))?;
    Ok(format!("M_* = {:.1e}, relative L1 = {l1:.1e}", s.atom))
}

fn flock(mass: f64) -> Result<flocking::SolveReport, String> {
    let params = FlockParams::new(3, 1.0, 2.0, mass).unwrap();
    let s = flocking::minimize_flock(&params, InitPolicy::Best, &SolverOptions::default()).map_err(|e| e.to_string())?;
    record(format!("flocking m={mass}"), &s.history, s.kkt_residual, s.converged);
    ensure(s.converged, format!("m = {mass} did not converge (KKT {:.1e})", s.kkt_residual))?;
    Ok(s)
}

fn median_height(rho: &RadialDensity) -> f64 {
    let mut v: Vec<f64> = rho.values().iter().cloned().filter(|x| *x > 1e-9).collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_6() -> Outcome {
    let s = flock(100.0)?;
    let label = flocking::classify_phase(&s.density, PhaseTolerances::default());
    ensure(label.phase == Phase::Solid, format!("m = 100 labelled {:?}", label.phase))?;
    let radius = (3.0 * 100.0 / (4.0 * PI)).powf(1.0 / 3.0);
    let cell = s.density.grid().width(0);
    let support = s.density.support_radius(1e-9);
    ensure((support - radius).abs() <= 2.0 * cell, format!("support {support}, ball radius {radius}"))?;

    let mut detail = format!("m = 100 Solid, support {support:.4} vs {radius:.4} (cell {cell:.4})");
    for mass in [0.5, 1.0] {
        let params = FlockParams::new(3, 1.0, 2.0, mass).unwrap();
        let scan = constant_on_ball_scan(&ScanModel::Flocking(params), &geometric_heights(1e-3, 1.0, 20_000))
            .map_err(|e| e.to_string())?;
        ensure(scan.height < 1.0, format!("m = {mass} is not below the constant-on-ball threshold"))?;
        let s = flock(mass)?;
        let phase = flocking::classify_phase(&s.density, PhaseTolerances::default()).phase;
        ensure(phase == Phase::Liquid, format!("m = {mass} labelled {phase:?}"))?;
        let h = median_height(&s.density);
        ensure(rel(h, scan.height) <= 1e-2, format!("m = {mass}: height {h} vs scan {}", scan.height))?;
        detail += &format!("; m = {mass} Liquid, height {h:.4} vs scan {:.4}", scan.height);
    }
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scaling = 0.0f64;
    let mut checked = 0;
    while checked < 20 {
        let dim = rng.random_range(1..=6);
        let params = GksParams::new(dim, rng.random_range(0.3..0.95), rng.random_range(0.5..5.0)).unwrap();
        let v = existence_verdict(&params);
        if v.existence == Existence::MinusInfinity || v.regime == Regime::Conformal {
            continue;
        }
        let grid = GridSpec::uniform(dim, 24, 0.5 + rng.random::<f64>() * 2.0).build().unwrap();
        let raw: Vec<f64> = (0..24).map(|_| rng.random::<f64>()).collect();
        let rho = RadialDensity::new(grid.clone(), raw).unwrap();
        let rho = rho.scaled(1.0 / rho.mass());
        let m = rng.random_range(0.2..5.0);
        let l = mass_scaling_length(&params, m);
        let vals = rho.values().iter().map(|x| x * m * l.powi(-(dim as i32))).collect();
        let rho_m = RadialDensity::new(grid.scaled(l).unwrap(), vals).unwrap();
        let e1 = gks_energy(&rho, &params).map_err(|e| e.to_string())?.total;
        let em = gks_energy_with_mass(&rho_m, &params, m).map_err(|e| e.to_string())?.total;
        let e = mass_scaling_exponent(&params).map_err(|e| e.to_string())?;
        scaling = scaling.max(rel(em, m.powf(e) * e1));
        checked += 1;
    }
    ensure(scaling <= 1e-6, format!("scaling identity off by {scaling:.1e}"))?;

    let mut bathtub = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=4);
        let grid = GridSpec::uniform(dim, n, 0.5 + rng.random::<f64>() * 2.0).build().unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..2.5)).collect();
        let mass = rng.random::<f64>() * grid.volume();
        let fast = flocking::bathtub_project(&grid, &v, mass).map_err(|e| e.to_string())?;
        let exact = brute_force_bathtub(&grid, &v, mass).map_err(|e| e.to_string())?;
        for (a, b) in fast.values().iter().zip(exact.values()) {
            bathtub = bathtub.max((a - b).abs());
        }
    }
    ensure(bathtub <= 1e-10, format!("projection differs from enumeration by {bathtub:.1e}"))?;

    let matrix = [(1, -0.3), (1, 1.0), (2, -0.5), (2, -0.9), (2, 2.0), (3, -1.0), (3, 3.5), (4, -1.5), (4, 1.0), (5, -2.0), (6, 4.0)];
    let mut worst_z = 0.0f64;
    for (k, &(dim, p)) in matrix.iter().enumerate() {
        let grid = GridSpec::uniform(dim, 12, 1.5).build().unwrap();
        let raw: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let rho = RadialDensity::new(grid, raw).unwrap();
        let rho = rho.scaled(1.0 / rho.mass());
        let kernel = PowerKernel { exponent: p };
        let table = interaction_energy(&rho, kernel).map_err(|e| e.to_string())?;
        let mc = mc_double_integral(&SampledDensity::Radial(rho), kernel, &McConfig { samples: 400_000, seed: 500 + k as u64 })
            .map_err(|e| e.to_string())?;
        worst_z = worst_z.max(((mc.estimate - table) / mc.std_error).abs());
    }
    ensure(worst_z < 3.0, format!("Monte Carlo disagreement {worst_z:.2}σ"))?;

    let runs = RUNS.lock().unwrap();
    for (name, history, kkt, converged) in runs.iter() {
        ensure(history.windows(2).all(|w| w[1] <= w[0]), format!("{name}: energy history not monotone"))?;
        ensure(*converged && *kkt < 1e-6, format!("{name}: KKT {kkt:.1e}"))?;
    }
    Ok(format!(
        "scaling {scaling:.1e}, bathtub {bathtub:.1e} on 200, MC max {worst_z:.2}σ on {}, {} solver runs monotone with KKT < 1e-6",
        matrix.len(),
        runs.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("m_* for N = 3, λ = 1", criterion_1),
        ("m_c_stab for N = 3, λ = 1", criterion_2),
        ("one-dimensional concordance", criterion_3),
        ("α = 4 atom transition", criterion_4),
        ("α = 2 cross-validation", criterion_5),
        ("flocking phases", criterion_6),
        ("property suite", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}: {name} ({secs:.1} s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name} ({secs:.1} s): {why}", i + 1);
            }
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
