//! Parameter sweeps and transition bisection, with append-only CSV output and a JSON manifest.
//!
//! Config files are TOML:
//!
//! ```toml
//! model = "gks"            # gld-1d | gld-balls | flocking | gks
//! output = "out/gks-q"     # directory receiving results.csv and manifest.json
//! threads = 4              # optional; else MEANFIELD_THREADS, else all cores
//!
//! [params]                 # fixed parameters: dim, lambda, alpha, mass, q
//! dim = 6
//! alpha = 4.0
//!
//! [sweep]
//! name = "q"
//! start = 0.602            # or: values = [0.605, 0.65]
//! stop = 0.74
//! step = 0.005
//!
//! [solver]                 # optional: cells, rmax, max_iter, tol, atom_tol, init
//! cells = 1024
//! ```

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::flocking::{self, FlockParams, InitPolicy, Phase, PhaseTolerances, SolverOptions};
use crate::keller_segel::{self, GksParams, RelaxedOptions};
use crate::liquid_drop::{self, GldParams, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// Exact 1D liquid drop: `K` equal intervals.
    #[serde(rename = "gld-1d")]
    Gld1d,
    /// Liquid drop on balls: energy of the ball and the sign of `E(m) − 2E(m/2)`.
    GldBalls,
    Flocking,
    Gks,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Gld1d => "gld-1d",
            Model::GldBalls => "gld-balls",
            Model::Flocking => "flocking",
            Model::Gks => "gks",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedParams {
    pub dim: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub mass: Option<f64>,
    pub q: Option<f64>,
}

impl FixedParams {
    /// Copy with the parameter `name` set to `value`.
    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let mut p = *self;
        match name {
            "dim" => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("dim must be a positive integer, got {value}")));
                }
                p.dim = Some(value as usize);
            }
            "lambda" => p.lambda = Some(value),
            "alpha" => p.alpha = Some(value),
            "mass" => p.mass = Some(value),
            "q" => p.q = Some(value),
            _ => return Err(Error::Config(format!("unknown parameter `{name}`"))),
        }
        Ok(p)
    }

    fn get<T>(v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }
    fn dim(&self) -> Result<usize> {
        Self::get(self.dim, "dim")
    }
    fn lambda(&self) -> Result<f64> {
        Self::get(self.lambda, "lambda")
    }
    fn alpha(&self) -> Result<f64> {
        Self::get(self.alpha, "alpha")
    }
    fn mass(&self) -> Result<f64> {
        Self::get(self.mass, "mass")
    }
    fn q(&self) -> Result<f64> {
        Self::get(self.q, "q")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl SweepGrid {
    pub fn list(name: &str, values: Vec<f64>) -> Self {
        Self { name: name.into(), values: Some(values), start: None, stop: None, step: None }
    }

    pub fn range(name: &str, start: f64, stop: f64, step: f64) -> Self {
        Self { name: name.into(), values: None, start: Some(start), stop: Some(stop), step: Some(step) }
    }

    /// The grid points; nonempty and strictly monotone.
    pub fn points(&self) -> Result<Vec<f64>> {
        let values = match (&self.values, self.start, self.stop, self.step) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(h)) => {
                if !(h != 0.0 && h.is_finite() && (b - a) / h >= 0.0) {
                    return Err(Error::Config(format!("step {h} does not lead from {a} to {b}")));
                }
                let n = ((b - a) / h + 1e-9).floor() as usize;
                // `a + i h` rounded to 12 significant digits
                (0..=n).map(|i| format!("{:.11e}", a + i as f64 * h).parse().unwrap_or(f64::NAN)).collect()
            }
            _ => return Err(Error::Config("sweep needs either `values` or all of `start`, `stop`, `step`".into())),
        };
        if values.is_empty() {
            return Err(Error::Config("swept grid is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("swept grid has non-finite values".into()));
        }
        let up = values.windows(2).all(|w| w[1] > w[0]);
        let down = values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Config("swept grid must be strictly monotone".into()));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// KKT tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitPolicy>,
}

impl SolverSettings {
    pub fn flocking(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            cells: self.cells.unwrap_or(d.cells),
            rmax: self.rmax,
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            kkt_tol: self.tol.unwrap_or(d.kkt_tol),
            ..d
        }
    }

    pub fn relaxed(&self) -> RelaxedOptions {
        let d = RelaxedOptions::default();
        RelaxedOptions {
            cells: self.cells.unwrap_or(d.cells),
            rmax: self.rmax,
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            kkt_tol: self.tol.unwrap_or(d.kkt_tol),
            atom_tol: self.atom_tol.unwrap_or(d.atom_tol),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: Model,
    #[serde(default)]
    pub params: FixedParams,
    pub sweep: SweepGrid,
    #[serde(default)]
    pub solver: SolverSettings,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `output` is resolved against the config's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path)?)?;
        if cfg.output.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output = dir.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    /// Checks the grid and every parameter combination before anything runs.
    pub fn validate(&self) -> Result<()> {
        for v in self.sweep.points()? {
            let p = self.params.with(&self.sweep.name, v)?;
            check_params(self.model, &p).map_err(|e| Error::Config(format!("{} = {v}: {e}", self.sweep.name)))?;
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the model, parameters, swept name and solver settings.
    pub fn options_hash(&self) -> String {
        let key = serde_json::json!({
            "model": self.model,
            "params": self.params,
            "swept": self.sweep.name,
            "solver": self.solver,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))[..16].to_string()
    }
}

fn check_params(model: Model, p: &FixedParams) -> Result<()> {
    match model {
        Model::Gld1d => liquid_drop::solve_1d(p.lambda()?, p.mass()?).map(|_| ()),
        Model::GldBalls => GldParams::new(p.dim()?, p.lambda()?, p.mass()?).map(|_| ()),
        Model::Flocking => FlockParams::new(p.dim()?, p.lambda()?, p.alpha()?, p.mass()?).map(|_| ()),
        Model::Gks => {
            let g = GksParams::new(p.dim()?, p.q()?, p.alpha()?)?;
            match keller_segel::existence_verdict(&g).existence {
                keller_segel::Existence::MinusInfinity => {
                    Err(Error::Domain(format!("energy is −∞ at q = {}", g.q)))
                }
                keller_segel::Existence::Finite => Ok(()),
            }
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub index: usize,
    pub value: f64,
    pub energy: Option<EnergyBreakdown>,
    /// Phase, `K=k`, charmstar sign or atom verdict.
    pub label: String,
    pub atom_mass: Option<f64>,
    pub k_opt: Option<u64>,
    pub converged: bool,
    pub kkt_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_seconds: f64,
    pub grid: String,
    pub options_hash: String,
    pub error: Option<String>,
}

const COLUMNS: [&str; 19] = [
    "index",
    "param",
    "value",
    "energy_total",
    "perimeter",
    "repulsive",
    "attractive",
    "entropy",
    "atom_coupling",
    "label",
    "atom_mass",
    "k_opt",
    "converged",
    "kkt_residual",
    "iterations",
    "wall_seconds",
    "grid",
    "options_hash",
    "error",
];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T>(x: Option<T>, f: impl Fn(T) -> String) -> String {
    x.map(f).unwrap_or_default()
}

impl SweepResult {
    fn record(&self, param: &str) -> Vec<String> {
        let e = self.energy;
        vec![
            self.index.to_string(),
            param.to_string(),
            num(self.value),
            opt(e, |e| num(e.total)),
            opt(e, |e| num(e.perimeter)),
            opt(e, |e| num(e.repulsive)),
            opt(e, |e| num(e.attractive)),
            opt(e, |e| num(e.entropy)),
            opt(e, |e| num(e.atom)),
            self.label.clone(),
            opt(self.atom_mass, num),
            opt(self.k_opt, |k| k.to_string()),
            self.converged.to_string(),
            opt(self.kkt_residual, num),
            opt(self.iterations, |k| k.to_string()),
            format!("{:.3}", self.wall_seconds),
            self.grid.clone(),
            self.options_hash.clone(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

struct Evaluated {
    energy: EnergyBreakdown,
    label: String,
    atom_mass: Option<f64>,
    k_opt: Option<u64>,
    converged: bool,
    kkt_residual: Option<f64>,
    iterations: Option<usize>,
    grid: String,
}

fn grid_tag(kind: &str, g: &crate::kernels::RadialGrid) -> String {
    format!("{kind}:{}:{}", g.len(), num(g.rmax()))
}

fn evaluate(model: Model, p: &FixedParams, solver: &SolverSettings) -> Result<Evaluated> {
    check_params(model, p)?;
    match model {
        Model::Gld1d => {
            let s = liquid_drop::solve_1d(p.lambda()?, p.mass()?)?;
            let perimeter = 2.0 * s.k_opt as f64;
            let energy = EnergyBreakdown { perimeter, repulsive: s.energy - perimeter, total: s.energy, ..Default::default() };
            Ok(Evaluated {
                energy,
                label: format!("K={}", s.k_opt),
                atom_mass: None,
                k_opt: Some(s.k_opt),
                converged: true,
                kkt_residual: None,
                iterations: None,
                grid: "closed-form".into(),
            })
        }
        Model::GldBalls => {
            let params = GldParams::new(p.dim()?, p.lambda()?, p.mass()?)?;
            let sign = liquid_drop::charmstar_sign(params.dim, params.lambda, params.mass)?;
            let label = match sign {
                Sign::Negative => "negative",
                Sign::Zero => "zero",
                Sign::Positive => "positive",
            };
            Ok(Evaluated {
                energy: liquid_drop::ball_energy(&params)?,
                label: label.into(),
                atom_mass: None,
                k_opt: None,
                converged: true,
                kkt_residual: None,
                iterations: None,
                grid: "ball-constant".into(),
            })
        }
        Model::Flocking => {
            let params = FlockParams::new(p.dim()?, p.lambda()?, p.alpha()?, p.mass()?)?;
            let report = flocking::minimize_flock(&params, solver.init.unwrap_or(InitPolicy::Best), &solver.flocking())?;
            let label = flocking::classify_phase(&report.density, PhaseTolerances::default());
            Ok(Evaluated {
                energy: report.energy,
                label: match label.phase {
                    Phase::Liquid => "liquid",
                    Phase::Intermediate => "intermediate",
                    Phase::Solid => "solid",
                }
                .into(),
                atom_mass: None,
                k_opt: None,
                converged: report.converged,
                kkt_residual: Some(report.kkt_residual),
                iterations: Some(report.iterations),
                grid: grid_tag("uniform", report.density.grid()),
            })
        }
        Model::Gks => {
            let params = GksParams::new(p.dim()?, p.q()?, p.alpha()?)?;
            let opts = solver.relaxed();
            let (state, report) = keller_segel::minimize_relaxed(&params, &opts)?;
            Ok(Evaluated {
                energy: report.energy,
                label: if state.atom > opts.atom_tol { "atom" } else { "no-atom" }.into(),
                atom_mass: Some(state.atom),
                k_opt: None,
                converged: report.converged,
                kkt_residual: Some(report.kkt_residual),
                iterations: Some(report.iterations),
                grid: grid_tag("hybrid", report.density.grid()),
            })
        }
    }
}

/// Evaluates one point; failures are recorded in the row.
pub fn evaluate_point(
    model: Model,
    params: &FixedParams,
    name: &str,
    value: f64,
    solver: &SolverSettings,
    index: usize,
    options_hash: &str,
) -> SweepResult {
    let start = Instant::now();
    let out = params.with(name, value).and_then(|p| evaluate(model, &p, solver));
    let wall_seconds = start.elapsed().as_secs_f64();
    match out {
        Ok(e) => SweepResult {
            index,
            value,
            energy: Some(e.energy),
            label: e.label,
            atom_mass: e.atom_mass,
            k_opt: e.k_opt,
            converged: e.converged,
            kkt_residual: e.kkt_residual,
            iterations: e.iterations,
            wall_seconds,
            grid: e.grid,
            options_hash: options_hash.into(),
            error: None,
        },
        Err(err) => SweepResult {
            index,
            value,
            energy: None,
            label: "error".into(),
            atom_mass: None,
            k_opt: None,
            converged: false,
            kkt_residual: None,
            iterations: None,
            wall_seconds,
            grid: String::new(),
            options_hash: options_hash.into(),
            error: Some(err.to_string()),
        },
    }
}

/// Thread count: the config, else `MEANFIELD_THREADS`, else the available parallelism.
pub fn resolve_threads(configured: Option<usize>) -> usize {
    configured
        .or_else(|| std::env::var("MEANFIELD_THREADS").ok().and_then(|s| s.parse().ok()))
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub version: String,
    pub config: SweepConfig,
    pub options_hash: String,
    /// All solvers are deterministic; no random seeds are drawn.
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub points: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub failed: usize,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Rows computed by this run, in grid order.
    pub rows: Vec<SweepResult>,
    /// Points already present in the CSV and not recomputed.
    pub skipped: usize,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

fn completed_indices(path: &Path, hash: &str) -> Result<BTreeSet<usize>> {
    let mut done = BTreeSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("{} has unexpected columns", path.display())));
    }
    for rec in reader.records() {
        let rec = rec?;
        if rec.get(17) != Some(hash) {
            return Err(Error::Config(format!(
                "{} was written with different options; choose another output directory",
                path.display()
            )));
        }
        if let Some(i) = rec.get(0).and_then(|s| s.parse().ok()) {
            done.insert(i);
        }
    }
    Ok(done)
}

/// Runs every grid point not already in `results.csv`, appending rows as they finish.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::create_dir_all(&config.output)?;
    let csv_path = config.output.join("results.csv");
    let manifest_path = config.output.join("manifest.json");
    let hash = config.options_hash();
    let points = config.sweep.points()?;
    let done = completed_indices(&csv_path, &hash)?;
    let todo: Vec<(usize, f64)> = points.iter().copied().enumerate().filter(|(i, _)| !done.contains(i)).collect();

    let fresh = !csv_path.exists();
    let file = OpenOptions::new().create(true).append(true).open(&csv_path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        writer.write_record(COLUMNS)?;
        writer.flush()?;
    }
    let appender: Mutex<csv::Writer<File>> = Mutex::new(writer);
    let threads = resolve_threads(config.threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rows: Vec<SweepResult> = pool.install(|| {
        todo.par_iter()
            .map(|&(i, v)| -> Result<SweepResult> {
                let row = evaluate_point(config.model, &config.params, &config.sweep.name, v, &config.solver, i, &hash);
                let mut w = appender.lock().expect("appender poisoned");
                w.write_record(row.record(&config.sweep.name))?;
                w.flush()?;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by_key(|r| r.index);

    let manifest = SweepManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        options_hash: hash,
        seeds: Vec::new(),
        threads,
        points: points.len(),
        evaluated: rows.len(),
        skipped: done.len(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
        columns: COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(SweepOutcome { rows, skipped: done.len(), csv_path, manifest_path })
}

/// Predicates for [`bisect_transition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    /// 1D liquid drop: more than one interval is optimal.
    #[serde(rename = "k-opt-above-1")]
    KOptAbove1,
    /// Liquid drop balls: `E(m) − 2E(m/2) > 0`.
    CharmstarPositive,
    /// Flocking: the minimizer is labelled Solid.
    Solid,
    /// Keller–Segel: `M_* > atom_tol`.
    AtomPositive,
}

impl Predicate {
    pub fn model(self) -> Model {
        match self {
            Predicate::KOptAbove1 => Model::Gld1d,
            Predicate::CharmstarPositive => Model::GldBalls,
            Predicate::Solid => Model::Flocking,
            Predicate::AtomPositive => Model::Gks,
        }
    }

    fn holds(self, row: &SweepResult) -> Result<bool> {
        if let Some(e) = &row.error {
            return Err(Error::Config(format!("evaluation at {} failed: {e}", row.value)));
        }
        Ok(match self {
            Predicate::KOptAbove1 => row.k_opt.is_some_and(|k| k > 1),
            Predicate::CharmstarPositive => row.label == "positive",
            Predicate::Solid => row.label == "solid",
            Predicate::AtomPositive => row.label == "atom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub lo: f64,
    pub hi: f64,
    /// Midpoint of the final bracket.
    pub critical: f64,
    pub predicate_lo: bool,
    pub predicate_hi: bool,
    pub evaluations: usize,
}

/// Bisects on `predicate` over the parameter `name` until the bracket half-width is at most `tol`.
pub fn bisect_transition(
    predicate: Predicate,
    params: &FixedParams,
    name: &str,
    bracket: (f64, f64),
    tol: f64,
    solver: &SolverSettings,
) -> Result<Bisection> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi && tol > 0.0) {
        return Err(Error::Config(format!("need lo < hi and tol > 0, got [{lo}, {hi}], tol {tol}")));
    }
    let model = predicate.model();
    let eval = |v: f64| predicate.holds(&evaluate_point(model, params, name, v, solver, 0, ""));
    let (plo, phi) = (eval(lo)?, eval(hi)?);
    if plo == phi {
        return Err(Error::Bracket(format!("{name} ∈ [{lo}, {hi}], predicate {plo}")));
    }
    let mut evaluations = 2;
    while 0.5 * (hi - lo) > tol {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? == plo {
            lo = mid;
        } else {
            hi = mid;
        }
        evaluations += 1;
    }
    Ok(Bisection { lo, hi, critical: 0.5 * (lo + hi), predicate_lo: plo, predicate_hi: phi, evaluations })
}
