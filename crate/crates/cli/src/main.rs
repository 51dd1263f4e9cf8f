//! `meanfield`: command-line front end for the liquid drop, flocking and Keller–Segel models.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use meanfield_core::flocking::{self, FlockParams, InitPolicy, Phase, PhaseTolerances, SolveReport, SolverOptions};
use meanfield_core::keller_segel::{self, Existence, GksParams, Regime, RelaxedOptions};
use meanfield_core::kernels::{PowerKernel, RadialDensity, RadialGrid};
use meanfield_core::liquid_drop::{self, GldParams, Sign};
use meanfield_core::oracles::{self, McConfig, SampledDensity};
use meanfield_core::sweep::{self, FixedParams, Predicate, SolverSettings, SweepConfig};
use meanfield_core::Error;
use output::Report;

#[derive(Parser)]
#[command(name = "meanfield", version, about = "Energies, minimizers and thresholds for mean-field models")]
struct Cli {
    /// Print a single JSON object instead of `key: value` lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generalized liquid drop model.
    #[command(subcommand)]
    Gld(Gld),
    /// Flocking model with density cap 1.
    #[command(subcommand)]
    Flock(Flock),
    /// Generalized Keller–Segel model.
    #[command(subcommand)]
    Gks(Gks),
    /// Parameter sweeps and transition bisection.
    #[command(subcommand)]
    Sweep(Sweep),
    /// Brute-force references.
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Subcommand)]
enum Gld {
    /// Perimeter and Riesz energy of the ball of volume m.
    BallEnergy {
        #[command(flatten)]
        p: GldArgs,
        #[arg(long)]
        mass: f64,
    },
    /// m_* (ball vs two half balls) and m_c^stab.
    Thresholds {
        #[command(flatten)]
        p: GldArgs,
    },
    /// Exact 1D ground state (λ ∈ (0, 1)).
    #[command(name = "solve-1d")]
    Solve1d {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        mass: f64,
    },
    /// Sign of E(ball of m) − 2 E(ball of m/2).
    Charmstar {
        #[command(flatten)]
        p: GldArgs,
        #[arg(long)]
        mass: f64,
        /// Relative tolerance for reporting zero.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

#[derive(Args)]
struct GldArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    lambda: f64,
    /// Use this value of ½∬_{B1×B1}|x−y|^{−λ} instead of computing it.
    #[arg(long)]
    riesz_constant: Option<f64>,
}

#[derive(Args)]
struct FlockArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    alpha: f64,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Radial cells.
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// KKT tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

impl GridArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings { cells: self.grid_n, rmax: self.rmax, max_iter: self.max_iter, tol: self.tol, ..Default::default() }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Ball,
    Measure,
    Uniform,
    Best,
}

impl From<InitArg> for InitPolicy {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Ball => InitPolicy::Ball,
            InitArg::Measure => InitPolicy::Measure,
            InitArg::Uniform => InitPolicy::Uniform,
            InitArg::Best => InitPolicy::Best,
        }
    }
}

#[derive(Subcommand)]
enum Flock {
    /// Minimizer over 0 ≤ ρ ≤ 1 with mass m.
    Minimize {
        #[command(flatten)]
        p: FlockArgs,
        #[arg(long)]
        mass: f64,
        #[arg(long, value_enum, default_value_t = InitArg::Best)]
        init: InitArg,
        #[command(flatten)]
        grid: GridArgs,
        /// Include the grid edges and cell values.
        #[arg(long)]
        profile: bool,
    },
    /// Minimizer over probability densities without the cap.
    Measure {
        #[command(flatten)]
        p: FlockArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        profile: bool,
    },
    /// Phase label of a profile written by `flock minimize --json --profile`.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        value_tol: f64,
        #[arg(long, default_value_t = 1e-3)]
        measure_tol: f64,
    },
}

#[derive(Args)]
struct GksArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    q: f64,
}

impl GksArgs {
    fn params(&self) -> Result<GksParams, Error> {
        GksParams::new(self.dim, self.q, self.alpha)
    }
}

#[derive(Subcommand)]
enum Gks {
    /// Finiteness of the infimum and the conformal regime.
    Verdict {
        #[command(flatten)]
        p: GksArgs,
    },
    /// Exponent e with E(m) = m^e E(1).
    Exponent {
        #[command(flatten)]
        p: GksArgs,
    },
    /// Minimizer of the relaxed functional over (ρ, M).
    Relaxed {
        #[command(flatten)]
        p: GksArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        atom_tol: Option<f64>,
        /// Keep M = 0.
        #[arg(long)]
        forbid_atom: bool,
        #[arg(long)]
        profile: bool,
    },
    /// Explicit minimizer for α = 2.
    Alpha2 {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        profile: bool,
    },
    /// Concentration threshold in q for α = 4 (N ≥ 6).
    #[command(name = "alpha4-threshold")]
    Alpha4Threshold {
        #[arg(long)]
        dim: usize,
    },
}

#[derive(Subcommand)]
enum Sweep {
    /// Runs a TOML sweep config; resumes an interrupted run in the same output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Bisects a predicate over one parameter.
    Bisect {
        #[arg(long, value_enum)]
        predicate: PredicateArg,
        /// Swept parameter: dim, lambda, alpha, mass or q.
        #[arg(long)]
        param: String,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        /// Half-width of the final bracket.
        #[arg(long)]
        bracket_tol: f64,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredicateArg {
    /// 1D liquid drop: more than one interval.
    #[value(name = "k-opt-above-1")]
    KOptAbove1,
    /// Liquid drop balls: E(m) > 2E(m/2).
    CharmstarPositive,
    /// Flocking: Solid phase.
    Solid,
    /// Keller–Segel: M_* above the atom tolerance.
    AtomPositive,
}

#[derive(Subcommand)]
enum Oracle {
    /// Monte Carlo estimate of ½∬ρ|x−y|^p ρ for ρ uniform on a ball, next to the closed form.
    Mc {
        #[arg(long)]
        dim: usize,
        /// Kernel exponent p (−λ for Riesz, α for attraction).
        #[arg(long, allow_hyphen_values = true)]
        exponent: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Total mass; defaults to the ball's volume (ρ = 1).
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
}

enum Failure {
    Validation(String),
    Unconverged,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::NonFinite(_) => Failure::Other(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, cli.json) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Unconverged) => {
            eprintln!("error: solver did not converge; output above is the last iterate");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, json: bool) -> Outcome {
    match command {
        Command::Gld(c) => gld(c, json),
        Command::Flock(c) => flock(c, json),
        Command::Gks(c) => gks(c, json),
        Command::Sweep(c) => sweep_cmd(c, json),
        Command::Oracle(c) => oracle(c, json),
    }
}

fn riesz_constant(p: &GldArgs) -> Result<f64, Failure> {
    match p.riesz_constant {
        Some(c) if c > 0.0 && c.is_finite() => Ok(c),
        Some(c) => Err(Failure::Validation(format!("riesz constant must be positive, got {c}"))),
        None => Ok(liquid_drop::ball_riesz_constant(p.dim, p.lambda)?),
    }
}

fn sign_name(s: Sign) -> &'static str {
    match s {
        Sign::Negative => "negative",
        Sign::Zero => "zero",
        Sign::Positive => "positive",
    }
}

fn gld(c: Gld, json: bool) -> Outcome {
    let mut r = Report::new();
    match c {
        Gld::BallEnergy { p, mass } => {
            let params = GldParams::new(p.dim, p.lambda, mass)?;
            let e = liquid_drop::ball_energy_with_constant(&params, riesz_constant(&p)?);
            r.num("perimeter", e.perimeter).num("repulsive", e.repulsive).num("energy", e.total);
        }
        Gld::Thresholds { p } => {
            GldParams::new(p.dim, p.lambda, 1.0)?;
            let c = riesz_constant(&p)?;
            r.num("riesz_constant", c)
                .num("m_star", liquid_drop::m_star_with_constant(p.dim, p.lambda, c)?)
                .num("m_c_stab", liquid_drop::m_c_stab_with_constant(p.dim, p.lambda, c)?);
        }
        Gld::Solve1d { lambda, mass } => {
            let s = liquid_drop::solve_1d(lambda, mass)?;
            r.num("energy", s.energy).put("k", s.k_opt).num("piece_mass", s.piece_mass);
        }
        Gld::Charmstar { p, mass, tol } => {
            if p.riesz_constant.is_some() {
                return Err(Failure::Validation("charmstar computes its own constant".into()));
            }
            let s = liquid_drop::charmstar_sign_with_tolerance(p.dim, p.lambda, mass, tol)?;
            let params = GldParams::new(p.dim, p.lambda, mass)?;
            let half = GldParams { mass: mass / 2.0, ..params };
            let whole = liquid_drop::ball_energy(&params)?.total;
            let split = 2.0 * liquid_drop::ball_energy(&half)?.total;
            r.put("sign", sign_name(s)).num("ball_energy", whole).num("split_energy", split).num("difference", whole - split);
        }
    }
    r.print(json);
    Ok(())
}

fn solver_options(grid: &GridArgs) -> SolverOptions {
    grid.settings().flocking()
}

fn profile_json(d: &RadialDensity) -> serde_json::Value {
    json!({ "dim": d.grid().dim(), "edges": d.grid().edges(), "values": d.values() })
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Liquid => "liquid",
        Phase::Intermediate => "intermediate",
        Phase::Solid => "solid",
    }
}

fn solve_report(r: &mut Report, s: &SolveReport) {
    let d = &s.density;
    r.num("energy", s.energy.total)
        .num("repulsive", s.energy.repulsive)
        .num("attractive", s.energy.attractive)
        .num("mass", d.mass())
        .num("max_density", d.max())
        .num("support_radius", d.support_radius(1e-9))
        .num("rmax", d.grid().rmax())
        .put("cells", d.grid().len())
        .put("iterations", s.iterations)
        .num("kkt_residual", s.kkt_residual)
        .put("converged", s.converged);
}

fn flock(c: Flock, json: bool) -> Outcome {
    let mut r = Report::new();
    let converged = match c {
        Flock::Minimize { p, mass, init, grid, profile } => {
            let params = FlockParams::new(p.dim, p.lambda, p.alpha, mass)?;
            let s = flocking::minimize_flock(&params, init.into(), &solver_options(&grid))?;
            let label = flocking::classify_phase(&s.density, PhaseTolerances::default());
            solve_report(&mut r, &s);
            r.put("phase", phase_name(label.phase))
                .num("plateau_measure", label.plateau_measure)
                .num("intermediate_measure", label.intermediate_measure);
            if let Some(i) = s.init {
                r.put("init", format!("{i:?}").to_lowercase());
            }
            if profile {
                r.put("profile", profile_json(&s.density));
            }
            s.converged
        }
        Flock::Measure { p, grid, profile } => {
            FlockParams::new(p.dim, p.lambda, p.alpha, 1.0)?;
            let s = flocking::minimize_measure(p.dim, p.lambda, p.alpha, &solver_options(&grid))?;
            solve_report(&mut r, &s);
            if profile {
                r.put("profile", profile_json(&s.density));
            }
            s.converged
        }
        Flock::Classify { input, value_tol, measure_tol } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Failure::Other(format!("{}: {e}", input.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Validation(e.to_string()))?;
            let d = density_from_json(v.get("profile").unwrap_or(&v))?;
            let l = flocking::classify_phase(&d, PhaseTolerances { value: value_tol, measure: measure_tol });
            r.put("phase", phase_name(l.phase))
                .num("max_density", l.max_density)
                .num("plateau_measure", l.plateau_measure)
                .num("intermediate_measure", l.intermediate_measure)
                .num("support_measure", l.support_measure);
            true
        }
    };
    r.print(json);
    if converged {
        Ok(())
    } else {
        Err(Failure::Unconverged)
    }
}

fn density_from_json(v: &serde_json::Value) -> Result<RadialDensity, Failure> {
    let bad = |what: &str| Failure::Validation(format!("profile needs `{what}`"));
    let dim = v.get("dim").and_then(|x| x.as_u64()).ok_or_else(|| bad("dim"))? as usize;
    let floats = |key: &str| -> Result<Vec<f64>, Failure> {
        v.get(key)
            .and_then(|x| x.as_array())
            .ok_or_else(|| bad(key))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad(key)))
            .collect()
    };
    let grid = RadialGrid::from_edges(dim, floats("edges")?)?;
    Ok(RadialDensity::new(grid, floats("values")?)?)
}

fn gks(c: Gks, json: bool) -> Outcome {
    let mut r = Report::new();
    let mut converged = true;
    match c {
        Gks::Verdict { p } => {
            let params = p.params()?;
            let v = keller_segel::existence_verdict(&params);
            let n = params.dim as f64;
            r.put(
                "existence",
                match v.existence {
                    Existence::MinusInfinity => "MinusInfinity",
                    Existence::Finite => "Finite",
                },
            )
            .put(
                "regime",
                match v.regime {
                    Regime::Subconformal => "Subconformal",
                    Regime::Conformal => "Conformal",
                    Regime::Superconformal => "Superconformal",
                },
            )
            .num("finiteness_threshold", n / (n + params.alpha))
            .num("conformal_q", 2.0 * n / (2.0 * n + params.alpha));
        }
        Gks::Exponent { p } => {
            let params = p.params()?;
            r.num("exponent", keller_segel::mass_scaling_exponent(&params)?);
        }
        Gks::Relaxed { p, grid, atom_tol, forbid_atom, profile } => {
            let params = p.params()?;
            let mut opts: RelaxedOptions = SolverSettings { atom_tol, ..grid.settings() }.relaxed();
            opts.forbid_atom = forbid_atom;
            let (state, s) = keller_segel::minimize_relaxed(&params, &opts)?;
            r.num("energy", s.energy.total)
                .num("entropy", s.energy.entropy)
                .num("attractive", s.energy.attractive)
                .num("atom_coupling", s.energy.atom)
                .num("atom_mass", state.atom)
                .put("atom", state.atom > opts.atom_tol)
                .num("rmax", s.density.grid().rmax())
                .put("cells", s.density.grid().len())
                .put("iterations", s.iterations)
                .num("kkt_residual", s.kkt_residual)
                .put("converged", s.converged);
            if profile {
                r.put("profile", profile_json(&s.density));
            }
            converged = s.converged;
        }
        Gks::Alpha2 { dim, q, profile } => {
            let params = GksParams::new(dim, q, 2.0)?;
            let d = keller_segel::alpha2_exact_profile(dim, q)?;
            let e = keller_segel::gks_energy(&d, &params)?;
            r.num("energy", e.total)
                .num("entropy", e.entropy)
                .num("attractive", e.attractive)
                .num("mass", d.mass())
                .num("second_moment", d.moment(2.0))
                .num("rmax", d.grid().rmax());
            if profile {
                r.put("profile", profile_json(&d));
            }
        }
        Gks::Alpha4Threshold { dim } => {
            match keller_segel::alpha4_threshold_ratio(dim) {
                Some((a, b)) => r.num("threshold", a as f64 / b as f64).put("ratio", format!("{a}/{b}")),
                None => r.put("threshold", serde_json::Value::Null).put("ratio", serde_json::Value::Null),
            };
        }
    }
    r.print(json);
    if converged {
        Ok(())
    } else {
        Err(Failure::Unconverged)
    }
}

fn sweep_cmd(c: Sweep, json: bool) -> Outcome {
    let mut r = Report::new();
    match c {
        Sweep::Run { config, threads } => {
            let mut cfg = SweepConfig::from_path(&config)?;
            if threads.is_some() {
                cfg.threads = threads;
            }
            let out = sweep::run_sweep(&cfg)?;
            let failed = out.rows.iter().filter(|x| x.error.is_some()).count();
            let unconverged = out.rows.iter().filter(|x| x.error.is_none() && !x.converged).count();
            r.put("csv", out.csv_path.display().to_string())
                .put("manifest", out.manifest_path.display().to_string())
                .put("evaluated", out.rows.len())
                .put("skipped", out.skipped)
                .put("failed", failed)
                .put("unconverged", unconverged);
            r.print(json);
            if failed + unconverged > 0 {
                return Err(Failure::Unconverged);
            }
        }
        Sweep::Bisect { predicate, param, lo, hi, bracket_tol, dim, lambda, alpha, mass, q, grid } => {
            let pred = match predicate {
                PredicateArg::KOptAbove1 => Predicate::KOptAbove1,
                PredicateArg::CharmstarPositive => Predicate::CharmstarPositive,
                PredicateArg::Solid => Predicate::Solid,
                PredicateArg::AtomPositive => Predicate::AtomPositive,
            };
            let fixed = FixedParams { dim, lambda, alpha, mass, q };
            let b = sweep::bisect_transition(pred, &fixed, &param, (lo, hi), bracket_tol, &grid.settings())?;
            r.num("critical", b.critical)
                .num("lo", b.lo)
                .num("hi", b.hi)
                .put("predicate_lo", b.predicate_lo)
                .put("predicate_hi", b.predicate_hi)
                .put("evaluations", b.evaluations);
            r.print(json);
        }
    }
    Ok(())
}

fn oracle(c: Oracle, json: bool) -> Outcome {
    let Oracle::Mc { dim, exponent, radius, mass, samples, seed } = c;
    let volume = meanfield_core::geometry::ball_volume(dim) * radius.powi(dim as i32);
    let mass = mass.unwrap_or(volume);
    let rho = SampledDensity::Ball { dim, radius, mass };
    let est = oracles::mc_double_integral(&rho, PowerKernel { exponent }, &McConfig { samples, seed })?;
    let h = mass / volume;
    let exact = h * h * radius.powf(2.0 * dim as f64 + exponent) * oracles::ball_kernel_constant(dim, exponent)?;
    let mut r = Report::new();
    r.num("estimate", est.estimate)
        .num("std_error", est.std_error)
        .num("closed_form", exact)
        .num("sigmas", (est.estimate - exact) / est.std_error)
        .put("samples", est.samples)
        .put("seed", est.seed);
    r.print(json);
    Ok(())
}
