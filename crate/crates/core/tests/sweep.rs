use approx::assert_relative_eq;
use std::fs;

use meanfield_core::liquid_drop::{m_star, m_star_1d};
use meanfield_core::sweep::*;

fn gld_config(dir: &std::path::Path) -> SweepConfig {
    SweepConfig::from_toml_str(&format!(
        r#"
model = "gld-1d"
output = "{}"
threads = 2
[params]
lambda = 0.5
[sweep]
name = "mass"
start = 0.5
stop = 6.0
step = 0.5
"#,
        dir.display()
    ))
    .unwrap()
}

fn comparable(rows: &[SweepResult]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            let mut r = r.clone();
            r.wall_seconds = 0.0;
            serde_json::to_string(&r).unwrap()
        })
        .collect()
}

#[test]
fn sweep_writes_csv_and_manifest_then_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = gld_config(&tmp.path().join("run"));
    let first = run_sweep(&cfg).unwrap();
    assert_eq!(first.rows.len(), 12);
    assert_eq!(first.skipped, 0);
    assert!(first.rows.iter().all(|r| r.error.is_none() && r.converged));
    let split = m_star_1d(0.5).unwrap();
    for r in &first.rows {
        assert_eq!(r.k_opt.unwrap() > 1, r.value > split, "mass {}", r.value);
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&first.manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["points"], 12);
    assert_eq!(manifest["options_hash"], cfg.options_hash());

    let again = run_sweep(&cfg).unwrap();
    assert_eq!(again.rows.len(), 0);
    assert_eq!(again.skipped, 12);

    let text = fs::read_to_string(&first.csv_path).unwrap();
    let kept: Vec<&str> = text.lines().take(6).collect();
    fs::write(&first.csv_path, kept.join("\n") + "\n").unwrap();
    let resumed = run_sweep(&cfg).unwrap();
    assert_eq!(resumed.skipped, 5);
    assert_eq!(resumed.rows.len(), 7);
    assert_eq!(comparable(&resumed.rows), comparable(&first.rows[5..]));
    let lines = fs::read_to_string(&first.csv_path).unwrap().lines().count();
    assert_eq!(lines, 13);
}

#[test]
fn sweep_refuses_output_from_other_options() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = gld_config(tmp.path());
    run_sweep(&cfg).unwrap();
    cfg.params.lambda = Some(0.6);
    assert!(run_sweep(&cfg).is_err());
}

#[test]
fn sweep_is_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = gld_config(&tmp.path().join("a"));
    a.threads = Some(1);
    let mut b = gld_config(&tmp.path().join("b"));
    b.threads = Some(4);
    assert_eq!(comparable(&run_sweep(&a).unwrap().rows), comparable(&run_sweep(&b).unwrap().rows));
}

#[test]
fn flocking_sweep_labels_phases() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SweepConfig::from_toml_str(&format!(
        r#"
model = "flocking"
output = "{}"
[params]
dim = 3
lambda = 1.0
alpha = 2.0
[sweep]
name = "mass"
values = [0.5, 100.0]
[solver]
cells = 256
"#,
        tmp.path().display()
    ))
    .unwrap();
    let out = run_sweep(&cfg).unwrap();
    let labels: Vec<&str> = out.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["liquid", "solid"]);
}

#[test]
fn bisection_finds_known_transitions() {
    let params = FixedParams { lambda: Some(0.5), ..Default::default() };
    let b = bisect_transition(Predicate::KOptAbove1, &params, "mass", (1.0, 5.0), 1e-4, &SolverSettings::default()).unwrap();
    assert!((b.critical - m_star_1d(0.5).unwrap()).abs() <= 1e-4);
    assert!(!b.predicate_lo && b.predicate_hi);

    let params = FixedParams { dim: Some(3), lambda: Some(1.0), ..Default::default() };
    let b = bisect_transition(Predicate::CharmstarPositive, &params, "mass", (1.0, 8.0), 1e-6, &SolverSettings::default())
        .unwrap();
    assert_relative_eq!(b.critical, m_star(3, 1.0).unwrap(), max_relative = 1e-5);

    let params = FixedParams { dim: Some(6), alpha: Some(4.0), ..Default::default() };
    let b = bisect_transition(Predicate::AtomPositive, &params, "q", (0.605, 0.65), 5e-3, &SolverSettings::default()).unwrap();
    assert!(b.predicate_lo && !b.predicate_hi);
    assert!(b.critical > 0.605 && b.critical < 0.63, "{}", b.critical);

    assert!(bisect_transition(Predicate::AtomPositive, &params, "q", (0.65, 0.7), 1e-2, &SolverSettings::default()).is_err());
}

#[test]
fn config_validation_rejects_bad_input() {
    let base = r#"
model = "gks"
output = "out"
[params]
dim = 6
alpha = 4.0
[sweep]
name = "q"
values = [0.61, 0.65]
"#;
    assert!(SweepConfig::from_toml_str(base).is_ok());
    assert!(SweepConfig::from_toml_str(&base.replace("model = \"gks\"", "model = \"nope\"")).is_err());
    assert!(SweepConfig::from_toml_str(&base.replace("name = \"q\"", "name = \"mass\"")).is_err());
    assert!(SweepConfig::from_toml_str(&base.replace("values = [0.61, 0.65]", "start = 0.6\nstop = 0.5\nstep = 0.01")).is_err());
    assert!(SweepConfig::from_toml_str(&base.replace("alpha = 4.0", "")).is_err());
}
