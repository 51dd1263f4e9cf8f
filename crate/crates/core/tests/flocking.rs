use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use meanfield_core::flocking::*;
use meanfield_core::kernels::{GridSpec, RadialDensity};
use meanfield_core::oracles::{brute_force_bathtub, constant_on_ball_scan, geometric_heights, ScanModel};

fn median_height(rho: &RadialDensity) -> f64 {
    let mut v: Vec<f64> = rho.values().iter().cloned().filter(|x| *x > 1e-9).collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn projection_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=4);
        let grid = GridSpec::uniform(dim, n, 0.5 + rng.random::<f64>() * 2.0).build().unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..2.5)).collect();
        let mass = rng.random::<f64>() * grid.volume();
        let fast = bathtub_project(&grid, &v, mass).unwrap();
        let exact = brute_force_bathtub(&grid, &v, mass).unwrap();
        for (a, b) in fast.values().iter().zip(exact.values()) {
            assert!((a - b).abs() <= 1e-10, "{:?} vs {:?}", fast.values(), exact.values());
        }
    }
}

#[test]
fn projection_examples() {
    let grid = GridSpec::uniform(2, 6, 1.2).build().unwrap();
    let v = vec![0.3, 0.2, 0.5, 0.1, 0.0, 0.4];
    let mass: f64 = v.iter().zip(grid.w()).map(|(a, b)| a * b).sum();
    let p = bathtub_project(&grid, &v, mass).unwrap();
    for (a, b) in p.values().iter().zip(&v) {
        assert_relative_eq!(*a, *b, epsilon = 1e-12);
    }

    let mut v = vec![0.0; 6];
    v[2] = 5.0;
    let m = 0.5 * grid.w()[2];
    let p = bathtub_project(&grid, &v, m).unwrap();
    assert_relative_eq!(p.values()[2], 0.5, epsilon = 1e-12);
    assert!(p.values().iter().enumerate().all(|(i, x)| i == 2 || *x == 0.0));

    let edges = grid.edges();
    let v: Vec<f64> = (0..6).map(|i| if i < 3 { 10.0 } else { 0.0 }).collect();
    let r = edges[3];
    let ball = PI * r * r;
    let p = bathtub_project(&grid, &v, ball).unwrap();
    assert_eq!(p.values(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn large_mass_is_a_ball() {
    let params = FlockParams::new(3, 1.0, 2.0, 100.0).unwrap();
    let s = minimize_flock(&params, InitPolicy::Best, &SolverOptions::default()).unwrap();
    assert!(s.converged);
    assert!(s.kkt_residual < 1e-6);
    let label = classify_phase(&s.density, PhaseTolerances::default());
    assert_eq!(label.phase, Phase::Solid);
    let radius = (3.0 * 100.0 / (4.0 * PI)).powf(1.0 / 3.0);
    let h = s.density.grid().width(0);
    assert!((s.density.support_radius(1e-9) - radius).abs() <= 2.0 * h);
    assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn small_mass_is_liquid_at_scanned_height() {
    for mass in [0.5, 1.0] {
        let params = FlockParams::new(3, 1.0, 2.0, mass).unwrap();
        let s = minimize_flock(&params, InitPolicy::Best, &SolverOptions::default()).unwrap();
        assert!(s.converged && s.kkt_residual < 1e-6);
        assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
        let label = classify_phase(&s.density, PhaseTolerances::default());
        assert_eq!(label.phase, Phase::Liquid);
        let best = constant_on_ball_scan(&ScanModel::Flocking(params), &geometric_heights(1e-3, 1.0, 20_000)).unwrap();
        assert!(best.height < 1.0);
        assert_relative_eq!(median_height(&s.density), best.height, max_relative = 1e-2);
        assert!(s.energy.total <= best.energy.total * (1.0 + 1e-3));
    }
}

#[test]
fn scan_prefers_full_height_for_large_mass() {
    let params = FlockParams::new(3, 1.0, 2.0, 50.0).unwrap();
    let best = constant_on_ball_scan(&ScanModel::Flocking(params), &geometric_heights(1e-3, 1.0, 2000)).unwrap();
    assert_eq!(best.height, 1.0);
    assert_relative_eq!(best.radius, (3.0 * 50.0 / (4.0 * PI)).powf(1.0 / 3.0), max_relative = 1e-12);
}

#[test]
fn measure_minimizer_is_a_flat_ball_for_newtonian_repulsion() {
    let s = minimize_measure(3, 1.0, 2.0, &SolverOptions::default()).unwrap();
    assert!(s.converged && s.kkt_residual < 1e-6);
    assert_relative_eq!(median_height(&s.density), 3.0 / (2.0 * PI), max_relative = 1e-3);
    assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn one_dimensional_phases() {
    let opts = SolverOptions::default();
    let phase = |m: f64, opts: &SolverOptions| {
        let p = FlockParams::new(1, 0.5, 2.0, m).unwrap();
        let s = minimize_flock(&p, InitPolicy::Best, opts).unwrap();
        assert!(s.converged && s.kkt_residual < 1e-6);
        classify_phase(&s.density, PhaseTolerances::default()).phase
    };
    assert_eq!(phase(0.5, &opts), Phase::Liquid);
    assert_eq!(phase(1.0, &opts), Phase::Liquid);
    assert_eq!(phase(2.0, &opts), Phase::Intermediate);
    assert_eq!(phase(3.0, &opts), Phase::Intermediate);
    assert_eq!(phase(5.0, &SolverOptions { cells: 4096, ..opts.clone() }), Phase::Intermediate);
}

#[test]
fn energy_rejects_infeasible_density() {
    let grid = GridSpec::uniform(2, 16, 2.0).build().unwrap();
    let params = FlockParams::new(2, 1.0, 2.0, 1.0).unwrap();
    let over = RadialDensity::ball(grid.clone(), 0.3, 1.5);
    assert!(flock_energy(&over, &params).is_err());
    let ok = RadialDensity::ball(grid, 1.0, 1.0 / PI);
    assert!(flock_energy(&ok, &params).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn projection_is_feasible_and_stationary(
        v in prop::collection::vec(-2.0f64..3.0, 2..40),
        fill in 0.01f64..0.99,
        dim in 1usize..5,
    ) {
        let grid = GridSpec::uniform(dim, v.len(), 1.0).build().unwrap();
        let mass = fill * grid.volume();
        let p = bathtub_project(&grid, &v, mass).unwrap();
        prop_assert!((p.mass() - mass).abs() <= 1e-9 * mass.max(1.0));
        prop_assert!(p.values().iter().all(|x| (0.0..=1.0).contains(x)));
        // v − ρ is constant on the free cells
        let free: Vec<f64> = p.values().iter().zip(&v).filter(|(x, _)| **x > 1e-12 && **x < 1.0 - 1e-12).map(|(x, y)| y - x).collect();
        if let Some(first) = free.first() {
            prop_assert!(free.iter().all(|d| (d - first).abs() <= 1e-9));
        }
    }
}
