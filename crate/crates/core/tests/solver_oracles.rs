use std::f64::consts::PI;

use viamfg::geometry::build_interval_domain;
use viamfg::measures::{gaussian_bump, MeasureField};
use viamfg::mfg::{solve_fp_neumann, solve_hjb_neumann, solve_mfg, Cascade, MfgSolver, SolverConfig};
use viamfg::model::ModelSpec;
use viamfg::Error;

/// Cell-centred Neumann Laplacian eigenmode `cos(pi k (i + 1/2) / M)` on the
/// active cells, and its implicit-Euler decay factor per step.
fn cosine_mode(active: &[usize], k: usize, nu: f64, h: f64, dt: f64) -> (Vec<f64>, f64) {
    let m = active.len() as f64;
    let mode = (0..active.len()).map(|i| (PI * k as f64 * (i as f64 + 0.5) / m).cos()).collect();
    let lambda = 4.0 * nu / (h * h) * (PI * k as f64 / (2.0 * m)).sin().powi(2);
    (mode, 1.0 / (1.0 + dt * lambda))
}

#[test]
fn backward_heat_matches_discrete_eigenmode() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let (nu, dt) = (0.05, 0.01);
    let model = ModelSpec::heat(nu, 0.5);
    let cfg = SolverConfig::with_dt(dt);
    let eps = g.finest_eps();
    let mask = g.mask(eps);
    let active: Vec<usize> = (0..g.len()).filter(|&k| mask[k]).collect();
    for k in [1, 3] {
        let (mode, factor) = cosine_mode(&active, k, nu, g.h, dt);
        let mut terminal = vec![0.0; g.len()];
        for (i, &a) in active.iter().enumerate() {
            terminal[a] = mode[i];
        }
        let m0 = gaussian_bump(&g, [0.5, 0.0], 0.1, 0.2);
        let flow = vec![m0; 51];
        let u = solve_hjb_neumann(&g, eps, &model, &flow, &terminal, &cfg).unwrap();
        for (n, slice) in u.iter().enumerate() {
            let expect = factor.powi(50 - n as i32);
            for (i, &a) in active.iter().enumerate() {
                assert!((slice[a] - expect * mode[i]).abs() < 1e-12, "k={k} n={n} i={i}");
            }
        }
    }
}

#[test]
fn forward_heat_matches_discrete_eigenmode() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let (nu, dt) = (0.05, 0.01);
    let model = ModelSpec::heat(nu, 0.5);
    let eps = g.finest_eps();
    let mask = g.mask(eps);
    let active: Vec<usize> = (0..g.len()).filter(|&k| mask[k]).collect();
    let (mode, factor) = cosine_mode(&active, 2, nu, g.h, dt);
    let mut density = vec![0.0; g.len()];
    for (i, &a) in active.iter().enumerate() {
        density[a] = 1.0 + 0.5 * mode[i];
    }
    let mass: f64 = density.iter().zip(&g.quad_weights).map(|(d, q)| d * q).sum();
    let density: Vec<f64> = density.iter().map(|d| d / mass).collect();
    let m0 = MeasureField::from_density(&g, density.clone()).unwrap();
    let drift = vec![vec![[0.0, 0.0]; g.len()]; 50];
    let flow = solve_fp_neumann(&g, eps, &model, &drift, &m0, &SolverConfig::with_dt(dt)).unwrap();
    for (n, m) in flow.iter().enumerate() {
        let f = factor.powi(n as i32);
        for (i, &a) in active.iter().enumerate() {
            let expect = (1.0 + 0.5 * f * mode[i]) / mass;
            assert!((m.density[a] - expect).abs() < 1e-11, "n={n} i={i}");
        }
        assert!((m.mass - 1.0).abs() < 1e-12);
    }
}

#[test]
fn backward_solve_is_monotone_in_terminal_data() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let model = ModelSpec::shipped_1d();
    let cfg = SolverConfig::with_dt(0.01);
    let eps = g.finest_eps();
    let m0 = gaussian_bump(&g, [0.4, 0.0], 0.1, 0.2);
    let flow = vec![m0; 51];
    let g1: Vec<f64> = g.nodes.iter().map(|x| (5.0 * x[0]).sin()).collect();
    let g2: Vec<f64> = g.nodes.iter().map(|x| (5.0 * x[0]).sin() + 0.05 * (1.0 + (17.0 * x[0]).cos())).collect();
    let u1 = solve_hjb_neumann(&g, eps, &model, &flow, &g1, &cfg).unwrap();
    let u2 = solve_hjb_neumann(&g, eps, &model, &flow, &g2, &cfg).unwrap();
    let mask = g.mask(eps);
    for (a, b) in u1.iter().zip(&u2) {
        for k in 0..g.len() {
            if mask[k] {
                assert!(b[k] >= a[k] - 1e-10, "comparison violated at node {k}");
            }
        }
    }
}

#[test]
fn decoupled_values_do_not_depend_on_the_measure() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let model = ModelSpec::decoupled_1d();
    let cfg = SolverConfig::with_dt(0.01);
    let a = solve_mfg(&g, &model, 0.0, &gaussian_bump(&g, [0.35, 0.0], 0.08, 0.2), &cfg).unwrap();
    let b = solve_mfg(&g, &model, 0.0, &gaussian_bump(&g, [0.6, 0.0], 0.15, 0.2), &cfg).unwrap();
    for n in 0..=a.nt {
        for (x, y) in a.u[n].iter().zip(&b.u[n]) {
            assert_eq!(x, y);
        }
    }
}

#[test]
fn coupled_solve_conserves_mass_and_reports_picard_history() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let model = ModelSpec::shipped_1d();
    let sol = solve_mfg(&g, &model, 0.0, &gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2), &SolverConfig::with_dt(0.01)).unwrap();
    for n in 0..=sol.nt {
        assert!((sol.mass(n) - sol.m0_mass).abs() < 1e-12);
    }
    assert!(sol.residuals.last().unwrap() <= &1e-12);
    assert!(sol.residuals_monotone);
    assert_eq!(sol.eps_used, g.eps_levels);
    let diffs = sol.cascade_differences();
    assert_eq!(diffs.len(), g.eps_levels.len() - 1);
}

#[test]
fn picard_budget_exhaustion_is_a_convergence_error() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let model = ModelSpec::shipped_1d();
    let mut cfg = SolverConfig::with_dt(0.01);
    cfg.max_iters = 3;
    cfg.cascade = Cascade::FinestOnly;
    let err = MfgSolver::new(&g, &model, cfg).unwrap().solve(0.0, &gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2)).unwrap_err();
    match err {
        Error::Convergence { iterations, ref history, .. } => {
            assert_eq!(iterations, 3);
            assert!(!history.is_empty());
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn misaligned_start_time_is_rejected() {
    let g = build_interval_domain(1.0, 32).unwrap();
    let m0 = gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2);
    let err = solve_mfg(&g, &ModelSpec::shipped_1d(), 0.013, &m0, &SolverConfig::with_dt(0.01)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
