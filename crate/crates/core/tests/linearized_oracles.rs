use viamfg::geometry::build_interval_domain;
use viamfg::linearized::{compute_k, solve_linearized, LinearizedData};
use viamfg::measures::{gaussian_bump, MeasureField};
use viamfg::mfg::{solve_mfg, SolverConfig};
use viamfg::model::ModelSpec;

#[test]
fn linearized_values_match_central_difference_of_the_solver() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let model = ModelSpec::shipped_1d();
    let cfg = SolverConfig::with_dt(0.01);
    let a = gaussian_bump(&g, [0.35, 0.0], 0.08, 0.2);
    let b = gaussian_bump(&g, [0.6, 0.0], 0.1, 0.2);
    let m0 = a.mix(&b, 0.5);
    let mu: Vec<f64> = (0..g.len()).map(|k| b.density[k] - a.density[k]).collect();
    let mu = MeasureField::signed(&g, mu).unwrap();

    let base = solve_mfg(&g, &model, 0.0, &m0, &cfg).unwrap();
    let lin = solve_linearized(&g, &model, &base, &mu, &LinearizedData::default(), &cfg).unwrap();
    assert!(lin.relative_residual < 1e-10);

    let s = 1e-3;
    let plus = solve_mfg(&g, &model, 0.0, &m0.mix(&b, s), &cfg).unwrap();
    let minus = solve_mfg(&g, &model, 0.0, &m0.mix(&a, s), &cfg).unwrap();
    // m0.mix(b, s) - m0.mix(a, s) = s (b - a), so the step is s/2 each way.
    let v = lin.v_full(0);
    let (up, um) = (plus.u_full(0), minus.u_full(0));
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(scale > 1e-4, "perturbation has no effect");
    let active = base.active();
    let mut worst = 0.0f64;
    for k in (0..g.len()).filter(|&k| active[k]) {
        let fd = (up[k] - um[k]) / s;
        worst = worst.max((fd - v[k]).abs());
    }
    assert!(worst < 1e-5 * scale, "worst {worst} scale {scale}");
}

#[test]
fn linearized_solution_is_linear_in_the_data() {
    let g = build_interval_domain(1.0, 48).unwrap();
    let model = ModelSpec::shipped_1d();
    let cfg = SolverConfig::with_dt(0.02);
    let m0 = gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2);
    let base = solve_mfg(&g, &model, 0.0, &m0, &cfg).unwrap();
    let p = gaussian_bump(&g, [0.4, 0.0], 0.07, 0.2);
    let mu1 = MeasureField::signed(&g, (0..g.len()).map(|k| p.density[k] - m0.density[k]).collect()).unwrap();
    let mu2 = MeasureField::signed(&g, mu1.density.iter().map(|d| -2.5 * d).collect()).unwrap();
    let v1 = solve_linearized(&g, &model, &base, &mu1, &LinearizedData::default(), &cfg).unwrap();
    let v2 = solve_linearized(&g, &model, &base, &mu2, &LinearizedData::default(), &cfg).unwrap();
    for n in 0..v1.v.len() {
        for (x, y) in v1.v[n].iter().zip(&v2.v[n]) {
            assert!((y + 2.5 * x).abs() < 1e-9 * (1.0 + x.abs()));
        }
        for (x, y) in v1.mu[n].iter().zip(&v2.mu[n]) {
            assert!((y + 2.5 * x).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn decoupled_model_has_vanishing_measure_derivative() {
    let g = build_interval_domain(1.0, 48).unwrap();
    let model = ModelSpec::decoupled_1d();
    let cfg = SolverConfig::with_dt(0.02);
    let m0 = gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2);
    let base = solve_mfg(&g, &model, 0.0, &m0, &cfg).unwrap();
    let y: Vec<usize> = base.nodes.iter().copied().step_by(7).collect();
    let k = compute_k(&g, &model, &base, 0.0, &y, &cfg).unwrap();
    for col in &k.k {
        assert!(col.iter().all(|v| v.abs() < 1e-14));
    }
}

#[test]
fn measure_derivative_rejects_inactive_nodes() {
    let g = build_interval_domain(1.0, 48).unwrap();
    let model = ModelSpec::shipped_1d();
    let cfg = SolverConfig::with_dt(0.02);
    let base = solve_mfg(&g, &model, 0.0, &gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2), &cfg).unwrap();
    let active = base.active();
    let outside = (0..g.len()).find(|&k| !active[k]).unwrap();
    assert!(compute_k(&g, &model, &base, 0.0, &[outside], &cfg).is_err());
}
