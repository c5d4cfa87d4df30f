use viamfg::geometry::{build_disk_domain, build_interval_domain, DomainGrid};
use viamfg::measures::{gaussian_bump, wasserstein1, wasserstein1_full, wasserstein1_lp, MeasureField};

#[test]
fn translated_bump_moves_by_the_shift() {
    let g = build_interval_domain(1.0, 128).unwrap();
    // Shift by an exact number of cells so the translate is exact on the lattice.
    let shift = 12;
    let a = gaussian_bump(&g, [0.35, 0.0], 0.06, 0.25);
    let mut d = vec![0.0; g.len()];
    d[shift..].copy_from_slice(&a.density[..g.len() - shift]);
    let b = MeasureField::from_density(&g, d).unwrap();
    assert!((a.mass - b.mass).abs() < 1e-14);
    let w = wasserstein1(&g, &a, &b).unwrap();
    assert!((w - shift as f64 * g.h).abs() < 1e-12, "{w}");
    let lp = wasserstein1_lp(&g, &a, &b).unwrap();
    assert!((lp - w).abs() < 1e-8);
}

#[test]
fn two_diracs_are_their_distance_apart() {
    let g = build_interval_domain(2.0, 50).unwrap();
    for (i, j) in [(0, 49), (3, 4), (17, 30)] {
        let w = wasserstein1(&g, &MeasureField::delta(&g, i), &MeasureField::delta(&g, j)).unwrap();
        assert!((w - (g.nodes[i][0] - g.nodes[j][0]).abs()).abs() < 1e-12);
    }
}

#[test]
fn disk_lp_recovers_euclidean_distance() {
    let g = build_disk_domain(1.0, 32).unwrap();
    let all = vec![true; g.len()];
    let pairs = [([-0.6, -0.1], [0.5, 0.2]), ([0.0, -0.7], [0.1, 0.65])];
    for (p, q) in pairs {
        let i = g.nearest_active(&all, &p);
        let j = g.nearest_active(&all, &q);
        let w = wasserstein1(&g, &MeasureField::delta(&g, i), &MeasureField::delta(&g, j)).unwrap();
        let (x, y) = (g.nodes[i], g.nodes[j]);
        assert!((w - (x[0] - y[0]).hypot(x[1] - y[1])).abs() < 1e-9);
    }
}

#[test]
fn mixture_distance_is_linear_in_the_weight() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let a = gaussian_bump(&g, [0.3, 0.0], 0.08, 0.2);
    let b = gaussian_bump(&g, [0.7, 0.0], 0.1, 0.2);
    let full = wasserstein1(&g, &a, &b).unwrap();
    for s in [0.1, 0.25, 0.5, 0.9] {
        let w = wasserstein1(&g, &a, &a.mix(&b, s)).unwrap();
        assert!((w - s * full).abs() < 1e-12, "s={s}");
    }
}

#[test]
fn mass_deficit_costs_half_the_diameter() {
    // With |phi| <= diam/2 the constant potential is optimal when one
    // measure is a scalar multiple of the other.
    for g in [build_interval_domain(1.0, 48).unwrap(), build_disk_domain(1.0, 32).unwrap()] {
        let a = gaussian_bump(&g, g.nodes[g.len() / 2], 0.15, 0.3);
        let c = 0.7;
        let b = MeasureField::from_density(&g, a.density.iter().map(|d| c * d).collect()).unwrap();
        let w = wasserstein1(&g, &a, &b).unwrap();
        let exact = (1.0 - c) * a.mass * g.diameter() / 2.0;
        assert!((w - exact).abs() < 1e-8, "{w} vs {exact}");
    }
}

/// A few weighted atoms; keeps the dual LP small.
fn atoms(g: &DomainGrid, pts: &[([f64; 2], f64)]) -> MeasureField {
    let all = vec![true; g.len()];
    let mut masses = vec![0.0; g.len()];
    for (p, w) in pts {
        masses[g.nearest_active(&all, p)] += w;
    }
    MeasureField::from_masses(g, &masses).unwrap()
}

#[test]
fn triangle_inequality_on_the_disk() {
    let g = build_disk_domain(1.0, 32).unwrap();
    let a = atoms(&g, &[([-0.3, 0.1], 0.5), ([-0.2, 0.3], 0.5)]);
    let b = atoms(&g, &[([0.3, 0.0], 0.7), ([0.4, -0.2], 0.3)]);
    let c = atoms(&g, &[([0.0, -0.4], 0.4), ([0.1, 0.5], 0.6)]);
    let ab = wasserstein1(&g, &a, &b).unwrap();
    let bc = wasserstein1(&g, &b, &c).unwrap();
    let ac = wasserstein1(&g, &a, &c).unwrap();
    assert!(ac <= ab + bc + 1e-9);
    assert!(ab > 0.0 && bc > 0.0 && ac > 0.0);
}

#[test]
fn optimal_potential_is_admissible() {
    let g = build_disk_domain(1.0, 32).unwrap();
    let a = atoms(&g, &[([-0.3, 0.2], 0.6), ([0.0, 0.0], 0.4)]);
    let b = atoms(&g, &[([0.35, -0.1], 0.5), ([0.2, 0.6], 0.5)]);
    let w = wasserstein1_full(&g, &a, &b, None).unwrap();
    let bound = g.diameter() / 2.0 + 1e-9;
    assert!(w.potential.iter().all(|p| p.abs() <= bound));
    let pairing: f64 = (0..g.len()).map(|k| w.potential[k] * (a.density[k] - b.density[k]) * g.quad_weights[k]).sum();
    assert!((pairing - w.value).abs() < 1e-8);
}

#[test]
fn restriction_never_increases_mass() {
    let g = build_interval_domain(1.0, 64).unwrap();
    let a = gaussian_bump(&g, [0.1, 0.0], 0.1, 0.3);
    let mut prev = a.mass;
    for &eps in &g.eps_levels {
        let r = a.restrict(&g, eps);
        assert!(r.mass <= a.mass + 1e-15);
        assert!(r.mass <= prev + 1e-15 || eps < g.eps_levels[0]);
        prev = r.mass;
    }
}
