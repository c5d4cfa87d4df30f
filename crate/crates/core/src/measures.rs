//! Discrete (sub)probability measures, generalized Wasserstein-1 distances
//! and empirical measures of player configurations.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainGrid, Point, Shape};
use crate::norms::{holder_norm, HolderOrder};

/// Identifies the grid a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTag {
    pub shape: Shape,
    pub n: usize,
}

impl GridTag {
    pub fn of(grid: &DomainGrid) -> Self {
        GridTag { shape: grid.shape, n: grid.n_axis }
    }
}

/// Node densities (mass per unit length or area).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureField {
    pub grid: GridTag,
    pub density: Vec<f64>,
    pub mass: f64,
    pub signed: bool,
}

impl MeasureField {
    /// Nonnegative subprobability measure from node densities.
    pub fn from_density(grid: &DomainGrid, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::Usage("density length does not match grid".into()));
        }
        if density.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::Domain("density must be finite and nonnegative".into()));
        }
        let mass = dot(&density, &grid.quad_weights);
        if mass > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("total mass {mass} exceeds one")));
        }
        Ok(MeasureField { grid: GridTag::of(grid), density, mass, signed: false })
    }

    pub fn from_masses(grid: &DomainGrid, masses: &[f64]) -> Result<Self> {
        let density = masses.iter().zip(&grid.quad_weights).map(|(m, q)| m / q).collect();
        Self::from_density(grid, density)
    }

    /// Signed measure (no positivity or mass constraint).
    pub fn signed(grid: &DomainGrid, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() || density.iter().any(|d| !d.is_finite()) {
            return Err(Error::Usage("signed density must be finite and match the grid".into()));
        }
        let mass = dot(&density, &grid.quad_weights);
        Ok(MeasureField { grid: GridTag::of(grid), density, mass, signed: true })
    }

    pub fn signed_from_masses(grid: &DomainGrid, masses: &[f64]) -> Result<Self> {
        let density = masses.iter().zip(&grid.quad_weights).map(|(m, q)| m / q).collect();
        Self::signed(grid, density)
    }

    /// Unit mass at a node.
    pub fn delta(grid: &DomainGrid, node: usize) -> Self {
        let mut density = vec![0.0; grid.len()];
        density[node] = 1.0 / grid.quad_weights[node];
        MeasureField { grid: GridTag::of(grid), density, mass: 1.0, signed: false }
    }

    pub fn masses(&self, grid: &DomainGrid) -> Vec<f64> {
        self.density.iter().zip(&grid.quad_weights).map(|(d, q)| d * q).collect()
    }

    pub fn is_probability(&self) -> bool {
        !self.signed && (self.mass - 1.0).abs() <= 1e-10
    }

    /// Zero outside `{dist > eps}`; mass is not renormalized.
    pub fn restrict(&self, grid: &DomainGrid, eps: f64) -> Self {
        let density: Vec<f64> = self.density.iter().zip(&grid.dist).map(|(&d, &dist)| if dist > eps { d } else { 0.0 }).collect();
        let mass = dot(&density, &grid.quad_weights);
        MeasureField { grid: self.grid, density, mass, signed: self.signed }
    }

    pub fn check_grid(&self, grid: &DomainGrid) -> Result<()> {
        if self.grid != GridTag::of(grid) || self.density.len() != grid.len() {
            return Err(Error::Usage("measure lives on a different grid".into()));
        }
        Ok(())
    }

    /// Convex combination `(1 - s) self + s other`.
    pub fn mix(&self, other: &MeasureField, s: f64) -> MeasureField {
        let density: Vec<f64> = self.density.iter().zip(&other.density).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        MeasureField { grid: self.grid, mass: (1.0 - s) * self.mass + s * other.mass, density, signed: self.signed || other.signed }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized smooth bump `exp(-|x - c|^2 / w^2)` restricted to
/// `{dist > cut}`; a convenient family of initial measures. A cut that
/// would remove every node is lowered to half the largest distance.
pub fn gaussian_bump(grid: &DomainGrid, center: Point, width: f64, cut: f64) -> MeasureField {
    let dmax = grid.dist.iter().cloned().fold(0.0, f64::max);
    let cut = if cut < dmax { cut } else { 0.5 * dmax };
    let mut density: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&grid.dist)
        .map(|(x, &d)| if d <= cut { 0.0 } else { (-((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (width * width)).exp() })
        .collect();
    let mass = dot(&density, &grid.quad_weights);
    for v in &mut density {
        *v /= mass;
    }
    MeasureField { grid: GridTag::of(grid), mass: dot(&density, &grid.quad_weights), density, signed: false }
}

/// Bound on test functions for the generalized distance.
pub fn test_function_bound(grid: &DomainGrid) -> f64 {
    grid.diameter() / 2.0
}

/// Result of a distance computation together with an optimal potential.
#[derive(Debug, Clone)]
pub struct Wasserstein {
    pub value: f64,
    /// Optimal 1-Lipschitz potential on the nodes used (zero elsewhere).
    pub potential: Vec<f64>,
}

/// Generalized Wasserstein-1 distance between two (sub)probability
/// measures: supremum of `int phi d(m1 - m2)` over 1-Lipschitz `phi` with
/// `|phi| <= diam / 2`. Equal masses reduce to the classical distance.
pub fn wasserstein1(grid: &DomainGrid, m1: &MeasureField, m2: &MeasureField) -> Result<f64> {
    Ok(wasserstein1_full(grid, m1, m2, None)?.value)
}

pub fn wasserstein1_full(grid: &DomainGrid, m1: &MeasureField, m2: &MeasureField, active: Option<&[bool]>) -> Result<Wasserstein> {
    m1.check_grid(grid)?;
    m2.check_grid(grid)?;
    let all = vec![true; grid.len()];
    let active = active.unwrap_or(&all);
    let diff: Vec<f64> =
        (0..grid.len()).map(|k| if active[k] { (m1.density[k] - m2.density[k]) * grid.quad_weights[k] } else { 0.0 }).collect();
    let total: f64 = diff.iter().sum();
    let scale: f64 = diff.iter().map(|d| d.abs()).sum::<f64>().max(1e-300);
    if grid.dim == 1 && total.abs() <= 1e-13 * scale.max(1.0) {
        return Ok(cdf_distance(grid, &diff, active));
    }
    dual_lp(grid, &diff, active)
}

/// Same distance, always through the dual linear program.
pub fn wasserstein1_lp(grid: &DomainGrid, m1: &MeasureField, m2: &MeasureField) -> Result<f64> {
    m1.check_grid(grid)?;
    m2.check_grid(grid)?;
    let diff: Vec<f64> = (0..grid.len()).map(|k| (m1.density[k] - m2.density[k]) * grid.quad_weights[k]).collect();
    Ok(dual_lp(grid, &diff, &vec![true; grid.len()])?.value)
}

/// Distance over `{dist > eps}` of the restricted measures.
pub fn wasserstein1_eps(grid: &DomainGrid, m1: &MeasureField, m2: &MeasureField, eps: f64) -> Result<f64> {
    grid.check_eps(eps)?;
    let mask = grid.mask(eps);
    Ok(wasserstein1_full(grid, m1, m2, Some(&mask))?.value)
}

/// `int |F1 - F2|` for equal-mass 1D measures, with the matching potential.
fn cdf_distance(grid: &DomainGrid, diff: &[f64], active: &[bool]) -> Wasserstein {
    let idx: Vec<usize> = (0..grid.len()).filter(|&k| active[k]).collect();
    let mut potential = vec![0.0; grid.len()];
    let mut cum = 0.0;
    let mut value = 0.0;
    let mut phi = 0.0;
    for w in idx.windows(2) {
        cum += diff[w[0]];
        let gap = grid.nodes[w[1]][0] - grid.nodes[w[0]][0];
        value += cum.abs() * gap;
        potential[w[0]] = phi;
        phi -= gap * cum.signum();
        potential[w[1]] = phi;
    }
    // Centre the potential so it also satisfies the magnitude bound.
    if !idx.is_empty() {
        let (lo, hi) = idx.iter().fold((f64::MAX, f64::MIN), |(l, h), &k| (l.min(potential[k]), h.max(potential[k])));
        let shift = 0.5 * (lo + hi);
        for &k in &idx {
            potential[k] -= shift;
        }
    }
    Wasserstein { value, potential }
}

/// Dual linear program over the support of the difference. In 1D only
/// neighbouring constraints are needed; in 2D every pair is constrained.
fn dual_lp(grid: &DomainGrid, diff: &[f64], active: &[bool]) -> Result<Wasserstein> {
    let bound = test_function_bound(grid);
    let support: Vec<usize> = if grid.dim == 1 {
        (0..grid.len()).filter(|&k| active[k]).collect()
    } else {
        (0..grid.len()).filter(|&k| active[k] && diff[k] != 0.0).collect()
    };
    let mut potential = vec![0.0; grid.len()];
    if support.is_empty() {
        return Ok(Wasserstein { value: 0.0, potential });
    }
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = support.iter().map(|&k| p.add_var(diff[k], (-bound, bound))).collect();
    let dist = |a: usize, b: usize| {
        let (x, y) = (grid.nodes[a], grid.nodes[b]);
        ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
    };
    if grid.dim == 1 {
        for i in 0..support.len().saturating_sub(1) {
            let d = dist(support[i], support[i + 1]);
            p.add_constraint([(vars[i + 1], 1.0), (vars[i], -1.0)], ComparisonOp::Le, d);
            p.add_constraint([(vars[i], 1.0), (vars[i + 1], -1.0)], ComparisonOp::Le, d);
        }
    } else {
        for i in 0..support.len() {
            for j in 0..support.len() {
                if i != j {
                    let d = dist(support[i], support[j]);
                    p.add_constraint([(vars[i], 1.0), (vars[j], -1.0)], ComparisonOp::Le, d);
                }
            }
        }
    }
    let sol = p.solve().map_err(|e| Error::Numerical(format!("transport LP failed: {e}")))?;
    for (i, &k) in support.iter().enumerate() {
        potential[k] = sol[vars[i]];
    }
    Ok(Wasserstein { value: sol.objective().max(0.0), potential })
}

/// Total-variation distance `sum |m1 - m2| q`.
pub fn total_variation(grid: &DomainGrid, m1: &MeasureField, m2: &MeasureField) -> f64 {
    m1.density.iter().zip(&m2.density).zip(&grid.quad_weights).map(|((a, b), q)| (a - b).abs() * q).sum()
}

/// Player positions, optionally excluding one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub points: Vec<Point>,
    #[serde(default)]
    pub exclude: Option<usize>,
}

/// Linear-splat weights of a point onto grid nodes (masses summing to 1).
pub fn splat(grid: &DomainGrid, x: &Point) -> Vec<(usize, f64)> {
    let fi = (x[0] - grid.origin) / grid.h - 0.5;
    let axis_weights = |f: f64, n: usize| -> Vec<(usize, f64)> {
        let lo = f.floor();
        let t = f - lo;
        let lo = lo as i64;
        let mut v = Vec::with_capacity(2);
        for (i, w) in [(lo, 1.0 - t), (lo + 1, t)] {
            let i = i.clamp(0, n as i64 - 1) as usize;
            if w > 0.0 {
                v.push((i, w));
            }
        }
        v
    };
    let wx = axis_weights(fi, grid.n_axis);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut push = |k: usize, w: f64| {
        if let Some(e) = out.iter_mut().find(|(kk, _)| *kk == k) {
            e.1 += w;
        } else {
            out.push((k, w));
        }
    };
    if grid.dim == 1 {
        for (i, w) in wx {
            push(grid.node_at(i, 0).expect("interval lattice is complete"), w);
        }
    } else {
        let fj = (x[1] - grid.origin) / grid.h - 0.5;
        let wy = axis_weights(fj, grid.n_axis);
        let mut lost = 0.0;
        for &(j, vy) in &wy {
            for &(i, vx) in &wx {
                match grid.node_at(i, j) {
                    Some(k) => push(k, vx * vy),
                    None => lost += vx * vy,
                }
            }
        }
        if lost > 0.0 {
            if out.is_empty() {
                let k = grid.nearest_active(&vec![true; grid.len()], x);
                out.push((k, 1.0));
            } else {
                let kept: f64 = 1.0 - lost;
                for e in &mut out {
                    e.1 /= kept;
                }
            }
        }
    }
    out
}

/// Empirical measure of a configuration: weight `1/(N-1)` per player when a
/// player is excluded, `1/N` otherwise.
pub fn empirical_measure(config: &EmpiricalConfig, grid: &DomainGrid) -> Result<MeasureField> {
    let n = config.points.len();
    let count = match config.exclude {
        Some(i) => {
            if n < 2 || i >= n {
                return Err(Error::Usage("excluded player index requires N >= 2 and a valid index".into()));
            }
            n - 1
        }
        None => {
            if n == 0 {
                return Err(Error::Usage("empty configuration".into()));
            }
            n
        }
    };
    let weight = 1.0 / count as f64;
    let mut masses = vec![0.0; grid.len()];
    for (j, x) in config.points.iter().enumerate() {
        if grid.dist_at(x) <= 0.0 || !grid.contains(x) {
            return Err(Error::Domain(format!("player {j} at {x:?} is outside the domain")));
        }
        if Some(j) == config.exclude {
            continue;
        }
        for (k, w) in splat(grid, x) {
            masses[k] += weight * w;
        }
    }
    let density: Vec<f64> = masses.iter().zip(&grid.quad_weights).map(|(m, q)| m / q).collect();
    let mass: f64 = masses.iter().sum();
    Ok(MeasureField { grid: GridTag::of(grid), density, mass, signed: false })
}

/// Surrogate of the dual norm `||mu||_{-(n+alpha)}`: the largest pairing of
/// `mu` with a fixed family of unit-norm test fields (polynomials of degree
/// at most 3 times Gaussian bumps). A lower bound of the true dual norm.
pub fn signed_dual_norm(grid: &DomainGrid, mu: &MeasureField, order: HolderOrder, alpha: f64) -> f64 {
    let family = test_family(grid, order, alpha, None);
    dual_norm_with(grid, &family, &mu.masses(grid))
}

pub fn dual_norm_with(_grid: &DomainGrid, family: &[Vec<f64>], masses: &[f64]) -> f64 {
    if masses.iter().all(|&m| m == 0.0) {
        return 0.0;
    }
    family.iter().map(|phi| dot(phi, masses).abs()).fold(0.0, f64::max)
}

/// Unit-norm test fields; `active` restricts both support and norm.
pub fn test_family(grid: &DomainGrid, order: HolderOrder, alpha: f64, active: Option<&[bool]>) -> Vec<Vec<f64>> {
    let all = vec![true; grid.len()];
    let active = active.unwrap_or(&all);
    let diam = grid.diameter();
    let (lo, hi) = match grid.shape {
        Shape::Interval { length } => ([0.0, 0.0], [length, 0.0]),
        Shape::Disk { radius } => ([-radius, -radius], [radius, radius]),
    };
    let n_c = if grid.dim == 1 { 13 } else { 5 };
    let widths = [0.08 * diam, 0.16 * diam, 0.32 * diam];
    let mut centers = Vec::new();
    for a in 0..n_c {
        let cx = lo[0] + (a as f64 + 0.5) / n_c as f64 * (hi[0] - lo[0]);
        if grid.dim == 1 {
            centers.push([cx, 0.0]);
        } else {
            for b in 0..n_c {
                let cy = lo[1] + (b as f64 + 0.5) / n_c as f64 * (hi[1] - lo[1]);
                if grid.contains(&[cx, cy]) {
                    centers.push([cx, cy]);
                }
            }
        }
    }
    let mut degrees = Vec::new();
    for i in 0..=3u32 {
        if grid.dim == 1 {
            degrees.push((i, 0u32));
        } else {
            for j in 0..=(3 - i) {
                degrees.push((i, j));
            }
        }
    }
    let mut family = Vec::new();
    for c in &centers {
        for &w in &widths {
            for &(i, j) in &degrees {
                let f: Vec<f64> = grid
                    .nodes
                    .iter()
                    .zip(active)
                    .map(|(x, &a)| {
                        if !a {
                            return 0.0;
                        }
                        let (u, v) = ((x[0] - c[0]) / w, (x[1] - c[1]) / w);
                        u.powi(i as i32) * v.powi(j as i32) * (-(u * u + v * v)).exp()
                    })
                    .collect();
                let norm = holder_norm(grid, &f, active, order, alpha);
                if norm > 0.0 {
                    family.push(f.iter().map(|v| v / norm).collect());
                }
            }
        }
    }
    family
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_disk_domain, build_interval_domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_prob(grid: &DomainGrid, rng: &mut ChaCha8Rng, total: f64) -> MeasureField {
        let raw: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = raw.iter().sum();
        MeasureField::from_masses(grid, &raw.iter().map(|v| total * v / s).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_and_two_point() {
        let g = build_interval_domain(1.0, 64).unwrap();
        let a = MeasureField::delta(&g, 10);
        let b = MeasureField::delta(&g, 40);
        assert_eq!(wasserstein1(&g, &a, &a).unwrap(), 0.0);
        let d = wasserstein1(&g, &a, &b).unwrap();
        assert!((d - 30.0 * g.h).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_lp_on_small_grid() {
        let g = build_interval_domain(1.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = random_prob(&g, &mut rng, 1.0);
            let b = random_prob(&g, &mut rng, 1.0);
            let diff: Vec<f64> = (0..g.len()).map(|k| (a.density[k] - b.density[k]) * g.quad_weights[k]).collect();
            let act = vec![true; g.len()];
            let lp = dual_lp(&g, &diff, &act).unwrap().value;
            let cdf = wasserstein1(&g, &a, &b).unwrap();
            assert!((lp - cdf).abs() < 1e-8, "{lp} {cdf}");
        }
    }

    #[test]
    fn potential_is_feasible() {
        let g = build_interval_domain(1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_prob(&g, &mut rng, 1.0);
        let b = random_prob(&g, &mut rng, 0.7);
        for (x, y) in [(&a, &a.mix(&b, 0.0)), (&a, &b)] {
            let w = wasserstein1_full(&g, x, y, None).unwrap();
            for k in 0..g.len() - 1 {
                assert!((w.potential[k + 1] - w.potential[k]).abs() <= g.h * (1.0 + 10.0 * g.h));
            }
            let pairing: f64 = (0..g.len()).map(|k| w.potential[k] * (x.density[k] - y.density[k]) * g.quad_weights[k]).sum();
            assert!((pairing - w.value).abs() < 1e-9);
        }
    }

    #[test]
    fn disk_lp_two_points() {
        let g = build_disk_domain(1.0, 32).unwrap();
        let i = g.nearest_active(&vec![true; g.len()], &[-0.5, 0.0]);
        let j = g.nearest_active(&vec![true; g.len()], &[0.3, 0.4]);
        let d = wasserstein1(&g, &MeasureField::delta(&g, i), &MeasureField::delta(&g, j)).unwrap();
        let (x, y) = (g.nodes[i], g.nodes[j]);
        let exact = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        assert!((d - exact).abs() < 1e-9);
    }

    #[test]
    fn empirical_weights() {
        let g = build_interval_domain(1.0, 64).unwrap();
        let cfg = EmpiricalConfig { points: vec![[0.2, 0.0], [0.5, 0.0], [0.77, 0.0]], exclude: None };
        let m = empirical_measure(&cfg, &g).unwrap();
        assert!((m.mass - 1.0).abs() < 1e-12);
        let cfg2 = EmpiricalConfig { points: vec![[0.2, 0.0], [0.5, 0.0]], exclude: Some(0) };
        let m2 = empirical_measure(&cfg2, &g).unwrap();
        assert!((m2.mass - 1.0).abs() < 1e-12);
        let mean: f64 = (0..g.len()).map(|k| m2.density[k] * g.quad_weights[k] * g.nodes[k][0]).sum();
        assert!((mean - 0.5).abs() < 1e-12);
        let bad = EmpiricalConfig { points: vec![[1.2, 0.0], [0.5, 0.0]], exclude: None };
        assert!(empirical_measure(&bad, &g).is_err());
    }

    #[test]
    fn dual_norm_of_delta_is_at_most_one() {
        let g = build_interval_domain(1.0, 64).unwrap();
        let fam = test_family(&g, HolderOrder::OnePlusAlpha, 0.5, None);
        for node in [3, 20, 40] {
            let d = MeasureField::delta(&g, node);
            let v = dual_norm_with(&g, &fam, &d.masses(&g));
            assert!(v <= 1.0 + 1e-12 && v > 0.0);
        }
        let zero = MeasureField::signed(&g, vec![0.0; g.len()]).unwrap();
        assert_eq!(signed_dual_norm(&g, &zero, HolderOrder::OnePlusAlpha, 0.5), 0.0);
    }
}
