//! Grid surrogates of the Hölder norms `C^{1+alpha}` and `C^{2+alpha}`.

use crate::geometry::DomainGrid;

/// Order of a Hölder-type grid norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderOrder {
    OnePlusAlpha,
    TwoPlusAlpha,
}

fn first_derivative(grid: &DomainGrid, f: &[f64], active: &[bool], k: usize, ax: usize) -> f64 {
    let nb = |dir| grid.neighbor(k, ax, dir).filter(|&n| active[n]);
    match (nb(-1), nb(1)) {
        (Some(m), Some(p)) => (f[p] - f[m]) / (2.0 * grid.h),
        (None, Some(p)) => (f[p] - f[k]) / grid.h,
        (Some(m), None) => (f[k] - f[m]) / grid.h,
        (None, None) => 0.0,
    }
}

fn second_derivative(grid: &DomainGrid, f: &[f64], active: &[bool], k: usize, ax: usize) -> f64 {
    let nb = |n: usize, dir| grid.neighbor(n, ax, dir).filter(|&m| active[m]);
    let h2 = grid.h * grid.h;
    match (nb(k, -1), nb(k, 1)) {
        (Some(m), Some(p)) => (f[p] - 2.0 * f[k] + f[m]) / h2,
        (None, Some(p)) => nb(p, 1).map_or(0.0, |pp| (f[pp] - 2.0 * f[p] + f[k]) / h2),
        (Some(m), None) => nb(m, -1).map_or(0.0, |mm| (f[k] - 2.0 * f[m] + f[mm]) / h2),
        (None, None) => 0.0,
    }
}

fn mixed_derivative(grid: &DomainGrid, f: &[f64], active: &[bool], k: usize) -> f64 {
    let [i, j] = grid.lattice[k];
    let get = |di: i64, dj: i64| -> Option<usize> {
        let (a, b) = (i as i64 + di, j as i64 + dj);
        if a < 0 || b < 0 {
            return None;
        }
        grid.node_at(a as usize, b as usize).filter(|&n| active[n])
    };
    match (get(1, 1), get(-1, -1), get(1, -1), get(-1, 1)) {
        (Some(pp), Some(mm), Some(pm), Some(mp)) => (f[pp] + f[mm] - f[pm] - f[mp]) / (4.0 * grid.h * grid.h),
        _ => 0.0,
    }
}

/// Nodal gradient components (one vector per axis).
pub fn gradient(grid: &DomainGrid, f: &[f64], active: &[bool]) -> Vec<Vec<f64>> {
    (0..grid.dim)
        .map(|ax| (0..grid.len()).map(|k| if active[k] { first_derivative(grid, f, active, k, ax) } else { 0.0 }).collect())
        .collect()
}

/// Nodal Hessian components: `xx` in 1D; `xx, yy, xy` in 2D.
pub fn hessian(grid: &DomainGrid, f: &[f64], active: &[bool]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..grid.dim)
        .map(|ax| (0..grid.len()).map(|k| if active[k] { second_derivative(grid, f, active, k, ax) } else { 0.0 }).collect())
        .collect();
    if grid.dim == 2 {
        out.push((0..grid.len()).map(|k| if active[k] { mixed_derivative(grid, f, active, k) } else { 0.0 }).collect());
    }
    out
}

fn sup(fields: &[Vec<f64>], active: &[bool]) -> f64 {
    fields.iter().flat_map(|f| f.iter().zip(active).filter(|(_, &a)| a).map(|(v, _)| v.abs())).fold(0.0, f64::max)
}

/// Hölder quotient `sup |f(x) - f(y)| / |x - y|^alpha` over node pairs with
/// `|x - y| >= 2h`. In 2D the node set is thinned to keep the pair count
/// moderate.
pub fn holder_quotient(grid: &DomainGrid, fields: &[Vec<f64>], active: &[bool], alpha: f64) -> f64 {
    let mut idx: Vec<usize> = (0..grid.len()).filter(|&k| active[k]).collect();
    if grid.dim == 2 {
        let stride = ((idx.len() as f64 / 700.0).sqrt().ceil() as usize).max(1);
        idx.retain(|&k| {
            let [i, j] = grid.lattice[k];
            i % stride == 0 && j % stride == 0
        });
    }
    let min_sep = 2.0 * grid.h * (1.0 - 1e-9);
    let mut best: f64 = 0.0;
    for (a, &ka) in idx.iter().enumerate() {
        let xa = grid.nodes[ka];
        for &kb in &idx[a + 1..] {
            let xb = grid.nodes[kb];
            let r = ((xa[0] - xb[0]).powi(2) + (xa[1] - xb[1]).powi(2)).sqrt();
            if r < min_sep {
                continue;
            }
            let denom = r.powf(alpha);
            for f in fields {
                best = best.max((f[ka] - f[kb]).abs() / denom);
            }
        }
    }
    best
}

/// Grid surrogate of `||f||_{n+alpha}` over the active nodes: the largest
/// sup-norm among derivatives up to order `n`, plus the Hölder quotient of
/// the order-`n` derivatives.
pub fn holder_norm(grid: &DomainGrid, f: &[f64], active: &[bool], order: HolderOrder, alpha: f64) -> f64 {
    let value = sup(&[f.to_vec()], active);
    let grad = gradient(grid, f, active);
    match order {
        HolderOrder::OnePlusAlpha => value.max(sup(&grad, active)) + holder_quotient(grid, &grad, active, alpha),
        HolderOrder::TwoPlusAlpha => {
            let hess = hessian(grid, f, active);
            value.max(sup(&grad, active)).max(sup(&hess, active)) + holder_quotient(grid, &hess, active, alpha)
        }
    }
}

pub fn sup_norm(f: &[f64], active: &[bool]) -> f64 {
    f.iter().zip(active).filter(|(_, &a)| a).map(|(v, _)| v.abs()).fold(0.0, f64::max)
}
