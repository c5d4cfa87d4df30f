//! Bounded domains, oriented distance, the subdomain family `{dist > eps}`
//! and the discrete Neumann extension operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub type Point = [f64; 2];

/// Quintic smoothstep `6t^5 - 15t^4 + 10t^3` on `[0, 1]`, clamped outside.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

pub fn smoothstep_d1(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// Smooth ramp `r * chi(r / w)` with `chi = 1 - smoothstep`; slope 1 and
/// zero curvature at the origin, identically zero for `r >= w`.
pub fn ramp(r: f64, w: f64) -> f64 {
    if r <= 0.0 {
        return r;
    }
    r * (1.0 - smoothstep(r / w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Interval { length: f64 },
    Disk { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarParams {
    pub eps0: f64,
    pub delta0: f64,
    pub interior_ball_radius: f64,
}

/// JSON descriptor from which a grid can be rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub dim: usize,
    pub shape: Shape,
    pub n: usize,
    pub eps_levels: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DomainGrid {
    pub dim: usize,
    pub shape: Shape,
    /// Cells per axis of the underlying lattice.
    pub n_axis: usize,
    pub h: f64,
    /// Coordinate of the lower lattice face along every axis.
    pub origin: f64,
    pub nodes: Vec<Point>,
    pub lattice: Vec<[usize; 2]>,
    lookup: Vec<Option<usize>>,
    pub dist: Vec<f64>,
    pub grad_dist: Vec<Point>,
    pub normal: Vec<Point>,
    pub quad_weights: Vec<f64>,
    pub collar: CollarParams,
    pub eps_levels: Vec<f64>,
    blend_width: f64,
}

/// Smoothed distance profile: identity up to `eps0`, then a quintic blend
/// to the plateau `eps0 + w / 2`. Returns value, first and second derivative.
fn blend(r: f64, eps0: f64, w: f64) -> (f64, f64, f64) {
    if r <= eps0 {
        return (r, 1.0, 0.0);
    }
    let t = ((r - eps0) / w).min(1.0);
    let int_s = t.powi(6) - 3.0 * t.powi(5) + 2.5 * t.powi(4);
    let value = eps0 + w * (t - int_s);
    if t >= 1.0 {
        return (value, 0.0, 0.0);
    }
    let s2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    (value, 1.0 - smoothstep(t), -s2 / w)
}

impl DomainGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor { dim: self.dim, shape: self.shape, n: self.n_axis, eps_levels: self.eps_levels.clone() }
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Self> {
        let mut g = match d.shape {
            Shape::Interval { length } => build_interval_domain(length, d.n)?,
            Shape::Disk { radius } => build_disk_domain(radius, d.n)?,
        };
        if d.dim != g.dim {
            return Err(Error::Config("descriptor dim does not match shape".into()));
        }
        if !d.eps_levels.is_empty() {
            g.set_eps_levels(d.eps_levels.clone())?;
        }
        Ok(g)
    }

    /// Replace the default eps levels; they must lie in `(0, eps0/3]`.
    pub fn set_eps_levels(&mut self, mut levels: Vec<f64>) -> Result<()> {
        let cap = self.collar.eps0 / 3.0 * (1.0 + 1e-12);
        if levels.is_empty() || levels.iter().any(|&e| !(e > 0.0 && e <= cap)) {
            return Err(Error::Config(format!("eps levels must lie in (0, {:.6}]", self.collar.eps0 / 3.0)));
        }
        levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
        levels.dedup();
        self.eps_levels = levels;
        Ok(())
    }

    pub fn set_collar(&mut self, collar: CollarParams) -> Result<()> {
        let half_extent = match self.shape {
            Shape::Interval { length } => length / 2.0,
            Shape::Disk { radius } => radius,
        };
        if !(collar.delta0 > 0.0 && collar.delta0 <= collar.eps0 && collar.eps0 < half_extent) {
            return Err(Error::Config("collar requires 0 < delta0 <= eps0 < half extent".into()));
        }
        *self = match self.shape {
            Shape::Interval { length } => build_interval_with(length, self.n_axis, collar)?,
            Shape::Disk { radius } => build_disk_with(radius, self.n_axis, collar)?,
        };
        Ok(())
    }

    pub fn finest_eps(&self) -> f64 {
        *self.eps_levels.last().expect("eps levels are never empty")
    }

    /// Checks that `eps` is zero (the full domain) or one of the levels.
    pub fn check_eps(&self, eps: f64) -> Result<()> {
        if eps == 0.0 || self.eps_levels.iter().any(|&e| (e - eps).abs() <= 1e-12 * e.max(1.0)) {
            Ok(())
        } else {
            Err(Error::Config(format!("eps {eps} is not one of the grid eps levels")))
        }
    }

    pub fn mask(&self, eps: f64) -> Vec<bool> {
        self.dist.iter().map(|&d| d > eps).collect()
    }

    pub fn node_at(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n_axis || j >= if self.dim == 1 { 1 } else { self.n_axis } {
            return None;
        }
        self.lookup[i + j * self.n_axis]
    }

    /// Lattice neighbour of `k` along `axis`, `dir` = -1 or +1.
    pub fn neighbor(&self, k: usize, axis: usize, dir: i32) -> Option<usize> {
        let [i, j] = self.lattice[k];
        let (i, j) = if axis == 0 { ((i as i64 + dir as i64), j as i64) } else { (i as i64, (j as i64 + dir as i64)) };
        if i < 0 || j < 0 {
            return None;
        }
        self.node_at(i as usize, j as usize)
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Interval { length } => length,
            Shape::Disk { radius } => 2.0 * radius,
        }
    }

    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Interval { length } => length,
            Shape::Disk { radius } => std::f64::consts::PI * radius * radius,
        }
    }

    /// Raw distance to the boundary and its gradient.
    fn raw_distance(&self, x: &Point) -> (f64, Point) {
        match self.shape {
            Shape::Interval { length } => {
                if x[0] <= length / 2.0 {
                    (x[0], [1.0, 0.0])
                } else {
                    (length - x[0], [-1.0, 0.0])
                }
            }
            Shape::Disk { radius } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r < 1e-300 {
                    (radius, [0.0, 0.0])
                } else {
                    (radius - r, [-x[0] / r, -x[1] / r])
                }
            }
        }
    }

    /// Smoothed oriented distance at an arbitrary point.
    pub fn dist_at(&self, x: &Point) -> f64 {
        let (r, _) = self.raw_distance(x);
        if r <= 0.0 {
            return r;
        }
        blend(r, self.collar.eps0, self.blend_width).0
    }

    /// Analytic gradient and Hessian of the smoothed distance.
    pub fn dist_derivatives(&self, x: &Point) -> (Point, [[f64; 2]; 2]) {
        let (r, g) = self.raw_distance(x);
        let (_, d1, d2) = blend(r.max(0.0), self.collar.eps0, self.blend_width);
        let grad = [d1 * g[0], d1 * g[1]];
        let mut hess = [[d2 * g[0] * g[0], d2 * g[0] * g[1]], [d2 * g[1] * g[0], d2 * g[1] * g[1]]];
        if let Shape::Disk { .. } = self.shape {
            let rr = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if rr > 1e-300 {
                // Hessian of R - |x| is -(I - x x^T / |x|^2) / |x|.
                for a in 0..2 {
                    for b in 0..2 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        hess[a][b] -= d1 * (delta - x[a] * x[b] / (rr * rr)) / rr;
                    }
                }
            }
        }
        (grad, hess)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.raw_distance(x).0 > 0.0
    }

    /// Moves a point onto the level set `{raw distance = level}` along the
    /// normal direction.
    pub fn project_to_level(&self, x: &Point, level: f64) -> Point {
        match self.shape {
            Shape::Interval { length } => {
                if x[0] <= length / 2.0 {
                    [level, 0.0]
                } else {
                    [length - level, 0.0]
                }
            }
            Shape::Disk { radius } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt().max(1e-300);
                let s = (radius - level) / r;
                [x[0] * s, x[1] * s]
            }
        }
    }

    /// Nodes of the active set for `eps` that have a lattice neighbour
    /// outside it.
    pub fn boundary_nodes(&self, eps: f64) -> Vec<usize> {
        let mask = self.mask(eps);
        let mut out: Vec<usize> = (0..self.len())
            .filter(|&k| mask[k])
            .filter(|&k| {
                (0..self.dim).any(|ax| {
                    [-1, 1].iter().any(|&dir| match self.neighbor(k, ax, dir) {
                        Some(n) => !mask[n],
                        None => true,
                    })
                })
            })
            .collect();
        if self.dim == 2 {
            out.sort_by(|&a, &b| {
                let ta = self.nodes[a][1].atan2(self.nodes[a][0]);
                let tb = self.nodes[b][1].atan2(self.nodes[b][0]);
                ta.partial_cmp(&tb).unwrap()
            });
        }
        out
    }

    /// Discrete gradient of `dist`: central differences, one-sided where a
    /// neighbour is missing.
    pub fn dist_gradient_fd(&self, k: usize) -> Point {
        let mut g = [0.0; 2];
        for (ax, gax) in g.iter_mut().enumerate().take(self.dim) {
            let m = self.neighbor(k, ax, -1);
            let p = self.neighbor(k, ax, 1);
            *gax = match (m, p) {
                (Some(m), Some(p)) => (self.dist[p] - self.dist[m]) / (2.0 * self.h),
                (None, Some(p)) => (self.dist[p] - self.dist[k]) / self.h,
                (Some(m), None) => (self.dist[k] - self.dist[m]) / self.h,
                (None, None) => 0.0,
            };
        }
        g
    }

    /// Discrete Hessian trace against a diagonal matrix `diag`.
    pub fn dist_hessian_trace_fd(&self, k: usize, diag: &Point) -> f64 {
        let mut tr = 0.0;
        for ax in 0..self.dim {
            let m = self.neighbor(k, ax, -1);
            let p = self.neighbor(k, ax, 1);
            let second = match (m, p) {
                (Some(m), Some(p)) => (self.dist[p] - 2.0 * self.dist[k] + self.dist[m]) / (self.h * self.h),
                // One-sided: reuse the neighbour's stencil when available.
                (None, Some(p)) => match self.neighbor(p, ax, 1) {
                    Some(pp) => (self.dist[pp] - 2.0 * self.dist[p] + self.dist[k]) / (self.h * self.h),
                    None => 0.0,
                },
                (Some(m), None) => match self.neighbor(m, ax, -1) {
                    Some(mm) => (self.dist[k] - 2.0 * self.dist[m] + self.dist[mm]) / (self.h * self.h),
                    None => 0.0,
                },
                (None, None) => 0.0,
            };
            tr += diag[ax] * second;
        }
        tr
    }

    /// Linear (1D) or bilinear (2D) interpolation of a nodal field, using
    /// only nodes where `active` is set. Falls back to the nearest active
    /// node when the stencil is incomplete.
    pub fn interpolate(&self, field: &[f64], active: &[bool], x: &Point) -> f64 {
        let fi = (x[0] - self.origin) / self.h - 0.5;
        if self.dim == 1 {
            let i0 = fi.floor();
            let t = fi - i0;
            let i0 = i0 as i64;
            let get = |i: i64| -> Option<usize> {
                if i < 0 {
                    return None;
                }
                self.node_at(i as usize, 0).filter(|&k| active[k])
            };
            return match (get(i0), get(i0 + 1)) {
                (Some(a), Some(b)) => (1.0 - t) * field[a] + t * field[b],
                _ => field[self.nearest_active(active, x)],
            };
        }
        let fj = (x[1] - self.origin) / self.h - 0.5;
        let (i0, j0) = (fi.floor(), fj.floor());
        let (tx, ty) = (fi - i0, fj - j0);
        let (i0, j0) = (i0 as i64, j0 as i64);
        let get = |i: i64, j: i64| -> Option<usize> {
            if i < 0 || j < 0 {
                return None;
            }
            self.node_at(i as usize, j as usize).filter(|&k| active[k])
        };
        match (get(i0, j0), get(i0 + 1, j0), get(i0, j0 + 1), get(i0 + 1, j0 + 1)) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                (1.0 - ty) * ((1.0 - tx) * field[a] + tx * field[b]) + ty * ((1.0 - tx) * field[c] + tx * field[d])
            }
            _ => field[self.nearest_active(active, x)],
        }
    }

    pub fn nearest_active(&self, active: &[bool], x: &Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.nodes.iter().enumerate() {
            if !active[k] {
                continue;
            }
            let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        best.1
    }
}

fn default_levels(eps0: f64) -> Vec<f64> {
    [3.0, 6.0, 12.0, 24.0].iter().map(|d| eps0 / d).collect()
}

/// Uniform cell-centred grid on `(0, L)`.
pub fn build_interval_domain(length: f64, n_nodes: usize) -> Result<DomainGrid> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Config("interval length must be positive".into()));
    }
    let collar = CollarParams { eps0: 0.3 * length, delta0: 0.3 * length, interior_ball_radius: 0.1 * length };
    build_interval_with(length, n_nodes, collar)
}

fn build_interval_with(length: f64, n: usize, collar: CollarParams) -> Result<DomainGrid> {
    if n < 16 {
        return Err(Error::Config(format!("interval grid needs at least 16 nodes, got {n}")));
    }
    let h = length / n as f64;
    let w = collar.eps0.min(length / 2.0 - collar.eps0);
    let mut g = DomainGrid {
        dim: 1,
        shape: Shape::Interval { length },
        n_axis: n,
        h,
        origin: 0.0,
        nodes: Vec::with_capacity(n),
        lattice: Vec::with_capacity(n),
        lookup: Vec::with_capacity(n),
        dist: Vec::with_capacity(n),
        grad_dist: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        quad_weights: vec![h; n],
        collar,
        eps_levels: default_levels(collar.eps0),
        blend_width: w,
    };
    for i in 0..n {
        let x = [(i as f64 + 0.5) * h, 0.0];
        g.nodes.push(x);
        g.lattice.push([i, 0]);
        g.lookup.push(Some(i));
    }
    fill_distance(&mut g);
    Ok(g)
}

/// Lattice on `[-R, R]^2` clipped to the open disk. Quadrature weights are
/// exact cell-disk intersection areas; cut cells whose centre falls outside
/// donate their area to the nearest inside node.
pub fn build_disk_domain(radius: f64, n_per_axis: usize) -> Result<DomainGrid> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config("disk radius must be positive".into()));
    }
    let collar = CollarParams { eps0: 0.3 * radius, delta0: 0.3 * radius, interior_ball_radius: 0.1 * radius };
    build_disk_with(radius, n_per_axis, collar)
}

fn build_disk_with(radius: f64, n: usize, collar: CollarParams) -> Result<DomainGrid> {
    if n < 32 {
        return Err(Error::Config(format!("disk grid needs at least 32 nodes per axis, got {n}")));
    }
    let h = 2.0 * radius / n as f64;
    let origin = -radius;
    let w = collar.eps0.min(radius - collar.eps0);
    let mut g = DomainGrid {
        dim: 2,
        shape: Shape::Disk { radius },
        n_axis: n,
        h,
        origin,
        nodes: Vec::new(),
        lattice: Vec::new(),
        lookup: vec![None; n * n],
        dist: Vec::new(),
        grad_dist: Vec::new(),
        normal: Vec::new(),
        quad_weights: Vec::new(),
        collar,
        eps_levels: default_levels(collar.eps0),
        blend_width: w,
    };
    let center = |i: usize| origin + (i as f64 + 0.5) * h;
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (center(i), center(j));
            if x * x + y * y < radius * radius {
                g.lookup[i + j * n] = Some(g.nodes.len());
                g.nodes.push([x, y]);
                g.lattice.push([i, j]);
            }
        }
    }
    let mut weights = vec![0.0; g.nodes.len()];
    for j in 0..n {
        for i in 0..n {
            let x0 = origin + i as f64 * h;
            let y0 = origin + j as f64 * h;
            let area = cell_disk_area(radius, x0, x0 + h, y0, y0 + h);
            if area <= 0.0 {
                continue;
            }
            let k = match g.lookup[i + j * n] {
                Some(k) => k,
                None => {
                    let c = [center(i), center(j)];
                    let mut best = (f64::INFINITY, 0);
                    for (k, p) in g.nodes.iter().enumerate() {
                        let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                        if d2 < best.0 {
                            best = (d2, k);
                        }
                    }
                    best.1
                }
            };
            weights[k] += area;
        }
    }
    g.quad_weights = weights;
    fill_distance(&mut g);
    Ok(g)
}

fn fill_distance(g: &mut DomainGrid) {
    let nodes = g.nodes.clone();
    for x in &nodes {
        let d = g.dist_at(x);
        let (grad, _) = g.dist_derivatives(x);
        let (_, raw_grad) = g.raw_distance(x);
        g.dist.push(d);
        g.grad_dist.push(grad);
        g.normal.push([-raw_grad[0], -raw_grad[1]]);
    }
}

/// Area of `[x0,x1] x [y0,y1]` intersected with the disk of radius `r`.
pub fn cell_disk_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let prim = |x: f64| {
        let x = x.clamp(-r, r);
        0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).asin())
    };
    let mut cuts = vec![x0.max(-r), x1.min(r)];
    if cuts[0] >= cuts[1] {
        return 0.0;
    }
    for y in [y0, y1] {
        if y.abs() < r {
            let s = (r * r - y * y).sqrt();
            for c in [-s, s] {
                if c > cuts[0] && c < cuts[1] {
                    cuts.push(c);
                }
            }
        }
    }
    let (lo, hi) = (cuts[0], cuts[1]);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.retain(|&c| c >= lo && c <= hi);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let s = (r * r - mid * mid).max(0.0).sqrt();
        let upper_is_s = s < y1;
        let lower_is_s = -s > y0;
        let up = if upper_is_s { s } else { y1 };
        let low = if lower_is_s { -s } else { y0 };
        if up <= low {
            continue;
        }
        let int_s = prim(b) - prim(a);
        let mut piece = 0.0;
        piece += if upper_is_s { int_s } else { y1 * (b - a) };
        piece -= if lower_is_s { -int_s } else { y0 * (b - a) };
        area += piece;
    }
    area
}

/// Field `g = -ramp(dist - eps) * f(pi(x))` on `{dist > eps}` whose outward
/// normal derivative on the subdomain boundary equals `f`. `boundary_data`
/// is indexed like `grid.boundary_nodes(eps)`.
pub fn neumann_extension(grid: &DomainGrid, eps: f64, boundary_data: &[f64]) -> Result<Vec<f64>> {
    grid.check_eps(eps)?;
    let bnodes = grid.boundary_nodes(eps);
    if boundary_data.len() != bnodes.len() {
        return Err(Error::Usage(format!("expected {} boundary values, got {}", bnodes.len(), boundary_data.len())));
    }
    if boundary_data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("boundary data must be finite".into()));
    }
    let width = grid.collar.eps0 / 3.0;
    let mut g = vec![0.0; grid.len()];
    let angles: Vec<f64> = bnodes.iter().map(|&b| grid.nodes[b][1].atan2(grid.nodes[b][0])).collect();
    for k in 0..grid.len() {
        let r = grid.dist[k] - eps;
        if r <= 0.0 || r >= width {
            continue;
        }
        let f = match grid.shape {
            Shape::Interval { length } => {
                let left = grid.nodes[k][0] <= length / 2.0;
                let pos = if left { 0 } else { bnodes.len() - 1 };
                boundary_data[pos]
            }
            Shape::Disk { .. } => {
                let th = grid.nodes[k][1].atan2(grid.nodes[k][0]);
                angular_interp(&angles, boundary_data, th)
            }
        };
        g[k] = -ramp(r, width) * f;
    }
    Ok(g)
}

fn angular_interp(angles: &[f64], data: &[f64], th: f64) -> f64 {
    let n = angles.len();
    if n == 1 {
        return data[0];
    }
    let idx = angles.partition_point(|&a| a < th);
    let (i0, i1) = if idx == 0 || idx == n { (n - 1, 0) } else { (idx - 1, idx) };
    let two_pi = 2.0 * std::f64::consts::PI;
    let span = (angles[i1] - angles[i0]).rem_euclid(two_pi);
    if span < 1e-300 {
        return data[i0];
    }
    let t = ((th - angles[i0]).rem_euclid(two_pi) / span).clamp(0.0, 1.0);
    (1.0 - t) * data[i0] + t * data[i1]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InvarianceReport {
    pub holds: bool,
    pub worst_node: Option<usize>,
    pub worst_slack: f64,
    /// Slack per collar node (minimum over gradient samples).
    pub node_slack: Vec<(usize, f64)>,
}

/// Evaluates `tr(a D^2 d) - H_p(x,p).Dd - a Dd.Dd / d + C d` at every node of
/// `{0 < dist < delta0}` and every gradient sample.
pub fn check_invariance_condition(grid: &DomainGrid, model: &ModelSpec, p_samples: &[Point], c_margin: f64) -> InvarianceReport {
    let mut worst = (f64::INFINITY, None);
    let mut node_slack = Vec::new();
    for k in 0..grid.len() {
        let d = grid.dist[k];
        if !(d > 0.0 && d < grid.collar.delta0) {
            continue;
        }
        let x = grid.nodes[k];
        let a = model.diffusion.a(grid, &x);
        let dd = grid.dist_gradient_fd(k);
        let tr = grid.dist_hessian_trace_fd(k, &a);
        let add: f64 = (0..grid.dim).map(|i| a[i] * dd[i] * dd[i]).sum();
        let mut slack_k = f64::INFINITY;
        for p in p_samples {
            let hp = model.hamiltonian.hp(grid, &x, p);
            let hp_dd: f64 = (0..grid.dim).map(|i| hp[i] * dd[i]).sum();
            let slack = tr - hp_dd - add / d + c_margin * d;
            slack_k = slack_k.min(slack);
        }
        node_slack.push((k, slack_k));
        if slack_k < worst.0 {
            worst = (slack_k, Some(k));
        }
    }
    InvarianceReport { holds: worst.0 >= 0.0, worst_node: worst.1, worst_slack: if worst.1.is_some() { worst.0 } else { 0.0 }, node_slack }
}
