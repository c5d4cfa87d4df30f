//! Discrete operators on an active node set `{dist > eps}`: the symmetric
//! finite-volume diffusion, the Lax–Friedrichs numerical Hamiltonian and the
//! transport operator shared by the backward and forward solvers.

use crate::error::{Error, Result};
use crate::geometry::{DomainGrid, Point};
use crate::model::{CouplingTable, ModelSpec};

pub const NONE: u32 = u32::MAX;

/// Banded symmetric positive definite matrix with a Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    /// Row `i`, column `j` stored at `i * (bw + 1) + (j + bw - i)` for
    /// `i - bw <= j <= i`.
    l: Vec<f64>,
}

impl BandedSpd {
    pub fn factor(n: usize, bw: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for &(i, j, v) in entries {
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            if i - j > bw {
                return Err(Error::Numerical("entry outside band".into()));
            }
            l[i * w + (j + bw - i)] += v;
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = l[i * w + (j + bw - i)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Numerical("matrix is not positive definite".into()));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedSpd { n, bw, l })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }
}

/// Sparse operator with the neighbour pattern of the discretization:
/// `(B v)_i = diag_i v_i + sum_s off_i[s] v_{nbr_i[s]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportOp {
    pub diag: Vec<f64>,
    pub off: Vec<[f64; 4]>,
}

/// Discretization of one model on one active set.
#[derive(Debug, Clone)]
pub struct Disc {
    pub eps: f64,
    pub dim: usize,
    pub h: f64,
    pub dt: f64,
    pub theta: f64,
    /// Full-grid index of each active node.
    pub nodes: Vec<usize>,
    pub full_to_act: Vec<u32>,
    pub q: Vec<f64>,
    /// Neighbours `[-x, +x, -y, +y]` in active numbering.
    pub nbr: Vec<[u32; 4]>,
    /// Faces `(i, j, transmissibility)` with `i < j`.
    pub faces: Vec<(usize, usize, f64)>,
    pub alpha: Vec<Point>,
    pub b_tilde: Vec<Point>,
    pub a: Vec<Point>,
    pub x: Vec<Point>,
    pub running: CouplingTable,
    pub terminal: CouplingTable,
    chol: BandedSpd,
    grid_len: usize,
}

fn restrict_table(t: &CouplingTable, nodes: &[usize]) -> CouplingTable {
    CouplingTable {
        potential: nodes.iter().map(|&k| t.potential[k]).collect(),
        lambda: t.lambda.clone(),
        phi: t.phi.iter().map(|p| nodes.iter().map(|&k| p[k]).collect()).collect(),
        response: t.response,
    }
}

impl Disc {
    pub fn new(grid: &DomainGrid, model: &ModelSpec, eps: f64, dt: f64, theta: f64) -> Result<Self> {
        grid.check_eps(eps)?;
        let mask = grid.mask(eps);
        let nodes: Vec<usize> = (0..grid.len()).filter(|&k| mask[k]).collect();
        if nodes.len() < 4 {
            return Err(Error::Config(format!("active set for eps {eps} has fewer than 4 nodes")));
        }
        let mut full_to_act = vec![NONE; grid.len()];
        for (i, &k) in nodes.iter().enumerate() {
            full_to_act[k] = i as u32;
        }
        let h = grid.h;
        let mut nbr = vec![[NONE; 4]; nodes.len()];
        let mut faces = Vec::new();
        let mut bw = 1;
        for (i, &k) in nodes.iter().enumerate() {
            for ax in 0..grid.dim {
                for (s, dir) in [(2 * ax, -1), (2 * ax + 1, 1)] {
                    if let Some(n) = grid.neighbor(k, ax, dir) {
                        let j = full_to_act[n];
                        if j != NONE {
                            nbr[i][s] = j;
                            if (j as usize) > i {
                                let xf = [0.5 * (grid.nodes[k][0] + grid.nodes[n][0]), 0.5 * (grid.nodes[k][1] + grid.nodes[n][1])];
                                let af = model.diffusion.scalar(grid, &xf);
                                // Face length h^(dim-1) over centre spacing h.
                                let t = af * h.powi(grid.dim as i32 - 1) / h;
                                faces.push((i, j as usize, t));
                                bw = bw.max(j as usize - i);
                            }
                        }
                    }
                }
            }
        }
        let q: Vec<f64> = nodes.iter().map(|&k| grid.quad_weights[k]).collect();
        let x: Vec<Point> = nodes.iter().map(|&k| grid.nodes[k]).collect();
        let a: Vec<Point> = x.iter().map(|p| model.diffusion.a(grid, p)).collect();
        let b_tilde: Vec<Point> = x.iter().map(|p| model.diffusion.b_tilde(grid, p)).collect();
        let alpha: Vec<Point> = x
            .iter()
            .zip(&b_tilde)
            .map(|(p, b)| {
                let hb = model.hamiltonian.hp_bound(grid, p);
                let mut al = [hb + b[0].abs(), hb + b[1].abs()];
                if grid.dim == 1 {
                    al[1] = 0.0;
                }
                al
            })
            .collect();
        let cfl = alpha.iter().map(|al| dt * (al[0] + al[1]) / h).fold(0.0, f64::max);
        if cfl > 1.0 + 1e-12 {
            return Err(Error::Config(format!("time step {dt} violates the transport CFL bound (dt * alpha / h = {cfl:.3})")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config("theta must lie in [0, 1]".into()));
        }
        // Explicit part must keep (Q + (1 - theta) dt S) nonnegative.
        if theta < 1.0 {
            let mut row = vec![0.0; nodes.len()];
            for &(i, j, t) in &faces {
                row[i] += t;
                row[j] += t;
            }
            for (i, r) in row.iter().enumerate() {
                if (1.0 - theta) * dt * r > q[i] * (1.0 + 1e-12) {
                    return Err(Error::Config("theta-scheme explicit part violates the diffusion CFL bound".into()));
                }
            }
        }
        let mut entries: Vec<(usize, usize, f64)> = q.iter().enumerate().map(|(i, &qi)| (i, i, qi)).collect();
        for &(i, j, t) in &faces {
            let c = theta * dt * t;
            entries.push((i, i, c));
            entries.push((j, j, c));
            entries.push((j, i, -c));
        }
        let chol = BandedSpd::factor(nodes.len(), bw, &entries)?;
        let running = restrict_table(&CouplingTable::new(grid, &model.running), &nodes);
        let terminal = restrict_table(&CouplingTable::new(grid, &model.terminal), &nodes);
        Ok(Disc {
            eps,
            dim: grid.dim,
            h,
            dt,
            theta,
            nodes,
            full_to_act,
            q,
            nbr,
            faces,
            alpha,
            b_tilde,
            a,
            x,
            running,
            terminal,
            chol,
            grid_len: grid.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(S u)_i = sum_j T_ij (u_j - u_i)`.
    pub fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for &(i, j, t) in &self.faces {
            let f = t * (u[j] - u[i]);
            out[i] += f;
            out[j] -= f;
        }
        out
    }

    /// One diffusion step on values: `M^{-1} (Q + (1 - theta) dt S) u`.
    pub fn diffuse(&self, u: &[f64]) -> Vec<f64> {
        let mut b: Vec<f64> = u.iter().zip(&self.q).map(|(v, q)| v * q).collect();
        if self.theta < 1.0 {
            let s = self.stiffness_apply(u);
            let c = (1.0 - self.theta) * self.dt;
            for (bi, si) in b.iter_mut().zip(&s) {
                *bi += c * si;
            }
        }
        self.chol.solve(&mut b);
        b
    }

    /// Transpose of `diffuse`, acting on node masses.
    pub fn diffuse_t(&self, rho: &[f64]) -> Vec<f64> {
        let mut y = rho.to_vec();
        self.chol.solve(&mut y);
        let mut out: Vec<f64> = y.iter().zip(&self.q).map(|(v, q)| v * q).collect();
        if self.theta < 1.0 {
            let s = self.stiffness_apply(&y);
            let c = (1.0 - self.theta) * self.dt;
            for (o, si) in out.iter_mut().zip(&s) {
                *o += c * si;
            }
        }
        out
    }

    /// One-sided differences `(p_minus, p_plus)` per axis with zero-gradient
    /// ghosts at missing neighbours.
    #[inline]
    pub fn one_sided(&self, u: &[f64], i: usize, ax: usize) -> (f64, f64) {
        let [m, p] = [self.nbr[i][2 * ax], self.nbr[i][2 * ax + 1]];
        let pm = if m == NONE { 0.0 } else { (u[i] - u[m as usize]) / self.h };
        let pp = if p == NONE { 0.0 } else { (u[p as usize] - u[i]) / self.h };
        (pm, pp)
    }

    /// Centred gradient `(p_minus + p_plus) / 2` at every node.
    pub fn centred_gradient(&self, u: &[f64]) -> Vec<Point> {
        (0..self.len())
            .map(|i| {
                let mut g = [0.0; 2];
                for (ax, gax) in g.iter_mut().enumerate().take(self.dim) {
                    let (pm, pp) = self.one_sided(u, i, ax);
                    *gax = 0.5 * (pm + pp);
                }
                g
            })
            .collect()
    }

    /// Transpose of `centred_gradient`.
    pub fn centred_gradient_t(&self, z: &[Point]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let c = 0.5 / self.h;
        for i in 0..self.len() {
            for ax in 0..self.dim {
                let [m, p] = [self.nbr[i][2 * ax], self.nbr[i][2 * ax + 1]];
                let zi = z[i][ax] * c;
                if p != NONE {
                    out[p as usize] += zi;
                    out[i] -= zi;
                }
                if m != NONE {
                    out[m as usize] -= zi;
                    out[i] += zi;
                }
            }
        }
        out
    }

    /// Lax–Friedrichs numerical Hamiltonian of `H + b_tilde . p`; returns
    /// the values and the drift `H_p + b_tilde` at the centred gradient.
    pub fn numerical_hamiltonian(&self, grid: &DomainGrid, model: &ModelSpec, u: &[f64]) -> (Vec<f64>, Vec<Point>) {
        let mut val = vec![0.0; self.len()];
        let mut drift = vec![[0.0; 2]; self.len()];
        for i in 0..self.len() {
            let mut pbar = [0.0; 2];
            let mut visc = 0.0;
            for ax in 0..self.dim {
                let (pm, pp) = self.one_sided(u, i, ax);
                pbar[ax] = 0.5 * (pm + pp);
                visc += 0.5 * self.alpha[i][ax] * (pp - pm);
            }
            let x = &self.x[i];
            let b = &self.b_tilde[i];
            let hp = model.hamiltonian.hp(grid, x, &pbar);
            val[i] = model.hamiltonian.h(grid, x, &pbar) + b[0] * pbar[0] + b[1] * pbar[1] - visc;
            drift[i] = [hp[0] + b[0], hp[1] + b[1]];
        }
        (val, drift)
    }

    /// Jacobian of the numerical Hamiltonian for a given drift field.
    pub fn transport(&self, drift: &[Point]) -> TransportOp {
        let mut diag = vec![0.0; self.len()];
        let mut off = vec![[0.0; 4]; self.len()];
        let c = 0.5 / self.h;
        for i in 0..self.len() {
            for ax in 0..self.dim {
                let g = drift[i][ax];
                let al = self.alpha[i][ax];
                if self.nbr[i][2 * ax + 1] != NONE {
                    let v = (g - al) * c;
                    off[i][2 * ax + 1] = v;
                    diag[i] -= v;
                }
                if self.nbr[i][2 * ax] != NONE {
                    let v = (-g - al) * c;
                    off[i][2 * ax] = v;
                    diag[i] -= v;
                }
            }
        }
        TransportOp { diag, off }
    }

    /// `(I - dt B) v`.
    pub fn step_values(&self, b: &TransportOp, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..v.len() {
            let mut s = b.diag[i] * v[i];
            for (slot, &n) in self.nbr[i].iter().enumerate() {
                if n != NONE {
                    s += b.off[i][slot] * v[n as usize];
                }
            }
            out[i] = v[i] - self.dt * s;
        }
        out
    }

    /// `(I - dt B)^T rho`, built from the same stored coefficients.
    pub fn step_masses(&self, b: &TransportOp, rho: &[f64]) -> Vec<f64> {
        let mut out = rho.to_vec();
        for i in 0..rho.len() {
            let r = self.dt * rho[i];
            out[i] -= b.diag[i] * r;
            for (slot, &n) in self.nbr[i].iter().enumerate() {
                if n != NONE {
                    out[n as usize] -= b.off[i][slot] * r;
                }
            }
        }
        out
    }

    pub fn to_full(&self, v: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.grid_len];
        for (i, &k) in self.nodes.iter().enumerate() {
            out[k] = v[i];
        }
        out
    }

    pub fn from_full(&self, v: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&k| v[k]).collect()
    }

    pub fn active_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid_len];
        for &k in &self.nodes {
            m[k] = true;
        }
        m
    }

    /// Lower bound on the step's positivity margin (diagonal of `I - dt B`).
    pub fn cfl_number(&self) -> f64 {
        self.alpha.iter().map(|al| self.dt * (al[0] + al[1]) / self.h).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_disk_domain, build_interval_domain};

    #[test]
    fn banded_cholesky_solves() {
        let n = 7;
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, i, 4.0 + i as f64));
            if i + 2 < n {
                e.push((i + 2, i, -1.0));
            }
            if i + 1 < n {
                e.push((i + 1, i, 0.5));
            }
        }
        let f = BandedSpd::factor(n, 2, &e).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        for &(i, j, v) in &e {
            b[i] += v * x[j];
            if i != j {
                b[j] += v * x[i];
            }
        }
        f.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn transport_transpose_is_exact() {
        for (grid, model) in [
            (build_interval_domain(1.0, 32).unwrap(), ModelSpec::shipped_1d()),
            (build_disk_domain(1.0, 32).unwrap(), ModelSpec::shipped_2d()),
        ] {
            let d = Disc::new(&grid, &model, grid.eps_levels[0], 0.01, 1.0).unwrap();
            let u: Vec<f64> = d.x.iter().map(|x| (3.0 * x[0]).sin() + x[1] * x[1]).collect();
            let (_, drift) = d.numerical_hamiltonian(&grid, &model, &u);
            let b = d.transport(&drift);
            let n = d.len();
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = d.step_values(&b, &e);
                let row = d.step_masses(&b, &e);
                for i in 0..n {
                    // Entry (i, j) from the forward map equals entry (j, i) of the adjoint.
                    assert_eq!(col[i].to_bits(), {
                        let mut ei = vec![0.0; n];
                        ei[i] = 1.0;
                        d.step_masses(&b, &ei)[j].to_bits()
                    });
                }
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn diffusion_preserves_constants_and_mass() {
        let grid = build_disk_domain(1.0, 40).unwrap();
        let model = ModelSpec::shipped_2d();
        let d = Disc::new(&grid, &model, grid.eps_levels[1], 0.02, 1.0).unwrap();
        let ones = vec![1.0; d.len()];
        assert!(d.diffuse(&ones).iter().all(|v| (v - 1.0).abs() < 1e-13));
        let rho: Vec<f64> = (0..d.len()).map(|i| ((i * 7) % 11) as f64).collect();
        let out = d.diffuse_t(&rho);
        let (a, b): (f64, f64) = (rho.iter().sum(), out.iter().sum());
        assert!((a - b).abs() < 1e-12 * a);
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn numerical_hamiltonian_jacobian() {
        let grid = build_interval_domain(1.0, 48).unwrap();
        let model = ModelSpec::shipped_1d();
        let d = Disc::new(&grid, &model, grid.eps_levels[2], 0.01, 1.0).unwrap();
        let u: Vec<f64> = d.x.iter().map(|x| (5.0 * x[0]).cos()).collect();
        let w: Vec<f64> = d.x.iter().map(|x| (2.0 * x[0]).sin()).collect();
        let (h0, drift) = d.numerical_hamiltonian(&grid, &model, &u);
        let b = d.transport(&drift);
        let e = 1e-6;
        let up: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + e * b).collect();
        let um: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - e * b).collect();
        let (hp, _) = d.numerical_hamiltonian(&grid, &model, &up);
        let (hm, _) = d.numerical_hamiltonian(&grid, &model, &um);
        let bw: Vec<f64> = d.step_values(&b, &w).iter().zip(&w).map(|(s, v)| (v - s) / d.dt).collect();
        for i in 0..d.len() {
            let fd = (hp[i] - hm[i]) / (2.0 * e);
            assert!((fd - bw[i]).abs() < 1e-6, "{i}: {fd} vs {}", bw[i]);
        }
        let _ = h0;
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let grid = build_interval_domain(1.0, 64).unwrap();
        let model = ModelSpec::uniform_1d();
        assert!(Disc::new(&grid, &model, grid.eps_levels[0], 1.0, 1.0).is_err());
    }
}
