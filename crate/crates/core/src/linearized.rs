//! Linearized MFG system, the measure derivative `K = dU/dm`, and
//! consistency checks of the master equation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disc::{Disc, TransportOp};
use crate::error::{Error, Result};
use crate::geometry::{DomainGrid, Point};
use crate::measures::{dot, wasserstein1, MeasureField};
use crate::mfg::{neumann_correction, step_count, MfgSolution, MfgSolver, SolverConfig};
use crate::model::{CouplingTable, ModelSpec};
use crate::norms::{gradient, hessian, holder_norm, HolderOrder};

/// One vector per time level.
type Levels = Vec<Vec<f64>>;

/// Restarted GMRES for `A x = b`. Returns the solution, the number of
/// matrix-vector products and the final relative residual.
pub fn gmres<F>(b: &[f64], mut apply: F, tol: f64, restart: usize, max_iter: usize) -> (Vec<f64>, usize, f64)
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, 0, 0.0);
    }
    let mut count = 0;
    let mut rel = 1.0;
    while count < max_iter {
        let ax = if count == 0 { vec![0.0; n] } else { apply(&x) };
        if count > 0 {
            count += 1;
        }
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            break;
        }
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut hmat: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && count < max_iter {
            let mut w = apply(&basis[k]);
            count += 1;
            let mut col = vec![0.0; k + 2];
            for (j, vj) in basis.iter().enumerate() {
                let hij = dot(&w, vj);
                col[j] = hij;
                for (wi, vi) in w.iter_mut().zip(vj) {
                    *wi -= hij * vi;
                }
            }
            let wn = norm(&w);
            col[k + 1] = wn;
            for (j, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (col[j], col[j + 1]);
                col[j] = c * a + s * bb;
                col[j + 1] = -s * a + c * bb;
            }
            let (a, bb) = (col[k], col[k + 1]);
            let r = a.hypot(bb);
            let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, bb / r) };
            cs.push((c, s));
            col[k] = r;
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hmat.push(col);
            k += 1;
            rel = g[k].abs() / bnorm;
            if rel <= tol || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hmat[j][i] * y[j];
            }
            y[i] = s / hmat[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * vi;
            }
        }
        if rel <= tol {
            let ax = apply(&x);
            count += 1;
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            rel = norm(&r) / bnorm;
            if rel <= tol * 10.0 {
                break;
            }
        }
    }
    (x, count, rel)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Source terms of the linearized system. All fields live on the full grid;
/// `h_src[n]` and `c_src[n]` act on step `n` (from `t0 + n dt`).
#[derive(Debug, Clone, Default)]
pub struct LinearizedData {
    pub h_src: Option<Vec<Vec<f64>>>,
    pub c_src: Option<Vec<Vec<Point>>>,
    pub v_t: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LinearizedSolution {
    pub t0: f64,
    pub dt: f64,
    pub nodes: Vec<usize>,
    /// Values per time level, active numbering.
    pub v: Vec<Vec<f64>>,
    /// Signed node masses per time level, active numbering.
    pub mu: Vec<Vec<f64>>,
    pub matvecs: usize,
    pub relative_residual: f64,
    grid_len: usize,
}

impl LinearizedSolution {
    pub fn v_full(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len];
        for (i, &k) in self.nodes.iter().enumerate() {
            out[k] = self.v[n][i];
        }
        out
    }

    pub fn mu_full(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len];
        for (i, &k) in self.nodes.iter().enumerate() {
            out[k] = self.mu[n][i];
        }
        out
    }

    /// `sup_t ||v||_inf + sum_t dt ||mu||_1`, a cheap size of the solution
    /// used to log the empirical constant of the a priori estimate.
    pub fn size(&self) -> f64 {
        let sv = self.v.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        let sm: f64 = self.mu.iter().skip(1).map(|m| self.dt * m.iter().map(|x| x.abs()).sum::<f64>()).sum();
        sv + sm
    }
}

/// Linearization of the discrete MFG map around a fixed solution.
pub struct Linearizer<'a> {
    grid: &'a DomainGrid,
    model: &'a ModelSpec,
    base: &'a MfgSolution,
    disc: Disc,
    ops: Vec<TransportOp>,
    hpp: Vec<Vec<[[f64; 2]; 2]>>,
    terminal_full: CouplingTable,
    tol: f64,
}

impl<'a> Linearizer<'a> {
    pub fn new(grid: &'a DomainGrid, model: &'a ModelSpec, base: &'a MfgSolution, config: &SolverConfig) -> Result<Self> {
        if base.grid != crate::measures::GridTag::of(grid) {
            return Err(Error::Usage("base solution was computed on another grid".into()));
        }
        if (base.dt - config.dt).abs() > 1e-15 {
            return Err(Error::Usage("solver dt differs from the base solution".into()));
        }
        let disc = Disc::new(grid, model, base.eps, base.dt, config.theta_scheme)?;
        let ops = base.drift.iter().map(|d| disc.transport(d)).collect();
        let hpp = base
            .u_tilde
            .iter()
            .map(|ut| disc.centred_gradient(ut).iter().zip(&disc.x).map(|(p, x)| model.hamiltonian.hpp(grid, x, p)).collect())
            .collect();
        Ok(Linearizer {
            grid,
            model,
            base,
            disc,
            ops,
            hpp,
            terminal_full: CouplingTable::new(grid, &model.terminal),
            tol: config.linear_tol,
        })
    }

    pub fn disc(&self) -> &Disc {
        &self.disc
    }

    fn nt(&self) -> usize {
        self.base.nt
    }

    fn terminal(&self, mu_t: &[f64], v_t: Option<&[f64]>) -> Result<Vec<f64>> {
        let d = &self.disc;
        let rho = &self.base.rho[self.nt()];
        let s = d.terminal.project(rho);
        let t = d.terminal.project(mu_t);
        let mut full = vec![0.0; self.grid.len()];
        for (k, p) in self.terminal_full.phi.iter().enumerate() {
            let c = self.terminal_full.lambda[k] * self.terminal_full.response.deriv(s[k]) * t[k];
            if c != 0.0 {
                for (o, v) in full.iter_mut().zip(p) {
                    *o += c * v;
                }
            }
        }
        let corr = neumann_correction(self.grid, d.eps, self.model, &full)?;
        let mut out: Vec<f64> = d.nodes.iter().map(|&k| full[k] - corr[k]).collect();
        if let Some(vt) = v_t {
            for (o, &k) in out.iter_mut().zip(&d.nodes) {
                *o += vt[k];
            }
        }
        Ok(out)
    }

    /// Backward sweep for a given measure trajectory; returns `v` and the
    /// diffused values `P v^{n+1}`.
    fn backward(&self, mu: &[Vec<f64>], h_src: Option<&[Vec<f64>]>, v_t: Option<&[f64]>) -> Result<(Levels, Levels)> {
        let d = &self.disc;
        let nt = self.nt();
        let mut v = vec![Vec::new(); nt + 1];
        let mut vt = vec![Vec::new(); nt];
        v[nt] = self.terminal(&mu[nt], v_t)?;
        for n in (0..nt).rev() {
            let tilde = d.diffuse(&v[n + 1]);
            let mut next = d.step_values(&self.ops[n], &tilde);
            let df = d.running.derivative(&self.base.rho[n], &mu[n]);
            for (o, f) in next.iter_mut().zip(&df) {
                *o += d.dt * f;
            }
            if let Some(hs) = h_src {
                for (o, &k) in next.iter_mut().zip(&d.nodes) {
                    *o += d.dt * hs[n][k];
                }
            }
            v[n] = next;
            vt[n] = tilde;
        }
        Ok((v, vt))
    }

    /// Forward sweep from `mu0` for the given diffused values.
    fn forward(&self, mu0: &[f64], v_tilde: &[Vec<f64>], c_src: Option<&[Vec<Point>]>) -> Vec<Vec<f64>> {
        let d = &self.disc;
        let mut mu = Vec::with_capacity(self.nt() + 1);
        mu.push(mu0.to_vec());
        for n in 0..self.nt() {
            let mut r = d.step_masses(&self.ops[n], &mu[n]);
            let grad = d.centred_gradient(&v_tilde[n]);
            let rho = &self.base.rho[n];
            let mut flux: Vec<Point> = grad
                .iter()
                .zip(&self.hpp[n])
                .zip(rho)
                .map(|((g, m), r)| [r * (m[0][0] * g[0] + m[0][1] * g[1]), r * (m[1][0] * g[0] + m[1][1] * g[1])])
                .collect();
            if let Some(cs) = c_src {
                for ((f, &k), q) in flux.iter_mut().zip(&d.nodes).zip(&d.q) {
                    f[0] += q * cs[n][k][0];
                    f[1] += q * cs[n][k][1];
                }
            }
            let div = d.centred_gradient_t(&flux);
            for (ri, di) in r.iter_mut().zip(&div) {
                *ri -= d.dt * di;
            }
            mu.push(d.diffuse_t(&r));
        }
        mu
    }

    fn couples(&self) -> bool {
        !(self.disc.running.is_constant_in_measure() && self.disc.terminal.is_constant_in_measure())
    }

    /// Solves the linearized system with initial signed masses `mu0`
    /// (full grid) and optional sources.
    pub fn solve(&self, mu0_full: &[f64], data: &LinearizedData) -> Result<LinearizedSolution> {
        let d = &self.disc;
        let nt = self.nt();
        let n = d.len();
        let mu0 = d.from_full(mu0_full);
        if mu0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("initial perturbation must be finite".into()));
        }
        if let Some(h) = &data.h_src {
            if h.len() < nt || h.iter().any(|s| s.len() != self.grid.len()) {
                return Err(Error::Usage("h source must provide one full-grid slice per step".into()));
            }
        }
        if let Some(c) = &data.c_src {
            if c.len() < nt || c.iter().any(|s| s.len() != self.grid.len()) {
                return Err(Error::Usage("c source must provide one full-grid slice per step".into()));
            }
        }
        let h_src = data.h_src.as_deref();
        let c_src = data.c_src.as_deref();
        let v_t = data.v_t.as_deref();
        let pack = |traj: &[Vec<f64>]| -> Vec<f64> { traj[1..].iter().flatten().copied().collect() };
        let unpack = |head: &[f64], x: &[f64]| -> Vec<Vec<f64>> {
            let mut out = Vec::with_capacity(nt + 1);
            out.push(head.to_vec());
            for c in x.chunks(n) {
                out.push(c.to_vec());
            }
            out
        };
        let zero = vec![0.0; n];
        let mut zeros = vec![zero.clone(); nt + 1];
        zeros[0] = mu0.clone();
        let (_, vt0) = self.backward(&zeros, h_src, v_t)?;
        let b = pack(&self.forward(&mu0, &vt0, c_src));
        let (x, matvecs, rel) = if self.couples() && nt > 0 {
            let apply = |x: &[f64]| -> Vec<f64> {
                let traj = unpack(&zero, x);
                let (_, vt) = self.backward(&traj, None, None).expect("terminal correction on a validated level");
                let t = pack(&self.forward(&zero, &vt, None));
                x.iter().zip(&t).map(|(a, b)| a - b).collect()
            };
            gmres(&b, apply, self.tol, 60, 2000)
        } else {
            (b, 0, 0.0)
        };
        if !(rel <= 100.0 * self.tol) {
            return Err(Error::Numerical(format!("linearized solve stalled at relative residual {rel:.3e} after {matvecs} products")));
        }
        let traj = unpack(&mu0, &x);
        let (v, vt) = self.backward(&traj, h_src, v_t)?;
        let mu = self.forward(&mu0, &vt, c_src);
        Ok(LinearizedSolution {
            t0: self.base.t0,
            dt: self.base.dt,
            nodes: d.nodes.clone(),
            v,
            mu,
            matvecs,
            relative_residual: rel,
            grid_len: self.grid.len(),
        })
    }
}

pub fn solve_linearized(
    grid: &DomainGrid,
    model: &ModelSpec,
    base: &MfgSolution,
    mu0: &MeasureField,
    data: &LinearizedData,
    config: &SolverConfig,
) -> Result<LinearizedSolution> {
    mu0.check_grid(grid)?;
    Linearizer::new(grid, model, base, config)?.solve(&mu0.masses(grid), data)
}

/// Samples of `K(t0, x, m0, y)` for `x` on the active set and the listed `y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDerivative {
    pub t0: f64,
    /// Full-grid indices of the `x` samples.
    pub x_nodes: Vec<usize>,
    pub y_nodes: Vec<usize>,
    /// `k[j][i] = K(x_i, y_j)`.
    pub k: Vec<Vec<f64>>,
    /// `dmk[j][i] = D_y K(x_i, y_j)`.
    pub dmk: Vec<Vec<Point>>,
}

impl MeasureDerivative {
    /// `<mu, K(x_i, .)>` for signed full-grid masses `mu`.
    pub fn pair(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.x_nodes.len()];
        for (j, &y) in self.y_nodes.iter().enumerate() {
            if mu[y] != 0.0 {
                for (o, kv) in out.iter_mut().zip(&self.k[j]) {
                    *o += mu[y] * kv;
                }
            }
        }
        out
    }

    fn y_pos(&self, grid_len: usize) -> Vec<Option<usize>> {
        let mut pos = vec![None; grid_len];
        for (j, &y) in self.y_nodes.iter().enumerate() {
            pos[y] = Some(j);
        }
        pos
    }

    /// Second `y`-derivatives `D^2_y K` (trace of the diagonal part).
    pub fn laplacian_y(&self, grid: &DomainGrid, coeff: &[Point]) -> Vec<Vec<f64>> {
        let pos = self.y_pos(grid.len());
        let h2 = grid.h * grid.h;
        self.y_nodes
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let mut out = vec![0.0; self.x_nodes.len()];
                for ax in 0..grid.dim {
                    let nb = |dir| grid.neighbor(y, ax, dir).and_then(|n| pos[n]);
                    if let (Some(m), Some(p)) = (nb(-1), nb(1)) {
                        for (i, o) in out.iter_mut().enumerate() {
                            *o += coeff[j][ax] * (self.k[p][i] - 2.0 * self.k[j][i] + self.k[m][i]) / h2;
                        }
                    }
                }
                out
            })
            .collect()
    }
}

fn y_gradient(grid: &DomainGrid, y_nodes: &[usize], k: &[Vec<f64>]) -> Vec<Vec<Point>> {
    let mut pos = vec![None; grid.len()];
    for (j, &y) in y_nodes.iter().enumerate() {
        pos[y] = Some(j);
    }
    y_nodes
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            let mut out = vec![[0.0; 2]; k[j].len()];
            for ax in 0..grid.dim {
                let nb = |dir| grid.neighbor(y, ax, dir).and_then(|n| pos[n]);
                let (lo, hi, span) = match (nb(-1), nb(1)) {
                    (Some(m), Some(p)) => (m, p, 2.0),
                    (None, Some(p)) => (j, p, 1.0),
                    (Some(m), None) => (m, j, 1.0),
                    (None, None) => continue,
                };
                for (i, o) in out.iter_mut().enumerate() {
                    o[ax] = (k[hi][i] - k[lo][i]) / (span * grid.h);
                }
            }
            out
        })
        .collect()
}

/// Restriction of a solution to `[t0 + n0 dt, T]`.
fn tail(base: &MfgSolution, n0: usize) -> MfgSolution {
    let mut s = base.clone();
    s.t0 = base.time(n0);
    s.nt = base.nt - n0;
    s.u.drain(..n0);
    s.rho.drain(..n0);
    s.u_tilde.drain(..n0);
    s.drift.drain(..n0);
    s
}

/// `K(t0, x, m(t0), y)` by unit-mass perturbations at each `y` node.
pub fn compute_k(
    grid: &DomainGrid,
    model: &ModelSpec,
    base: &MfgSolution,
    t0: f64,
    y_nodes: &[usize],
    config: &SolverConfig,
) -> Result<MeasureDerivative> {
    let n0 = step_count(base.t0, t0, base.dt)?;
    if n0 > base.nt {
        return Err(Error::Usage("t0 lies beyond the base solution".into()));
    }
    let sliced;
    let base = if n0 == 0 {
        base
    } else {
        sliced = tail(base, n0);
        &sliced
    };
    let active = base.active();
    if let Some(&y) = y_nodes.iter().find(|&&y| y >= grid.len() || !active[y]) {
        return Err(Error::Domain(format!("y node {y} is outside the active set")));
    }
    let lin = Linearizer::new(grid, model, base, config)?;
    let cols: Vec<Vec<f64>> = y_nodes
        .par_iter()
        .map(|&y| {
            let mut mu0 = vec![0.0; grid.len()];
            mu0[y] = 1.0;
            lin.solve(&mu0, &LinearizedData::default()).map(|s| s.v[0].clone())
        })
        .collect::<Result<_>>()?;
    let dmk = y_gradient(grid, y_nodes, &cols);
    Ok(MeasureDerivative { t0, x_nodes: base.nodes.clone(), y_nodes: y_nodes.to_vec(), k: cols, dmk })
}

/// `U(t0, x, m0)`; at `t0 = T` this is `G(x, m0)`.
pub fn evaluate_u(grid: &DomainGrid, model: &ModelSpec, t0: f64, x: &Point, m0: &MeasureField, config: &SolverConfig) -> Result<f64> {
    if !grid.contains(x) {
        return Err(Error::Domain(format!("point {x:?} is outside the domain")));
    }
    if !m0.is_probability() {
        return Err(Error::Usage("U is evaluated at probability measures".into()));
    }
    if (t0 - model.horizon).abs() <= 1e-12 {
        let g = CouplingTable::new(grid, &model.terminal).eval(&m0.masses(grid));
        return Ok(grid.interpolate(&g, &vec![true; grid.len()], x));
    }
    let sol = MfgSolver::new(grid, model, config.clone())?.solve(t0, m0)?;
    Ok(grid.interpolate(&sol.u_full(0), &sol.active(), x))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub s_values: Vec<f64>,
    pub defects: Vec<f64>,
    pub slope: f64,
    pub floor_limited: bool,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Defect `||U(m0 + s mu) - U(m0) - s <K, mu>||_{2+alpha}` for each `s`
/// and the fitted exponent.
pub fn second_order_expansion_check(
    grid: &DomainGrid,
    model: &ModelSpec,
    t0: f64,
    m0: &MeasureField,
    direction: &MeasureField,
    s_values: &[f64],
    config: &SolverConfig,
) -> Result<ExpansionReport> {
    direction.check_grid(grid)?;
    let solver = MfgSolver::new(grid, model, config.clone())?;
    let base = solver.solve(t0, m0)?;
    let lin = Linearizer::new(grid, model, &base, config)?.solve(&direction.masses(grid), &LinearizedData::default())?;
    let active = base.active();
    let u0 = base.u_full(0);
    let v0 = lin.v_full(0);
    let mut defects = Vec::with_capacity(s_values.len());
    for &s in s_values {
        if s == 0.0 {
            defects.push(0.0);
            continue;
        }
        let density: Vec<f64> = m0.density.iter().zip(&direction.density).map(|(a, b)| a + s * b).collect();
        if density.iter().any(|&v| v < -1e-14) {
            return Err(Error::Usage(format!("m0 + {s} * direction is not a nonnegative measure")));
        }
        let ms = MeasureField::from_density(grid, density.iter().map(|v| v.max(0.0)).collect())?;
        let sol = solver.solve(t0, &ms)?;
        let us = sol.u_full(0);
        let diff: Vec<f64> = (0..grid.len()).map(|k| us[k] - u0[k] - s * v0[k]).collect();
        defects.push(holder_norm(grid, &diff, &active, HolderOrder::TwoPlusAlpha, model.alpha));
    }
    let pts: Vec<(f64, f64)> = s_values.iter().zip(&defects).filter(|(s, d)| **s > 0.0 && **d > 0.0).map(|(s, d)| (*s, *d)).collect();
    let floor_limited = defects.iter().zip(s_values).any(|(d, s)| *s > 0.0 && *d < 1e-10);
    let slope = if pts.len() >= 2 {
        loglog_slope(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), &pts.iter().map(|p| p.1).collect::<Vec<_>>())
    } else {
        f64::NAN
    };
    Ok(ExpansionReport { s_values: s_values.to_vec(), defects, slope, floor_limited })
}

/// Terms of the master equation at one point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualTerms {
    pub x: Point,
    pub dt_u: f64,
    pub trace: f64,
    pub hamiltonian: f64,
    pub measure_trace: f64,
    pub measure_drift: f64,
    pub coupling: f64,
    pub residual: f64,
}

/// Signed residual
/// `-dU/dt - tr(a D^2 U) + H(x, DU) - int tr(a D_y D_m U) dm + int D_m U . H_p dm - F`
/// at each of `x_points`, with `dU/dt` from solves at `t0 -+ 2 dt`.
pub fn master_equation_residual(
    grid: &DomainGrid,
    model: &ModelSpec,
    t0: f64,
    x_points: &[Point],
    m0: &MeasureField,
    config: &SolverConfig,
) -> Result<Vec<ResidualTerms>> {
    let probe = 2.0 * config.dt;
    if t0 - probe < -1e-12 || t0 + probe > model.horizon + 1e-12 {
        return Err(Error::Usage(format!("t0 = {t0} leaves no room for the time difference")));
    }
    if !m0.is_probability() {
        return Err(Error::Usage("residual is evaluated at probability measures".into()));
    }
    let solver = MfgSolver::new(grid, model, config.clone())?;
    let base = solver.solve(t0, m0)?;
    let up = solver.solve(t0 + probe, m0)?;
    let dn = solver.solve(t0 - probe, m0)?;
    let active = base.active();
    let u0 = base.u_full(0);
    let (uu, ud) = (up.u_full(0), dn.u_full(0));
    let grad = gradient(grid, &u0, &active);
    let hess = hessian(grid, &u0, &active);

    // y nodes: the support of m0 in the active set, dilated by two layers so
    // second differences are available wherever m0 charges.
    let rho0 = base.masses_full(0);
    let mut want = vec![false; grid.len()];
    for k in 0..grid.len() {
        if active[k] && rho0[k] != 0.0 {
            want[k] = true;
        }
    }
    for _ in 0..2 {
        let snapshot = want.clone();
        for k in 0..grid.len() {
            if snapshot[k] {
                for ax in 0..grid.dim {
                    for dir in [-1, 1] {
                        if let Some(n) = grid.neighbor(k, ax, dir) {
                            if active[n] {
                                want[n] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    let y_nodes: Vec<usize> = (0..grid.len()).filter(|&k| want[k]).collect();
    let kd = compute_k(grid, model, &base, t0, &y_nodes, config)?;
    let a_y: Vec<Point> = y_nodes.iter().map(|&y| model.diffusion.a(grid, &grid.nodes[y])).collect();
    let lap = kd.laplacian_y(grid, &a_y);

    let mut mtrace = vec![0.0; grid.len()];
    let mut mdrift = vec![0.0; grid.len()];
    for (j, &y) in y_nodes.iter().enumerate() {
        let w = rho0[y];
        if w == 0.0 {
            continue;
        }
        let py = [grad[0][y], if grid.dim == 2 { grad[1][y] } else { 0.0 }];
        let hp = model.hamiltonian.hp(grid, &grid.nodes[y], &py);
        for (i, &x) in kd.x_nodes.iter().enumerate() {
            mtrace[x] += w * lap[j][i];
            mdrift[x] += w * (kd.dmk[j][i][0] * hp[0] + kd.dmk[j][i][1] * hp[1]);
        }
    }
    let f_full = {
        let disc = solver.finest();
        let s = disc.running.project(&base.rho[0]);
        let full = CouplingTable::new(grid, &model.running);
        let mut out = full.potential.clone();
        for (k, p) in full.phi.iter().enumerate() {
            let c = full.lambda[k] * full.response.eval(s[k]);
            for (o, v) in out.iter_mut().zip(p) {
                *o += c * v;
            }
        }
        out
    };
    let mut fields: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    for k in 0..grid.len() {
        if !active[k] {
            continue;
        }
        let x = &grid.nodes[k];
        let a = model.diffusion.a(grid, x);
        let p = [grad[0][k], if grid.dim == 2 { grad[1][k] } else { 0.0 }];
        let tr = a[0] * hess[0][k] + if grid.dim == 2 { a[1] * hess[1][k] } else { 0.0 };
        fields[0][k] = (uu[k] - ud[k]) / (2.0 * probe);
        fields[1][k] = tr;
        fields[2][k] = model.hamiltonian.h(grid, x, &p);
        fields[3][k] = mtrace[k];
        fields[4][k] = mdrift[k];
        fields[5][k] = f_full[k];
    }
    x_points
        .iter()
        .map(|x| {
            if !grid.contains(x) {
                return Err(Error::Domain(format!("point {x:?} is outside the domain")));
            }
            let v: Vec<f64> = fields.iter().map(|f| grid.interpolate(f, &active, x)).collect();
            Ok(ResidualTerms {
                x: *x,
                dt_u: v[0],
                trace: v[1],
                hamiltonian: v[2],
                measure_trace: v[3],
                measure_drift: v[4],
                coupling: v[5],
                residual: -v[0] - v[1] + v[2] - v[3] + v[4] - v[5],
            })
        })
        .collect()
}

/// Root mean square of the residuals.
pub fn residual_rms(terms: &[ResidualTerms]) -> f64 {
    (terms.iter().map(|t| t.residual * t.residual).sum::<f64>() / terms.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelLipschitz {
    pub ratio: f64,
    pub per_pair: Vec<f64>,
    pub degenerate_pairs: usize,
}

/// Surrogate norm of a kernel difference: the largest `C^{2+alpha}` norm in
/// `x` over columns plus the largest `C^{1+alpha}` norm in `y` over rows.
fn kernel_norm(grid: &DomainGrid, kd: &MeasureDerivative, diff: &[Vec<f64>], alpha: f64) -> f64 {
    let mut xmask = vec![false; grid.len()];
    for &x in &kd.x_nodes {
        xmask[x] = true;
    }
    let mut ymask = vec![false; grid.len()];
    for &y in &kd.y_nodes {
        ymask[y] = true;
    }
    let mut in_x: f64 = 0.0;
    for col in diff {
        let mut full = vec![0.0; grid.len()];
        for (i, &x) in kd.x_nodes.iter().enumerate() {
            full[x] = col[i];
        }
        in_x = in_x.max(holder_norm(grid, &full, &xmask, HolderOrder::TwoPlusAlpha, alpha));
    }
    let mut in_y: f64 = 0.0;
    let stride = (kd.x_nodes.len() / 24).max(1);
    for i in (0..kd.x_nodes.len()).step_by(stride) {
        let mut full = vec![0.0; grid.len()];
        for (j, &y) in kd.y_nodes.iter().enumerate() {
            full[y] = diff[j][i];
        }
        in_y = in_y.max(holder_norm(grid, &full, &ymask, HolderOrder::OnePlusAlpha, alpha));
    }
    in_x + in_y
}

/// `max ||K(., m1, .) - K(., m2, .)|| / d1(m1, m2)` over pairs.
pub fn lipschitz_in_measure_of_k(
    grid: &DomainGrid,
    model: &ModelSpec,
    t0: f64,
    pairs: &[(MeasureField, MeasureField)],
    y_nodes: &[usize],
    config: &SolverConfig,
) -> Result<KernelLipschitz> {
    let solver = MfgSolver::new(grid, model, config.clone())?;
    let mut out = KernelLipschitz { ratio: 0.0, per_pair: Vec::new(), degenerate_pairs: 0 };
    for (a, b) in pairs {
        let d = wasserstein1(grid, a, b)?;
        if d <= 1e-14 {
            out.degenerate_pairs += 1;
            continue;
        }
        let s1 = solver.solve(t0, a)?;
        let s2 = solver.solve(t0, b)?;
        let k1 = compute_k(grid, model, &s1, t0, y_nodes, config)?;
        let k2 = compute_k(grid, model, &s2, t0, y_nodes, config)?;
        let diff: Vec<Vec<f64>> = k1.k.iter().zip(&k2.k).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
        let r = kernel_norm(grid, &k1, &diff, model.alpha) / d;
        out.ratio = out.ratio.max(r);
        out.per_pair.push(r);
    }
    Ok(out)
}

/// Runs the Fokker–Planck flow driven by the feedback `D_x U(t, ., m(t))`,
/// re-solving the MFG system from every visited `(t, m(t))`, and returns the
/// largest distance to the original flow over the first `steps` steps.
pub fn feedback_flow_gap(
    grid: &DomainGrid,
    model: &ModelSpec,
    t0: f64,
    m0: &MeasureField,
    steps: usize,
    config: &SolverConfig,
) -> Result<f64> {
    let solver = MfgSolver::new(grid, model, config.clone())?;
    let base = solver.solve(t0, m0)?;
    let disc = solver.finest();
    let steps = steps.min(base.nt);
    let mut m = m0.clone();
    let mut gap: f64 = 0.0;
    for n in 0..steps {
        let sol = solver.solve(base.time(n), &m)?;
        let b = disc.transport(&sol.drift[0]);
        let next = disc.diffuse_t(&disc.step_masses(&b, &sol.rho[0]));
        m = MeasureField::from_masses(grid, &disc.to_full(&next, 0.0))?;
        gap = gap.max(wasserstein1(grid, &m, &base.measure(grid, n + 1))?);
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_interval_domain;
    use crate::measures::gaussian_bump;

    #[test]
    fn gmres_solves_small_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.5, 0.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let (x, _, rel) = gmres(&b, |v| (0..3).map(|i| (0..3).map(|j| a[i][j] * v[j]).sum()).collect(), 1e-14, 10, 50);
        assert!(rel < 1e-13);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = build_interval_domain(1.0, 48).unwrap();
        let m = ModelSpec::shipped_1d();
        let cfg = SolverConfig::with_dt(0.025);
        let m0 = gaussian_bump(&g, [0.5, 0.0], 0.12, 0.2);
        let base = crate::mfg::solve_mfg(&g, &m, 0.0, &m0, &cfg).unwrap();
        let lin = Linearizer::new(&g, &m, &base, &cfg).unwrap();
        let s = lin.solve(&vec![0.0; g.len()], &LinearizedData::default()).unwrap();
        assert!(s.v.iter().flatten().all(|&v| v == 0.0));
        assert!(s.mu.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn loglog_slope_of_power() {
        let x = [0.04, 0.02, 0.01];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
