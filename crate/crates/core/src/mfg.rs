//! Forward–backward MFG system on the cascade of Neumann subdomains.

use serde::{Deserialize, Serialize};

use crate::disc::Disc;
use crate::error::{Error, Result};
use crate::geometry::{neumann_extension, DomainGrid, Point};
use crate::measures::{dot, wasserstein1, GridTag, MeasureField};
use crate::model::{CouplingTable, ModelSpec};
use crate::norms::{holder_norm, HolderOrder};

/// Final sweep, measure flow, iteration count and residual history of one level.
type LevelOutcome = (Sweep, Vec<Vec<f64>>, usize, Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cascade {
    /// Solve every eps level, finest last, warm-starting each from the
    /// previous one.
    Full,
    /// Solve the finest level only.
    FinestOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(default = "default_theta")]
    pub theta_scheme: f64,
    #[serde(default = "default_damping")]
    pub picard_damping: f64,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_cascade")]
    pub cascade: Cascade,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
}

fn default_theta() -> f64 {
    1.0
}
fn default_damping() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-12
}
fn default_iters() -> usize {
    400
}
fn default_cascade() -> Cascade {
    Cascade::Full
}
fn default_linear_tol() -> f64 {
    1e-13
}

impl SolverConfig {
    pub fn with_dt(dt: f64) -> Self {
        SolverConfig {
            dt,
            theta_scheme: default_theta(),
            picard_damping: default_damping(),
            picard_tol: default_tol(),
            max_iters: default_iters(),
            cascade: default_cascade(),
            linear_tol: default_linear_tol(),
        }
    }

    pub fn validate(&self, grid: &DomainGrid, model: &ModelSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(0.0..=1.0).contains(&self.theta_scheme) {
            return bad("theta_scheme must lie in [0, 1]".into());
        }
        if self.theta_scheme < 0.5 {
            let amax = grid.nodes.iter().map(|x| model.diffusion.scalar(grid, x)).fold(0.0, f64::max);
            if self.dt > grid.h * grid.h / (2.0 * amax) {
                return bad("theta_scheme < 1/2 requires dt <= h^2 / (2 max a)".into());
            }
        }
        if !(self.picard_damping > 0.0 && self.picard_damping <= 1.0) {
            return bad("picard_damping must lie in (0, 1]".into());
        }
        if !(self.picard_tol > 0.0) || self.max_iters == 0 {
            return bad("picard_tol must be positive and max_iters nonzero".into());
        }
        if !(self.linear_tol > 0.0) {
            return bad("linear_tol must be positive".into());
        }
        Ok(())
    }
}

/// Integrability exponent `(d + 2) / (d + 1 + alpha)`.
pub fn p_exponent(dim: usize, alpha: f64) -> f64 {
    (dim as f64 + 2.0) / (dim as f64 + 1.0 + alpha)
}

/// Number of steps from `t0` to `horizon`; `t0` must sit on the time grid.
pub fn step_count(t0: f64, horizon: f64, dt: f64) -> Result<usize> {
    let span = horizon - t0;
    if span < -1e-12 {
        return Err(Error::Usage(format!("t0 = {t0} is past the horizon {horizon}")));
    }
    let nt = (span / dt).round();
    if (nt * dt - span).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Config(format!("t0 = {t0} is not aligned with dt = {dt}")));
    }
    Ok(nt as usize)
}

#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub eps: f64,
    pub nodes: Vec<usize>,
    pub u: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Value and measure flow on the finest active set, plus the quantities
/// needed to linearize the scheme around it.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub grid: GridTag,
    pub t0: f64,
    pub dt: f64,
    pub nt: usize,
    pub eps: f64,
    pub nodes: Vec<usize>,
    /// Values per time level, active numbering.
    pub u: Vec<Vec<f64>>,
    /// Node masses per time level, active numbering.
    pub rho: Vec<Vec<f64>>,
    /// Diffused values `P u^{n+1}` per step.
    pub u_tilde: Vec<Vec<f64>>,
    /// Drift `H_p + b_tilde` at the centred gradient of `u_tilde`.
    pub drift: Vec<Vec<Point>>,
    pub eps_used: Vec<f64>,
    pub picard_iters: usize,
    pub residuals: Vec<f64>,
    pub residuals_monotone: bool,
    pub levels: Vec<LevelSolution>,
    pub m0_mass: f64,
    pub terminal_correction: f64,
    /// Largest centred gradient visited by the value function.
    pub max_gradient: f64,
    grid_len: usize,
}

impl MfgSolution {
    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn active(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid_len];
        for &k in &self.nodes {
            m[k] = true;
        }
        m
    }

    /// Values at time level `n` on the full grid (zero off the active set).
    pub fn u_full(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len];
        for (i, &k) in self.nodes.iter().enumerate() {
            out[k] = self.u[n][i];
        }
        out
    }

    pub fn masses_full(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len];
        for (i, &k) in self.nodes.iter().enumerate() {
            out[k] = self.rho[n][i];
        }
        out
    }

    pub fn measure(&self, grid: &DomainGrid, n: usize) -> MeasureField {
        let masses = self.masses_full(n);
        let density: Vec<f64> = masses.iter().zip(&grid.quad_weights).map(|(m, q)| m / q).collect();
        MeasureField { grid: self.grid, mass: masses.iter().sum(), density, signed: false }
    }

    pub fn mass(&self, n: usize) -> f64 {
        self.rho[n].iter().sum()
    }

    /// `sup_t ||u^{eps_k} - u^{eps_{k+1}}||_{inf, Omega_{eps_k}}` for each pair
    /// of consecutive cascade levels.
    pub fn cascade_differences(&self) -> Vec<(f64, f64)> {
        self.levels
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                let mut pos = vec![usize::MAX; self.grid_len];
                for (i, &k) in b.nodes.iter().enumerate() {
                    pos[k] = i;
                }
                let mut sup: f64 = 0.0;
                for (ua, ub) in a.u.iter().zip(&b.u) {
                    for (i, &k) in a.nodes.iter().enumerate() {
                        if pos[k] != usize::MAX {
                            sup = sup.max((ua[i] - ub[pos[k]]).abs());
                        }
                    }
                }
                (a.eps, sup)
            })
            .collect()
    }
}

/// Co-normal correction `N_eps(a D f . nu)` of a full-grid field.
pub fn neumann_correction(grid: &DomainGrid, eps: f64, model: &ModelSpec, field: &[f64]) -> Result<Vec<f64>> {
    if eps == 0.0 {
        return Ok(vec![0.0; grid.len()]);
    }
    let bnodes = grid.boundary_nodes(eps);
    let mut data = Vec::with_capacity(bnodes.len());
    for &b in &bnodes {
        let nu = grid.normal[b];
        let a = model.diffusion.a(grid, &grid.nodes[b]);
        let mut flux = 0.0;
        let mut ann = 0.0;
        for ax in 0..grid.dim {
            if nu[ax] == 0.0 {
                continue;
            }
            let dir = if nu[ax] > 0.0 { 1 } else { -1 };
            let deriv = match (grid.neighbor(b, ax, dir), grid.neighbor(b, ax, -dir)) {
                (Some(out), _) => (field[out] - field[b]) / grid.h * dir as f64,
                (None, Some(inn)) => (field[b] - field[inn]) / grid.h * dir as f64,
                _ => 0.0,
            };
            flux += a[ax] * deriv * nu[ax];
            ann += a[ax] * nu[ax] * nu[ax];
        }
        data.push(if ann > 0.0 { flux / ann } else { 0.0 });
    }
    if data.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; grid.len()]);
    }
    neumann_extension(grid, eps, &data)
}

/// Evaluates a coupling on the full grid from projections computed on the
/// active set.
fn coupling_full(full: &CouplingTable, active: &CouplingTable, rho: &[f64]) -> Vec<f64> {
    let s = active.project(rho);
    let mut out = full.potential.clone();
    for (k, p) in full.phi.iter().enumerate() {
        let c = full.lambda[k] * full.response.eval(s[k]);
        for (o, v) in out.iter_mut().zip(p) {
            *o += c * v;
        }
    }
    out
}

pub struct MfgSolver<'a> {
    pub grid: &'a DomainGrid,
    pub model: &'a ModelSpec,
    pub config: SolverConfig,
    pub discs: Vec<Disc>,
    terminal_full: CouplingTable,
}

struct Sweep {
    u: Vec<Vec<f64>>,
    u_tilde: Vec<Vec<f64>>,
    drift: Vec<Vec<Point>>,
    correction: f64,
}

impl<'a> MfgSolver<'a> {
    pub fn new(grid: &'a DomainGrid, model: &'a ModelSpec, config: SolverConfig) -> Result<Self> {
        model.validate_params()?;
        config.validate(grid, model)?;
        let levels: Vec<f64> = match config.cascade {
            Cascade::Full => grid.eps_levels.clone(),
            Cascade::FinestOnly => vec![grid.finest_eps()],
        };
        let discs = levels.iter().map(|&e| Disc::new(grid, model, e, config.dt, config.theta_scheme)).collect::<Result<Vec<_>>>()?;
        Ok(MfgSolver { grid, model, config, discs, terminal_full: CouplingTable::new(grid, &model.terminal) })
    }

    pub fn finest(&self) -> &Disc {
        self.discs.last().expect("at least one level")
    }

    /// Terminal values `G(., m) - N_eps(a D G . nu)` on the active set.
    pub fn terminal_values(&self, disc: &Disc, rho_t: &[f64]) -> Result<(Vec<f64>, f64)> {
        let g = coupling_full(&self.terminal_full, &disc.terminal, rho_t);
        let corr = neumann_correction(self.grid, disc.eps, self.model, &g)?;
        let size = disc.nodes.iter().map(|&k| corr[k].abs()).fold(0.0, f64::max);
        Ok((disc.nodes.iter().map(|&k| g[k] - corr[k]).collect(), size))
    }

    fn hjb(&self, disc: &Disc, rho: &[Vec<f64>], terminal: Vec<f64>) -> Sweep {
        let nt = rho.len() - 1;
        let mut u = vec![Vec::new(); nt + 1];
        let mut u_tilde = vec![Vec::new(); nt];
        let mut drift = vec![Vec::new(); nt];
        u[nt] = terminal;
        for n in (0..nt).rev() {
            let ut = disc.diffuse(&u[n + 1]);
            let (hval, dr) = disc.numerical_hamiltonian(self.grid, self.model, &ut);
            let f = disc.running.eval(&rho[n]);
            u[n] = (0..disc.len()).map(|i| ut[i] - disc.dt * hval[i] + disc.dt * f[i]).collect();
            u_tilde[n] = ut;
            drift[n] = dr;
        }
        Sweep { u, u_tilde, drift, correction: 0.0 }
    }

    fn fp(&self, disc: &Disc, drift: &[Vec<Point>], rho0: &[f64]) -> Vec<Vec<f64>> {
        let mut rho = Vec::with_capacity(drift.len() + 1);
        rho.push(rho0.to_vec());
        for dr in drift {
            let b = disc.transport(dr);
            let r = disc.step_masses(&b, rho.last().unwrap());
            rho.push(disc.diffuse_t(&r));
        }
        rho
    }

    fn flow_gap(&self, disc: &Disc, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| active_distance(self.grid, disc, x, y)).fold(0.0, f64::max)
    }

    fn solve_level(&self, disc: &Disc, rho0: &[f64], guess: Vec<Vec<f64>>) -> Result<LevelOutcome> {
        let lambda = self.config.picard_damping;
        let mut current = guess;
        let mut residuals = Vec::new();
        let mut iters = 0;
        loop {
            iters += 1;
            let (term, _) = self.terminal_values(disc, current.last().unwrap())?;
            let sweep = self.hjb(disc, &current, term);
            let fresh = self.fp(disc, &sweep.drift, rho0);
            let next: Vec<Vec<f64>> = if iters == 1 {
                fresh
            } else {
                current.iter().zip(&fresh).map(|(c, f)| c.iter().zip(f).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect()).collect()
            };
            if iters > 1 {
                let gap = self.flow_gap(disc, &next, &current);
                residuals.push(gap);
                if !gap.is_finite() {
                    return Err(Error::Convergence { iterations: iters, last: gap, history: residuals });
                }
                if gap < self.config.picard_tol {
                    current = next;
                    break;
                }
            }
            current = next;
            if iters >= self.config.max_iters {
                return Err(Error::Convergence {
                    iterations: iters,
                    last: residuals.last().copied().unwrap_or(f64::NAN),
                    history: residuals,
                });
            }
        }
        let (term, corr) = self.terminal_values(disc, current.last().unwrap())?;
        let mut sweep = self.hjb(disc, &current, term);
        sweep.correction = corr;
        let rho = self.fp(disc, &sweep.drift, rho0);
        Ok((sweep, rho, iters, residuals))
    }

    /// Solves the MFG system from `(t0, m0)`. The initial measure is
    /// restricted to each active set without renormalization.
    pub fn solve(&self, t0: f64, m0: &MeasureField) -> Result<MfgSolution> {
        m0.check_grid(self.grid)?;
        if m0.signed {
            return Err(Error::Usage("initial measure must be nonnegative".into()));
        }
        let nt = step_count(t0, self.model.horizon, self.config.dt)?;
        let masses_full = m0.masses(self.grid);
        let mut levels = Vec::new();
        let mut prev: Option<(Vec<usize>, Vec<Vec<f64>>)> = None;
        let mut last = None;
        for disc in &self.discs {
            let rho0 = disc.from_full(&masses_full);
            let guess: Vec<Vec<f64>> = match &prev {
                None => vec![rho0.clone(); nt + 1],
                Some((nodes, rho)) => rho
                    .iter()
                    .map(|r| {
                        let mut full = vec![0.0; self.grid.len()];
                        for (i, &k) in nodes.iter().enumerate() {
                            full[k] = r[i];
                        }
                        disc.from_full(&full)
                    })
                    .collect(),
            };
            let (sweep, rho, iters, residuals) = self.solve_level(disc, &rho0, guess)?;
            levels.push(LevelSolution {
                eps: disc.eps,
                nodes: disc.nodes.clone(),
                u: sweep.u.clone(),
                iterations: iters,
                residuals: residuals.clone(),
            });
            prev = Some((disc.nodes.clone(), rho.clone()));
            last = Some((sweep, rho, iters, residuals, rho0));
        }
        let (sweep, rho, iters, residuals, rho0) = last.expect("at least one level");
        let disc = self.finest();
        let monotone = residuals
            .windows(2)
            .enumerate()
            .all(|(k, w)| k + 2 < 3 || w[1] <= w[0] * (1.0 + 1e-9) + 1e-300 || w[1] < self.config.picard_tol);
        let max_gradient =
            sweep.u_tilde.iter().flat_map(|ut| disc.centred_gradient(ut)).map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).fold(0.0, f64::max);
        Ok(MfgSolution {
            grid: GridTag::of(self.grid),
            t0,
            dt: self.config.dt,
            nt,
            eps: disc.eps,
            nodes: disc.nodes.clone(),
            u: sweep.u,
            rho,
            u_tilde: sweep.u_tilde,
            drift: sweep.drift,
            eps_used: self.discs.iter().map(|d| d.eps).collect(),
            picard_iters: iters,
            residuals,
            residuals_monotone: monotone,
            levels,
            m0_mass: rho0.iter().sum(),
            terminal_correction: sweep.correction,
            max_gradient,
            grid_len: self.grid.len(),
        })
    }
}

/// Distance used for Picard stopping: the exact 1D distance, or the
/// `diam/2 * TV` upper bound in 2D.
fn active_distance(grid: &DomainGrid, disc: &Disc, a: &[f64], b: &[f64]) -> f64 {
    if grid.dim == 1 {
        let mut cum = 0.0;
        let mut total = 0.0;
        for i in 0..a.len() - 1 {
            cum += a[i] - b[i];
            total += cum.abs();
        }
        total * disc.h
    } else {
        0.5 * grid.diameter() * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }
}

pub fn solve_mfg(grid: &DomainGrid, model: &ModelSpec, t0: f64, m0: &MeasureField, config: &SolverConfig) -> Result<MfgSolution> {
    MfgSolver::new(grid, model, config.clone())?.solve(t0, m0)
}

/// Backward solve on `{dist > eps}` for a prescribed measure flow
/// (`m_flow[n]` at `t0 + n dt`) and terminal field (full grid, used as is).
pub fn solve_hjb_neumann(
    grid: &DomainGrid,
    eps: f64,
    model: &ModelSpec,
    m_flow: &[MeasureField],
    terminal: &[f64],
    config: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate(grid, model)?;
    if m_flow.is_empty() || terminal.len() != grid.len() || terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("measure flow must be nonempty and terminal data finite".into()));
    }
    let disc = Disc::new(grid, model, eps, config.dt, config.theta_scheme)?;
    let solver = MfgSolver { grid, model, config: config.clone(), discs: vec![], terminal_full: CouplingTable::new(grid, &model.terminal) };
    let rho: Vec<Vec<f64>> = m_flow.iter().map(|m| disc.from_full(&m.masses(grid))).collect();
    let sweep = solver.hjb(&disc, &rho, disc.from_full(terminal));
    Ok(sweep.u.iter().map(|u| disc.to_full(u, 0.0)).collect())
}

/// Forward solve for a prescribed drift `H_p + b_tilde` per step (full grid).
pub fn solve_fp_neumann(
    grid: &DomainGrid,
    eps: f64,
    model: &ModelSpec,
    drift_field: &[Vec<Point>],
    m0: &MeasureField,
    config: &SolverConfig,
) -> Result<Vec<MeasureField>> {
    config.validate(grid, model)?;
    m0.check_grid(grid)?;
    let disc = Disc::new(grid, model, eps, config.dt, config.theta_scheme)?;
    for (n, dr) in drift_field.iter().enumerate() {
        if dr.len() != grid.len() {
            return Err(Error::Usage(format!("drift slice {n} has the wrong length")));
        }
        for &k in &disc.nodes {
            let i = disc.full_to_act[k] as usize;
            for ax in 0..grid.dim {
                if dr[k][ax].abs() > disc.alpha[i][ax] * (1.0 + 1e-12) {
                    return Err(Error::Config(format!("drift exceeds the Lax-Friedrichs bound at node {k}; reduce dt or the drift")));
                }
            }
        }
    }
    let solver = MfgSolver { grid, model, config: config.clone(), discs: vec![], terminal_full: CouplingTable::new(grid, &model.terminal) };
    let drift: Vec<Vec<Point>> = drift_field.iter().map(|d| disc.nodes.iter().map(|&k| d[k]).collect()).collect();
    let rho0 = disc.from_full(&m0.masses(grid));
    let rho = solver.fp(&disc, &drift, &rho0);
    rho.iter()
        .map(|r| {
            let masses = disc.to_full(r, 0.0);
            let density: Vec<f64> = masses.iter().zip(&grid.quad_weights).map(|(m, q)| m / q).collect();
            Ok(MeasureField { grid: GridTag::of(grid), mass: masses.iter().sum(), density, signed: false })
        })
        .collect()
}

/// Cross terms and boundary pairing of the monotonicity identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LasryLions {
    pub rhs: f64,
    pub cross_12: f64,
    pub cross_21: f64,
    pub gap: f64,
}

/// `int (u1 - u2)(t0) (m01 - m02)` minus the two convexity cross terms,
/// evaluated with the scheme's numerical Hamiltonian.
pub fn lasry_lions_gap(
    grid: &DomainGrid,
    model: &ModelSpec,
    config: &SolverConfig,
    s1: &MfgSolution,
    s2: &MfgSolution,
) -> Result<LasryLions> {
    if s1.nodes != s2.nodes || s1.nt != s2.nt || s1.dt != s2.dt {
        return Err(Error::Usage("solutions come from different discretizations".into()));
    }
    let disc = Disc::new(grid, model, s1.eps, s1.dt, config.theta_scheme)?;
    let mut c12 = 0.0;
    let mut c21 = 0.0;
    for n in 0..s1.nt {
        let (u1, u2) = (&s1.u_tilde[n], &s2.u_tilde[n]);
        let (h1, _) = disc.numerical_hamiltonian(grid, model, u1);
        let (h2, _) = disc.numerical_hamiltonian(grid, model, u2);
        let b1 = disc.transport(&s1.drift[n]);
        let b2 = disc.transport(&s2.drift[n]);
        let d21: Vec<f64> = u2.iter().zip(u1).map(|(a, b)| a - b).collect();
        let d12: Vec<f64> = d21.iter().map(|v| -v).collect();
        // B d = (d - (I - dt B) d) / dt.
        let bd1: Vec<f64> = disc.step_values(&b1, &d21).iter().zip(&d21).map(|(s, d)| (d - s) / disc.dt).collect();
        let bd2: Vec<f64> = disc.step_values(&b2, &d12).iter().zip(&d12).map(|(s, d)| (d - s) / disc.dt).collect();
        let e1: Vec<f64> = (0..disc.len()).map(|i| h2[i] - h1[i] - bd1[i]).collect();
        let e2: Vec<f64> = (0..disc.len()).map(|i| h1[i] - h2[i] - bd2[i]).collect();
        c12 += disc.dt * dot(&e1, &s1.rho[n]);
        c21 += disc.dt * dot(&e2, &s2.rho[n]);
    }
    let du: Vec<f64> = s1.u[0].iter().zip(&s2.u[0]).map(|(a, b)| a - b).collect();
    let dm: Vec<f64> = s1.rho[0].iter().zip(&s2.rho[0]).map(|(a, b)| a - b).collect();
    let rhs = dot(&du, &dm);
    Ok(LasryLions { rhs, cross_12: c12, cross_21: c21, gap: rhs - c12 - c21 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ratio_u: f64,
    pub ratio_m: f64,
    pub ratio_lp: f64,
    pub per_pair: Vec<(f64, f64)>,
    pub degenerate_pairs: usize,
}

/// Empirical constants of the stability estimates over pairs of initial
/// measures: `sup_t d1(m1, m2) / d1(m01, m02)`,
/// `sup_t ||u1 - u2||_{2+alpha} / sup_t d1(m1, m2)` and the space-time
/// `L^p` ratio of the densities.
pub fn stability_constants(
    grid: &DomainGrid,
    model: &ModelSpec,
    pairs: &[(MeasureField, MeasureField)],
    config: &SolverConfig,
) -> Result<StabilityReport> {
    let solver = MfgSolver::new(grid, model, config.clone())?;
    let p = p_exponent(grid.dim, model.alpha);
    let mut report = StabilityReport { ratio_u: 0.0, ratio_m: 0.0, ratio_lp: 0.0, per_pair: Vec::new(), degenerate_pairs: 0 };
    for (a, b) in pairs {
        let d0 = wasserstein1(grid, a, b)?;
        if d0 <= 1e-14 {
            report.degenerate_pairs += 1;
            continue;
        }
        let s1 = solver.solve(0.0, a)?;
        let s2 = solver.solve(0.0, b)?;
        let active = s1.active();
        let mut sup_d = 0.0f64;
        let mut sup_u = 0.0f64;
        let mut lp = 0.0;
        for n in 0..=s1.nt {
            sup_d = sup_d.max(wasserstein1(grid, &s1.measure(grid, n), &s2.measure(grid, n))?);
            let du: Vec<f64> = s1.u_full(n).iter().zip(s2.u_full(n)).map(|(x, y)| x - y).collect();
            sup_u = sup_u.max(holder_norm(grid, &du, &active, HolderOrder::TwoPlusAlpha, model.alpha));
            let w = if n == 0 || n == s1.nt { 0.5 } else { 1.0 };
            for (i, &k) in s1.nodes.iter().enumerate() {
                let q = grid.quad_weights[k];
                lp += w * s1.dt * q * ((s1.rho[n][i] - s2.rho[n][i]) / q).abs().powf(p);
            }
        }
        let rm = sup_d / d0;
        let ru = if sup_d > 0.0 { sup_u / sup_d } else { 0.0 };
        report.ratio_m = report.ratio_m.max(rm);
        report.ratio_u = report.ratio_u.max(ru);
        report.ratio_lp = report.ratio_lp.max(lp.powf(1.0 / p) / d0);
        report.per_pair.push((ru, rm));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_interval_domain;
    use crate::measures::gaussian_bump;

    #[test]
    fn constants_are_preserved_by_the_backward_solve() {
        let g = build_interval_domain(1.0, 64).unwrap();
        let m = ModelSpec::heat(0.05, 0.5);
        let cfg = SolverConfig::with_dt(0.01);
        let m0 = gaussian_bump(&g, [0.5, 0.0], 0.1, 0.0);
        let flow = vec![m0; 51];
        let u = solve_hjb_neumann(&g, g.eps_levels[0], &m, &flow, &vec![2.5; g.len()], &cfg).unwrap();
        let mask = g.mask(g.eps_levels[0]);
        for slice in &u {
            for k in 0..g.len() {
                if mask[k] {
                    assert!((slice[k] - 2.5).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn decoupled_model_converges_in_two_iterations() {
        let g = build_interval_domain(1.0, 48).unwrap();
        let m = ModelSpec::decoupled_1d();
        let m0 = gaussian_bump(&g, [0.4, 0.0], 0.1, 0.15);
        let sol = solve_mfg(&g, &m, 0.0, &m0, &SolverConfig::with_dt(0.02)).unwrap();
        assert_eq!(sol.picard_iters, 2);
        assert_eq!(sol.residuals, vec![0.0]);
    }

    #[test]
    fn step_count_alignment() {
        assert_eq!(step_count(0.0, 0.5, 0.01).unwrap(), 50);
        assert_eq!(step_count(0.02, 0.5, 0.01).unwrap(), 48);
        assert!(step_count(0.005, 0.5, 0.01).is_err());
        assert!(step_count(0.6, 0.5, 0.01).is_err());
    }

    #[test]
    fn p_exponent_value() {
        assert!((p_exponent(1, 0.5) - 3.0 / 2.5).abs() < 1e-15);
    }
}
