//! N-player Nash system on the tensor grid (one space dimension), the
//! projections `u_i^N = U(t, x_i, m_x^{N,i})`, and convergence studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disc::Disc;
use crate::error::{Error, Result};
use crate::geometry::DomainGrid;
use crate::linearized::loglog_slope;
use crate::measures::MeasureField;
use crate::mfg::{step_count, Cascade, MfgSolver, SolverConfig};
use crate::model::{CouplingTable, ModelSpec};

/// Largest tensor size accepted by the solver.
pub const MAX_TENSOR_NODES: usize = 2_000_000;

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: usize = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Per-axis discretization shared by every player, plus the tensor
/// bookkeeping for the symmetric storage.
#[derive(Debug, Clone)]
pub struct TensorLayout {
    pub players: usize,
    /// Active nodes per axis.
    pub na: usize,
    /// Full-grid indices of the axis nodes.
    pub axis_nodes: Vec<usize>,
    pub strides: Vec<usize>,
    pub total: usize,
    /// Number of multisets of `players - 1` axis nodes.
    pub n_multi: usize,
    canon: Vec<u32>,
    rep: Vec<u32>,
}

impl TensorLayout {
    pub fn new(players: usize, axis_nodes: Vec<usize>) -> Result<Self> {
        if !(2..=4).contains(&players) {
            return Err(Error::Config(format!("player count {players} outside 2..=4")));
        }
        let na = axis_nodes.len();
        let total = na
            .checked_pow(players as u32)
            .filter(|&t| t <= MAX_TENSOR_NODES)
            .ok_or_else(|| Error::Config(format!("{na}^{players} tensor nodes exceed the budget of {MAX_TENSOR_NODES}")))?;
        let strides: Vec<usize> = (0..players).map(|j| na.pow(j as u32)).collect();
        let k = players - 1;
        let n_multi = binom(na + k - 1, k);
        let mut canon = vec![0u32; total];
        let mut rep = vec![u32::MAX; na * n_multi];
        let mut digits = vec![0usize; players];
        for (idx, c) in canon.iter_mut().enumerate() {
            let mut r = idx;
            for d in digits.iter_mut() {
                *d = r % na;
                r /= na;
            }
            let mut others: Vec<usize> = digits[1..].to_vec();
            others.sort_unstable();
            let rank: usize = others.iter().enumerate().map(|(i, &b)| binom(b + i, i + 1)).sum();
            let ci = digits[0] * n_multi + rank;
            *c = ci as u32;
            let sorted = digits[1..].windows(2).all(|w| w[0] <= w[1]);
            if sorted {
                rep[ci] = idx as u32;
            }
        }
        Ok(TensorLayout { players, na, axis_nodes, strides, total, n_multi, canon, rep })
    }

    pub fn n_canonical(&self) -> usize {
        self.na * self.n_multi
    }

    #[inline]
    pub fn digit(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.na
    }

    pub fn digits(&self, idx: usize) -> Vec<usize> {
        (0..self.players).map(|j| self.digit(idx, j)).collect()
    }

    pub fn index(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    /// Index with the digits of axes `0` and `j` exchanged.
    #[inline]
    pub fn swap(&self, idx: usize, j: usize) -> usize {
        let a0 = idx % self.na;
        let aj = self.digit(idx, j);
        idx - a0 - aj * self.strides[j] + aj + a0 * self.strides[j]
    }

    #[inline]
    pub fn canonical(&self, idx: usize) -> usize {
        self.canon[idx] as usize
    }

    pub fn representative(&self, c: usize) -> usize {
        self.rep[c] as usize
    }

    pub fn expand(&self, v: &[f64]) -> Vec<f64> {
        self.canon.iter().map(|&c| v[c as usize]).collect()
    }

    pub fn contract(&self, full: &[f64]) -> Vec<f64> {
        self.rep.iter().map(|&r| full[r as usize]).collect()
    }

    /// Largest deviation from symmetry in the last `players - 1` axes.
    pub fn exchangeability_defect(&self, full: &[f64]) -> f64 {
        full.iter().zip(&self.canon).map(|(v, &c)| (v - full[self.rep[c as usize] as usize]).abs()).fold(0.0, f64::max)
    }

    /// Axis digits of the other players for multiset `r`.
    pub fn multiset(&self, r: usize) -> Vec<usize> {
        let idx = self.representative(r);
        (1..self.players).map(|j| self.digit(idx, j)).collect()
    }
}

/// Values of `V^N(x_own; x_others)` on the canonical set per time level.
#[derive(Debug, Clone)]
pub struct NashTensor {
    pub players: usize,
    pub layout: TensorLayout,
    pub dt: f64,
    pub nt: usize,
    pub eps: f64,
    pub h: f64,
    /// Axis node coordinates.
    pub xs: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub exchangeability_defect: f64,
    pub terminal_defect: f64,
}

impl NashTensor {
    pub fn grid_per_axis(&self) -> usize {
        self.layout.na
    }

    /// `v_i^N` at time level `n` for axis digits of all players.
    pub fn value(&self, n: usize, i: usize, digits: &[usize]) -> f64 {
        let mut d = digits.to_vec();
        d.swap(0, i);
        self.values[n][self.layout.canonical(self.layout.index(&d))]
    }

    pub fn full(&self, n: usize) -> Vec<f64> {
        self.layout.expand(&self.values[n])
    }
}

/// Canonical values of `u_i^N` at selected time levels.
#[derive(Debug, Clone)]
pub struct ProjectionTensor {
    pub players: usize,
    pub t_levels: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub solves: usize,
}

impl ProjectionTensor {
    pub fn at(&self, n: usize) -> Option<&Vec<f64>> {
        self.t_levels.iter().position(|&l| l == n).map(|p| &self.values[p])
    }
}

/// Time step satisfying the N-player transport bound with a safety margin
/// and dividing the horizon.
pub fn nash_time_step(grid: &DomainGrid, model: &ModelSpec, players: usize) -> f64 {
    let amax =
        grid.nodes.iter().map(|x| model.hamiltonian.hp_bound(grid, x) + model.diffusion.b_tilde(grid, x)[0].abs()).fold(0.0, f64::max);
    let dt_max = 0.9 * grid.h / (players as f64 * amax.max(1e-12));
    let steps = (model.horizon / dt_max).ceil().max(1.0);
    model.horizon / steps
}

struct Stepper<'a> {
    grid: &'a DomainGrid,
    model: &'a ModelSpec,
    layout: TensorLayout,
    disc: Disc,
    running: Vec<f64>,
    terminal: Vec<f64>,
}

fn coupling_tensor(layout: &TensorLayout, table: &CouplingTable) -> Vec<f64> {
    let k = layout.players - 1;
    let mut out = vec![0.0; layout.n_canonical()];
    for r in 0..layout.n_multi {
        let others = layout.multiset(r);
        let s: Vec<f64> = table.phi.iter().map(|p| others.iter().map(|&b| p[layout.axis_nodes[b]]).sum::<f64>() / k as f64).collect();
        for a in 0..layout.na {
            let node = layout.axis_nodes[a];
            let mut v = table.potential[node];
            for (m, p) in table.phi.iter().enumerate() {
                v += table.lambda[m] * p[node] * table.response.eval(s[m]);
            }
            out[a * layout.n_multi + r] = v;
        }
    }
    out
}

impl<'a> Stepper<'a> {
    fn new(grid: &'a DomainGrid, model: &'a ModelSpec, players: usize, config: &SolverConfig) -> Result<Self> {
        if grid.dim != 1 {
            return Err(Error::Config("the Nash solver is one-dimensional".into()));
        }
        let eps = grid.finest_eps();
        let disc = Disc::new(grid, model, eps, config.dt, config.theta_scheme)?;
        let amax = disc.alpha.iter().map(|a| a[0]).fold(0.0, f64::max);
        let cfl = config.dt * players as f64 * amax / disc.h;
        if cfl > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "dt = {} violates the {players}-player transport bound (dt * N * alpha / h = {cfl:.3})",
                config.dt
            )));
        }
        let layout = TensorLayout::new(players, disc.nodes.clone())?;
        let running = coupling_tensor(&layout, &CouplingTable::new(grid, &model.running));
        let terminal = coupling_tensor(&layout, &CouplingTable::new(grid, &model.terminal));
        Ok(Stepper { grid, model, layout, disc, running, terminal })
    }

    fn diffuse_axis(&self, w: &mut [f64], axis: usize) {
        let na = self.layout.na;
        let s = self.layout.strides[axis];
        let block = s * na;
        let mut fiber = vec![0.0; na];
        for base in (0..self.layout.total).step_by(block) {
            for inner in 0..s {
                let start = base + inner;
                for (k, f) in fiber.iter_mut().enumerate() {
                    *f = w[start + k * s];
                }
                let out = self.disc.diffuse(&fiber);
                for (k, o) in out.iter().enumerate() {
                    w[start + k * s] = *o;
                }
            }
        }
    }

    /// One backward step for player 1's view: returns `W^n` from `W^{n+1}`
    /// (both full tensors).
    fn step(&self, next: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let d = &self.disc;
        let (na, h, dt) = (l.na, d.h, d.dt);
        let mut wt = next.to_vec();
        for axis in 0..l.players {
            self.diffuse_axis(&mut wt, axis);
        }
        // Own one-sided gradients, numerical Hamiltonian and own drift.
        let mut ham = vec![0.0; l.total];
        let mut drift = vec![0.0; l.total];
        for idx in 0..l.total {
            let a = idx % na;
            let pm = if a > 0 { (wt[idx] - wt[idx - 1]) / h } else { 0.0 };
            let pp = if a + 1 < na { (wt[idx + 1] - wt[idx]) / h } else { 0.0 };
            let p = [0.5 * (pm + pp), 0.0];
            let x = &d.x[a];
            let b = d.b_tilde[a][0];
            ham[idx] = self.model.hamiltonian.h(self.grid, x, &p) + b * p[0] - 0.5 * d.alpha[a][0] * (pp - pm);
            drift[idx] = self.model.hamiltonian.hp(self.grid, x, &p)[0] + b;
        }
        let c = 0.5 / h;
        let mut out = vec![0.0; l.total];
        for idx in 0..l.total {
            let mut acc = ham[idx];
            for j in 1..l.players {
                let s = l.strides[j];
                let aj = l.digit(idx, j);
                let g = drift[l.swap(idx, j)];
                let al = d.alpha[aj][0];
                let w0 = wt[idx];
                if aj + 1 < na {
                    acc += (g - al) * c * (wt[idx + s] - w0);
                }
                if aj > 0 {
                    acc += (-g - al) * c * (wt[idx - s] - w0);
                }
            }
            out[idx] = wt[idx] - dt * acc;
        }
        let fr = l.expand(&self.running);
        for (o, f) in out.iter_mut().zip(&fr) {
            *o += dt * f;
        }
        out
    }
}

/// Backward solve of the Nash system with explicit coupling between
/// players; the terminal data is `G(x_i, m_x^{N,i})` without correction.
pub fn solve_nash(grid: &DomainGrid, model: &ModelSpec, players: usize, config: &SolverConfig) -> Result<NashTensor> {
    config.validate(grid, model)?;
    let st = Stepper::new(grid, model, players, config)?;
    let nt = step_count(0.0, model.horizon, config.dt)?;
    let l = &st.layout;
    let mut values = vec![Vec::new(); nt + 1];
    values[nt] = st.terminal.clone();
    let mut defect: f64 = 0.0;
    let mut full = l.expand(&st.terminal);
    let terminal_defect = full.iter().enumerate().map(|(idx, v)| (v - st.terminal[l.canonical(idx)]).abs()).fold(0.0, f64::max);
    for n in (0..nt).rev() {
        let next = st.step(&full);
        defect = defect.max(l.exchangeability_defect(&next));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite Nash values at step {n}")));
        }
        values[n] = l.contract(&next);
        full = l.expand(&values[n]);
    }
    Ok(NashTensor {
        players,
        layout: st.layout.clone(),
        dt: config.dt,
        nt,
        eps: st.disc.eps,
        h: st.disc.h,
        xs: st.disc.x.iter().map(|x| x[0]).collect(),
        values,
        exchangeability_defect: defect,
        terminal_defect,
    })
}

/// `u_i^N` at the requested time levels: one MFG solve per distinct
/// empirical measure and level (`U(T, ., m) = G(., m)` at the horizon).
pub fn project_master(
    grid: &DomainGrid,
    model: &ModelSpec,
    players: usize,
    t_levels: &[usize],
    config: &SolverConfig,
) -> Result<ProjectionTensor> {
    let st = Stepper::new(grid, model, players, config)?;
    let nt = step_count(0.0, model.horizon, config.dt)?;
    let l = &st.layout;
    let mut cfg = config.clone();
    cfg.cascade = Cascade::FinestOnly;
    let solver = MfgSolver::new(grid, model, cfg)?;
    let k = (players - 1) as f64;
    let mut values = Vec::with_capacity(t_levels.len());
    let mut solves = 0;
    for &n in t_levels {
        if n > nt {
            return Err(Error::Usage(format!("time level {n} beyond {nt}")));
        }
        if n == nt {
            values.push(st.terminal.clone());
            continue;
        }
        let cols: Vec<Vec<f64>> = (0..l.n_multi)
            .into_par_iter()
            .map(|r| {
                let mut masses = vec![0.0; grid.len()];
                for b in l.multiset(r) {
                    masses[l.axis_nodes[b]] += 1.0 / k;
                }
                let m = MeasureField::from_masses(grid, &masses)?;
                let sol = solver.solve(n as f64 * config.dt, &m)?;
                Ok(sol.u[0].clone())
            })
            .collect::<Result<_>>()?;
        solves += cols.len();
        let mut v = vec![0.0; l.n_canonical()];
        for (r, col) in cols.iter().enumerate() {
            for a in 0..l.na {
                v[a * l.n_multi + r] = col[a];
            }
        }
        values.push(v);
    }
    Ok(ProjectionTensor { players, t_levels: t_levels.to_vec(), values, solves })
}

/// Remainder of the projected values in the Nash scheme between levels
/// `n` and `n + 1`: `(u^n - S(u^{n+1})) / dt` with `S` the Nash step.
pub fn nash_remainder(grid: &DomainGrid, model: &ModelSpec, proj: &ProjectionTensor, n: usize, config: &SolverConfig) -> Result<Vec<f64>> {
    let st = Stepper::new(grid, model, proj.players, config)?;
    let (now, next) = match (proj.at(n), proj.at(n + 1)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Usage(format!("projection lacks levels {n} and {}", n + 1))),
    };
    let stepped = st.step(&st.layout.expand(next));
    let now_full = st.layout.expand(now);
    let r: Vec<f64> = now_full.iter().zip(&stepped).map(|(a, b)| (a - b) / config.dt).collect();
    Ok(st.layout.contract(&r))
}

/// Row of a convergence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub players: usize,
    pub grid_per_axis: usize,
    pub dt: f64,
    /// `sup |v - u|` over the tensor grid at the sampled levels.
    pub sup_gap: f64,
    /// Same supremum restricted to states charged by `m0^{(x)N}`.
    pub sup_gap_weighted: f64,
    /// Monte Carlo `|| w^N - U ||_{L^1(m0)}`.
    pub w_gap: f64,
    pub w_gap_exact: f64,
    pub remainder_sup: f64,
    pub exchangeability_defect: f64,
    pub projection_solves: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub sup_slope: f64,
    pub w_slope: f64,
    pub remainder_slope: f64,
    pub seed: u64,
    pub samples: usize,
}

/// `w^N(t0, x_1) = int V(x_1; x_2..x_N) prod m0(dx_j)`, exact quadrature on
/// grid masses (axis numbering).
pub fn w_exact(t: &NashTensor, n: usize, m_axis: &[f64]) -> Vec<f64> {
    let l = &t.layout;
    let full = t.full(n);
    let total: f64 = m_axis.iter().sum();
    let norm = total.powi(l.players as i32 - 1);
    let mut out = vec![0.0; l.na];
    for (idx, v) in full.iter().enumerate() {
        let mut w = 1.0;
        for j in 1..l.players {
            w *= m_axis[l.digit(idx, j)];
            if w == 0.0 {
                break;
            }
        }
        out[idx % l.na] += w * v;
    }
    out.iter().map(|v| v / norm).collect()
}

/// Monte Carlo version of [`w_exact`] with `samples` draws of the other
/// players from the grid masses.
pub fn w_monte_carlo(t: &NashTensor, n: usize, m_axis: &[f64], samples: usize, seed: u64) -> Vec<f64> {
    let l = &t.layout;
    let cdf: Vec<f64> = m_axis
        .iter()
        .scan(0.0, |s, &m| {
            *s += m;
            Some(*s)
        })
        .collect();
    let total = *cdf.last().unwrap_or(&1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; l.na];
    let mut digits = vec![0usize; l.players];
    for _ in 0..samples {
        for d in digits.iter_mut().skip(1) {
            let u: f64 = rng.random::<f64>() * total;
            *d = cdf.partition_point(|&c| c < u).min(l.na - 1);
        }
        for (a, o) in acc.iter_mut().enumerate() {
            digits[0] = a;
            *o += t.values[n][l.canonical(l.index(&digits))];
        }
    }
    acc.iter().map(|v| v / samples as f64).collect()
}

/// Convergence of the Nash values to the projections over `n_list`.
pub fn convergence_study(
    grid: &DomainGrid,
    model: &ModelSpec,
    n_list: &[usize],
    m0: &MeasureField,
    samples: usize,
    seed: u64,
    base: &SolverConfig,
) -> Result<ConvergenceTable> {
    if samples < 1000 {
        return Err(Error::Usage("at least 1000 samples are required for the w integral".into()));
    }
    m0.check_grid(grid)?;
    // One time step for every N, so the time discretization does not vary
    // along the study.
    let n_max = n_list.iter().copied().max().unwrap_or(2);
    let mut cfg = base.clone();
    cfg.dt = base.dt.min(nash_time_step(grid, model, n_max));
    step_count(0.0, model.horizon, cfg.dt)?;
    let mut rows = Vec::new();
    for &players in n_list {
        let nash = solve_nash(grid, model, players, &cfg)?;
        let half = nash.nt / 2;
        let levels = [0, 1, half];
        let proj = project_master(grid, model, players, &levels, &cfg)?;
        let l = &nash.layout;
        let m_full = m0.masses(grid);
        let m_axis: Vec<f64> = l.axis_nodes.iter().map(|&k| m_full[k]).collect();
        let charged: Vec<bool> = (0..l.n_canonical())
            .map(|c| {
                let idx = l.representative(c);
                (0..l.players).all(|j| m_axis[l.digit(idx, j)] > 1e-3 / l.na as f64)
            })
            .collect();
        let mut sup_gap: f64 = 0.0;
        let mut sup_w: f64 = 0.0;
        for &n in &[0, half] {
            let u = proj.at(n).expect("level requested");
            for (c, (a, b)) in nash.values[n].iter().zip(u).enumerate() {
                let g = (a - b).abs();
                sup_gap = sup_gap.max(g);
                if charged[c] {
                    sup_w = sup_w.max(g);
                }
            }
        }
        // U(0, x, m0) on the axis nodes.
        let solver = MfgSolver::new(grid, model, cfg.clone())?;
        let sol = solver.solve(0.0, m0)?;
        let u_full = sol.u_full(0);
        let u_axis: Vec<f64> = l.axis_nodes.iter().map(|&k| u_full[k]).collect();
        let mass: f64 = m_axis.iter().sum();
        let l1 = |w: &[f64]| -> f64 { w.iter().zip(&u_axis).zip(&m_axis).map(|((a, b), m)| (a - b).abs() * m).sum::<f64>() / mass };
        let w_gap = l1(&w_monte_carlo(&nash, 0, &m_axis, samples, seed ^ players as u64));
        let w_gap_exact = l1(&w_exact(&nash, 0, &m_axis));
        let rem = nash_remainder(grid, model, &proj, 0, &cfg)?;
        rows.push(ConvergenceRow {
            players,
            grid_per_axis: l.na,
            dt: cfg.dt,
            sup_gap,
            sup_gap_weighted: sup_w,
            w_gap,
            w_gap_exact,
            remainder_sup: rem.iter().map(|v| v.abs()).fold(0.0, f64::max),
            exchangeability_defect: nash.exchangeability_defect,
            projection_solves: proj.solves,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.players as f64).collect();
    let slope = |f: &dyn Fn(&ConvergenceRow) -> f64| -> f64 {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        if rows.len() >= 2 && ys.iter().all(|&y| y > 0.0) {
            loglog_slope(&ns, &ys)
        } else {
            f64::NAN
        }
    };
    Ok(ConvergenceTable {
        sup_slope: slope(&|r| r.sup_gap),
        w_slope: slope(&|r| r.w_gap),
        remainder_slope: slope(&|r| r.remainder_sup),
        rows,
        seed,
        samples,
    })
}

/// Draws one point from grid masses (axis numbering) by inverse CDF
/// with uniform jitter inside the cell.
pub fn sample_axis<R: Rng>(rng: &mut R, xs: &[f64], h: f64, m_axis: &[f64]) -> f64 {
    let total: f64 = m_axis.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (a, m) in m_axis.iter().enumerate() {
        acc += m;
        if u < acc {
            return xs[a] + (rng.random::<f64>() - 0.5) * h;
        }
    }
    xs[xs.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_interval_domain;

    #[test]
    fn canonical_layout_round_trips() {
        let l = TensorLayout::new(3, (0..7).collect()).unwrap();
        assert_eq!(l.n_multi, binom(8, 2));
        assert!(l.rep.iter().all(|&r| r != u32::MAX));
        for c in 0..l.n_canonical() {
            assert_eq!(l.canonical(l.representative(c)), c);
        }
        let idx = l.index(&[2, 5, 1]);
        assert_eq!(l.canonical(idx), l.canonical(l.index(&[2, 1, 5])));
        assert_eq!(l.digits(l.swap(idx, 2)), vec![1, 5, 2]);
    }

    #[test]
    fn oversized_tensor_is_rejected() {
        assert!(matches!(TensorLayout::new(4, (0..40).collect()), Err(Error::Config(_))));
    }

    #[test]
    fn decoupled_nash_matches_single_player() {
        let g = build_interval_domain(1.0, 24).unwrap();
        let m = ModelSpec::decoupled_1d();
        let mut cfg = SolverConfig::with_dt(nash_time_step(&g, &m, 2));
        cfg.cascade = Cascade::FinestOnly;
        let nash = solve_nash(&g, &m, 2, &cfg).unwrap();
        let m0 = crate::measures::gaussian_bump(&g, [0.5, 0.0], 0.1, 0.2);
        let sol = MfgSolver::new(&g, &m, cfg.clone()).unwrap().solve(0.0, &m0).unwrap();
        let l = &nash.layout;
        for a in 0..l.na {
            for b in 0..l.na {
                let v = nash.value(0, 0, &[a, b]);
                assert!((v - sol.u[0][a]).abs() < 1e-12, "{a} {b}");
            }
        }
    }
}
