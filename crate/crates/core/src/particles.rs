//! Euler–Maruyama simulation of the players' optimal trajectories under
//! Nash, projected or mean field feedback, with a counted boundary
//! safeguard.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainGrid;
use crate::linearized::loglog_slope;
use crate::measures::MeasureField;
use crate::mfg::{MfgSolution, SolverConfig};
use crate::model::ModelSpec;
use crate::nash::{nash_time_step, project_master, sample_axis, solve_nash, NashTensor, ProjectionTensor, TensorLayout};

/// Maximum number of stored positions when full paths are requested.
pub const MAX_STORED_POSITIONS: usize = 20_000_000;

/// Own-gradient feedback `D_{x_i} w_i(t, x)` for each player.
pub trait Feedback: Sync {
    fn players(&self) -> usize;
    /// Time interval covered by the feedback.
    fn span(&self) -> (f64, f64);
    fn gradient(&self, t: f64, i: usize, x: &[f64]) -> f64;
}

/// No control: every gradient is zero.
pub struct ZeroFeedback {
    pub players: usize,
    pub horizon: f64,
}

impl Feedback for ZeroFeedback {
    fn players(&self) -> usize {
        self.players
    }
    fn span(&self) -> (f64, f64) {
        (0.0, self.horizon)
    }
    fn gradient(&self, _t: f64, _i: usize, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Feedback tabulated on the symmetric tensor grid, piecewise constant in
/// time on solver steps and multilinear in space.
pub struct TensorFeedback {
    layout: TensorLayout,
    xs: Vec<f64>,
    h: f64,
    t0: f64,
    dt: f64,
    /// Own-gradients per level, canonical numbering.
    grads: Vec<Vec<f64>>,
}

fn own_gradient(layout: &TensorLayout, h: f64, values: &[f64]) -> Vec<f64> {
    let na = layout.na;
    (0..layout.n_canonical())
        .map(|c| {
            let a = c / layout.n_multi;
            let at = |b: usize| values[b * layout.n_multi + c % layout.n_multi];
            let pm = if a > 0 { (at(a) - at(a - 1)) / h } else { 0.0 };
            let pp = if a + 1 < na { (at(a + 1) - at(a)) / h } else { 0.0 };
            0.5 * (pm + pp)
        })
        .collect()
}

impl TensorFeedback {
    pub fn from_nash(t: &NashTensor) -> Self {
        let grads = t.values[..t.nt.max(1)].iter().map(|v| own_gradient(&t.layout, t.h, v)).collect();
        TensorFeedback { layout: t.layout.clone(), xs: t.xs.clone(), h: t.h, t0: 0.0, dt: t.dt, grads }
    }

    /// Requires the projection at every level `0..nt`.
    pub fn from_projection(p: &ProjectionTensor, like: &NashTensor) -> Result<Self> {
        let grads = (0..like.nt.max(1))
            .map(|n| {
                p.at(n)
                    .map(|v| own_gradient(&like.layout, like.h, v))
                    .ok_or_else(|| Error::Config(format!("projection lacks time level {n}")))
            })
            .collect::<Result<_>>()?;
        Ok(TensorFeedback { layout: like.layout.clone(), xs: like.xs.clone(), h: like.h, t0: 0.0, dt: like.dt, grads })
    }

    fn level(&self, t: f64) -> usize {
        (((t - self.t0) / self.dt + 1e-9).floor().max(0.0) as usize).min(self.grads.len() - 1)
    }
}

/// Cell and weight of `x` on the axis nodes, clamped to the node range.
fn locate(xs: &[f64], h: f64, x: f64) -> (usize, f64) {
    let n = xs.len();
    let s = ((x - xs[0]) / h).clamp(0.0, (n - 1) as f64);
    let a = (s.floor() as usize).min(n - 2);
    (a, s - a as f64)
}

impl Feedback for TensorFeedback {
    fn players(&self) -> usize {
        self.layout.players
    }
    fn span(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.dt * self.grads.len() as f64)
    }
    fn gradient(&self, t: f64, i: usize, x: &[f64]) -> f64 {
        let l = &self.layout;
        let g = &self.grads[self.level(t)];
        let mut cells = Vec::with_capacity(l.players);
        // Axis 0 carries player i; the others keep their order.
        cells.push(locate(&self.xs, self.h, x[i]));
        for (j, &xj) in x.iter().enumerate() {
            if j != i {
                cells.push(locate(&self.xs, self.h, xj));
            }
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << l.players) {
            let mut w = 1.0;
            let mut idx = 0;
            for (j, &(a, th)) in cells.iter().enumerate() {
                let bit = (corner >> j) & 1;
                w *= if bit == 1 { th } else { 1.0 - th };
                idx += (a + bit) * l.strides[j];
            }
            if w != 0.0 {
                acc += w * g[l.canonical(idx)];
            }
        }
        acc
    }
}

/// Single-player feedback `D_x u(t, x)` from a mean field solution; every
/// player uses it independently of the others.
pub struct MfgFeedback {
    pub players: usize,
    xs: Vec<f64>,
    h: f64,
    t0: f64,
    dt: f64,
    grads: Vec<Vec<f64>>,
}

impl MfgFeedback {
    pub fn new(grid: &DomainGrid, sol: &MfgSolution, players: usize) -> Result<Self> {
        if grid.dim != 1 {
            return Err(Error::Config("particle feedback is one-dimensional".into()));
        }
        let xs: Vec<f64> = sol.nodes.iter().map(|&k| grid.nodes[k][0]).collect();
        let grads = sol.u[..sol.nt.max(1)]
            .iter()
            .map(|u| {
                let n = u.len();
                (0..n)
                    .map(|a| {
                        let pm = if a > 0 { (u[a] - u[a - 1]) / grid.h } else { 0.0 };
                        let pp = if a + 1 < n { (u[a + 1] - u[a]) / grid.h } else { 0.0 };
                        0.5 * (pm + pp)
                    })
                    .collect()
            })
            .collect();
        Ok(MfgFeedback { players, xs, h: grid.h, t0: sol.t0, dt: sol.dt, grads })
    }
}

impl Feedback for MfgFeedback {
    fn players(&self) -> usize {
        self.players
    }
    fn span(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.dt * self.grads.len() as f64)
    }
    fn gradient(&self, t: f64, i: usize, x: &[f64]) -> f64 {
        let n = (((t - self.t0) / self.dt + 1e-9).floor().max(0.0) as usize).min(self.grads.len() - 1);
        let (a, th) = locate(&self.xs, self.h, x[i]);
        (1.0 - th) * self.grads[n][a] + th * self.grads[n][a + 1]
    }
}

/// Counters of the boundary safeguard.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SafeguardCounters {
    pub steps: u64,
    /// Steps whose first proposal left the domain.
    pub exit_attempts: u64,
    /// Steps that still left the domain after every retry and were projected.
    pub clamped: u64,
    pub min_dist: f64,
}

impl SafeguardCounters {
    fn new() -> Self {
        SafeguardCounters { min_dist: f64::INFINITY, ..Default::default() }
    }
    fn merge(mut self, o: Self) -> Self {
        self.steps += o.steps;
        self.exit_attempts += o.exit_attempts;
        self.clamped += o.clamped;
        self.min_dist = self.min_dist.min(o.min_dist);
        self
    }
}

struct Dynamics<'a> {
    grid: &'a DomainGrid,
    model: &'a ModelSpec,
    dt: f64,
}

impl Dynamics<'_> {
    /// One Euler–Maruyama step with the retry/projection safeguard.
    fn step(&self, x: f64, grad: f64, xi: f64, c: &mut SafeguardCounters) -> f64 {
        let g = self.grid;
        let p = [x, 0.0];
        let drift = -self.model.hamiltonian.hp(g, &p, &[grad, 0.0])[0];
        let sig = self.model.diffusion.sigma(g, &p)[0];
        c.steps += 1;
        let mut dt = self.dt;
        let mut y = x + drift * dt + std::f64::consts::SQRT_2 * sig * dt.sqrt() * xi;
        if !g.contains(&[y, 0.0]) {
            c.exit_attempts += 1;
            let mut ok = false;
            for _ in 0..6 {
                dt *= 0.5;
                y = x + drift * dt + std::f64::consts::SQRT_2 * sig * dt.sqrt() * xi;
                if g.contains(&[y, 0.0]) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                c.clamped += 1;
                y = g.project_to_level(&[y, 0.0], 0.5 * g.h)[0];
            }
        }
        c.min_dist = c.min_dist.min(g.dist_at(&[y, 0.0]));
        y
    }
}

fn stream(seed: u64, player: usize, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((player as u64) << 40) | path as u64);
    rng
}

/// Summary of a simulated ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub players: usize,
    pub n_paths: usize,
    pub dt_sde: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Mean and variance of each player's position per recorded time.
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub min_dist_t: Vec<f64>,
    pub counters: SafeguardCounters,
    /// Full paths `[path][step][player]` when requested and small enough.
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
}

fn check_span(fb: &dyn Feedback, t0: f64, horizon: f64) -> Result<()> {
    let (a, b) = fb.span();
    if t0 < a - 1e-12 || horizon > b + 1e-9 {
        return Err(Error::Config(format!("feedback covers [{a}, {b}], simulation needs [{t0}, {horizon}]")));
    }
    Ok(())
}

fn steps_for(t0: f64, horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt_sde must be positive".into()));
    }
    Ok(((horizon - t0) / dt).round().max(1.0) as usize)
}

fn initial_positions(grid: &DomainGrid, m0: &MeasureField, seed: u64, path: usize, players: usize) -> Vec<f64> {
    let xs: Vec<f64> = grid.nodes.iter().map(|x| x[0]).collect();
    let masses = m0.masses(grid);
    (0..players)
        .map(|i| {
            let mut r = stream(seed ^ 0x5eed_0000_0000, i, path);
            sample_axis(&mut r, &xs, grid.h, &masses).clamp(1e-12, grid.diameter() - 1e-12)
        })
        .collect()
}

/// Simulates `n_paths` realizations of the N-player system under `fb`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    grid: &DomainGrid,
    model: &ModelSpec,
    fb: &dyn Feedback,
    m0: &MeasureField,
    n_paths: usize,
    dt_sde: f64,
    seed: u64,
    keep_paths: bool,
) -> Result<ParticleEnsemble> {
    if grid.dim != 1 {
        return Err(Error::Config("particle simulation is one-dimensional".into()));
    }
    m0.check_grid(grid)?;
    let (t0, horizon) = (fb.span().0, model.horizon);
    check_span(fb, t0, horizon)?;
    let steps = steps_for(t0, horizon, dt_sde)?;
    let players = fb.players();
    if keep_paths && n_paths * (steps + 1) * players > MAX_STORED_POSITIONS {
        return Err(Error::Config("full path storage exceeds the size guard".into()));
    }
    let dynamics = Dynamics { grid, model, dt: dt_sde };
    struct PathOut {
        pos: Vec<Vec<f64>>,
        counters: SafeguardCounters,
    }
    let outs: Vec<PathOut> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rngs: Vec<ChaCha8Rng> = (0..players).map(|i| stream(seed, i, p)).collect();
            let mut x = initial_positions(grid, m0, seed, p, players);
            let mut c = SafeguardCounters::new();
            let mut pos = Vec::with_capacity(steps + 1);
            pos.push(x.clone());
            for s in 0..steps {
                let t = t0 + s as f64 * dt_sde;
                let grads: Vec<f64> = (0..players).map(|i| fb.gradient(t, i, &x)).collect();
                for i in 0..players {
                    let xi: f64 = StandardNormal.sample(&mut rngs[i]);
                    x[i] = dynamics.step(x[i], grads[i], xi, &mut c);
                }
                pos.push(x.clone());
            }
            PathOut { pos, counters: c }
        })
        .collect();
    let times: Vec<f64> = (0..=steps).map(|s| t0 + s as f64 * dt_sde).collect();
    let mut mean = vec![vec![0.0; players]; steps + 1];
    let mut var = vec![vec![0.0; players]; steps + 1];
    let mut min_dist_t = vec![f64::INFINITY; steps + 1];
    for o in &outs {
        for (s, xs) in o.pos.iter().enumerate() {
            for (i, &v) in xs.iter().enumerate() {
                mean[s][i] += v;
                var[s][i] += v * v;
                min_dist_t[s] = min_dist_t[s].min(grid.dist_at(&[v, 0.0]));
            }
        }
    }
    let n = n_paths as f64;
    for s in 0..=steps {
        for i in 0..players {
            mean[s][i] /= n;
            var[s][i] = (var[s][i] / n - mean[s][i] * mean[s][i]).max(0.0);
        }
    }
    let counters = outs.iter().fold(SafeguardCounters::new(), |a, o| a.merge(o.counters));
    let paths = keep_paths.then(|| outs.into_iter().map(|o| o.pos).collect());
    Ok(ParticleEnsemble { players, n_paths, dt_sde, seed, times, mean, var, min_dist_t, counters, paths })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairStats {
    pub players: usize,
    pub n_paths: usize,
    pub dt_sde: f64,
    pub times: Vec<f64>,
    /// `E|X^i_t - Y^i_t|^2` averaged over players, per time.
    pub msd: Vec<f64>,
    pub msd_se: Vec<f64>,
    /// Per-player supremum over time.
    pub sup_per_player: Vec<f64>,
    pub sup: f64,
    pub sup_se: f64,
    pub counters_x: SafeguardCounters,
    pub counters_y: SafeguardCounters,
}

/// Simulates `X` (feedback `fb_x`) and `Y` (feedback `fb_y`) with shared
/// initial draws and Brownian increments.
#[allow(clippy::too_many_arguments)]
pub fn simulate_pair(
    grid: &DomainGrid,
    model: &ModelSpec,
    fb_y: &dyn Feedback,
    fb_x: &dyn Feedback,
    m0: &MeasureField,
    n_paths: usize,
    dt_sde: f64,
    seed: u64,
) -> Result<PairStats> {
    if fb_x.players() != fb_y.players() {
        return Err(Error::Usage("feedbacks disagree on the player count".into()));
    }
    if n_paths < 2 {
        return Err(Error::Usage("at least two paths are needed for standard errors".into()));
    }
    m0.check_grid(grid)?;
    let t0 = fb_y.span().0.max(fb_x.span().0);
    check_span(fb_x, t0, model.horizon)?;
    check_span(fb_y, t0, model.horizon)?;
    let steps = steps_for(t0, model.horizon, dt_sde)?;
    let players = fb_x.players();
    let dynamics = Dynamics { grid, model, dt: dt_sde };
    // Per path: squared gaps per (step, player) and the two counter sets.
    let outs: Vec<(Vec<f64>, SafeguardCounters, SafeguardCounters)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rngs: Vec<ChaCha8Rng> = (0..players).map(|i| stream(seed, i, p)).collect();
            let mut x = initial_positions(grid, m0, seed, p, players);
            let mut y = x.clone();
            let (mut cx, mut cy) = (SafeguardCounters::new(), SafeguardCounters::new());
            let mut sq = vec![0.0; (steps + 1) * players];
            for s in 0..steps {
                let t = t0 + s as f64 * dt_sde;
                let gx: Vec<f64> = (0..players).map(|i| fb_x.gradient(t, i, &x)).collect();
                let gy: Vec<f64> = (0..players).map(|i| fb_y.gradient(t, i, &y)).collect();
                for i in 0..players {
                    let xi: f64 = StandardNormal.sample(&mut rngs[i]);
                    x[i] = dynamics.step(x[i], gx[i], xi, &mut cx);
                    y[i] = dynamics.step(y[i], gy[i], xi, &mut cy);
                    let d = x[i] - y[i];
                    sq[(s + 1) * players + i] = d * d;
                }
            }
            (sq, cx, cy)
        })
        .collect();
    let n = n_paths as f64;
    let mut msd = vec![0.0; steps + 1];
    let mut msd_se = vec![0.0; steps + 1];
    let mut per_player = vec![vec![0.0; steps + 1]; players];
    for s in 0..=steps {
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for (sq, _, _) in &outs {
            let row = &sq[s * players..(s + 1) * players];
            let avg = row.iter().sum::<f64>() / players as f64;
            sum += avg;
            sum2 += avg * avg;
            for (i, v) in row.iter().enumerate() {
                per_player[i][s] += v / n;
            }
        }
        msd[s] = sum / n;
        msd_se[s] = ((sum2 / n - msd[s] * msd[s]).max(0.0) / (n - 1.0)).sqrt();
    }
    let (arg, sup) = msd.iter().enumerate().fold((0, 0.0f64), |(a, m), (s, &v)| if v > m { (s, v) } else { (a, m) });
    let counters_x = outs.iter().fold(SafeguardCounters::new(), |a, o| a.merge(o.1));
    let counters_y = outs.iter().fold(SafeguardCounters::new(), |a, o| a.merge(o.2));
    Ok(PairStats {
        players,
        n_paths,
        dt_sde,
        times: (0..=steps).map(|s| t0 + s as f64 * dt_sde).collect(),
        sup,
        sup_se: msd_se[arg],
        msd,
        msd_se,
        sup_per_player: per_player.iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).collect(),
        counters_x,
        counters_y,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleRow {
    pub players: usize,
    pub solver_dt: f64,
    pub pairs: PairStats,
    /// Same estimate with `dt_sde / 2`, when requested.
    pub sup_half_dt: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleStudy {
    pub rows: Vec<ParticleRow>,
    /// Least-squares slope of `log sup_t E|X - Y|^2` against `log N`.
    pub slope: f64,
    pub seed: u64,
}

/// Trajectory gap between Nash (`Y`) and projected (`X`) feedback for each
/// player count. All counts share the time step of the largest one.
#[allow(clippy::too_many_arguments)]
pub fn particle_study(
    grid: &DomainGrid,
    model: &ModelSpec,
    n_list: &[usize],
    m0: &MeasureField,
    n_paths: usize,
    dt_sde: f64,
    seed: u64,
    halve_dt: bool,
    base: &SolverConfig,
) -> Result<ParticleStudy> {
    let nmax = *n_list.iter().max().ok_or_else(|| Error::Usage("empty player list".into()))?;
    let mut cfg = base.clone();
    cfg.dt = cfg.dt.min(nash_time_step(grid, model, nmax));
    let mut rows = Vec::new();
    for &np in n_list {
        let nash = solve_nash(grid, model, np, &cfg)?;
        let levels: Vec<usize> = (0..nash.nt).collect();
        let proj = project_master(grid, model, np, &levels, &cfg)?;
        let fy = TensorFeedback::from_nash(&nash);
        let fx = TensorFeedback::from_projection(&proj, &nash)?;
        let pairs = simulate_pair(grid, model, &fy, &fx, m0, n_paths, dt_sde, seed)?;
        let sup_half_dt = if halve_dt {
            let h = simulate_pair(grid, model, &fy, &fx, m0, n_paths, 0.5 * dt_sde, seed)?;
            Some((h.sup, h.sup_se))
        } else {
            None
        };
        rows.push(ParticleRow { players: np, solver_dt: cfg.dt, pairs, sup_half_dt });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.players as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.pairs.sup).collect();
    let slope = if rows.len() >= 2 && gaps.iter().all(|&g| g > 0.0) { loglog_slope(&ns, &gaps) } else { f64::NAN };
    Ok(ParticleStudy { rows, slope, seed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViabilityReport {
    pub min_dist: f64,
    pub exit_attempts: u64,
    pub steps: u64,
    pub activation_rate: f64,
    pub fraction_clamped: f64,
}

pub fn viability_report(ensemble: &ParticleEnsemble, grid: &DomainGrid) -> ViabilityReport {
    let c = ensemble.counters;
    let min_path = ensemble.min_dist_t.iter().cloned().fold(f64::INFINITY, f64::min);
    let steps = c.steps.max(1) as f64;
    ViabilityReport {
        min_dist: c.min_dist.min(min_path).min(grid.diameter()),
        exit_attempts: c.exit_attempts,
        steps: c.steps,
        activation_rate: c.exit_attempts as f64 / steps,
        fraction_clamped: c.clamped as f64 / steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_interval_domain;
    use crate::measures::gaussian_bump;

    #[test]
    fn identical_feedback_gives_zero_gap() {
        let g = build_interval_domain(1.0, 32).unwrap();
        let m = ModelSpec::shipped_1d();
        let fb = ZeroFeedback { players: 3, horizon: m.horizon };
        let m0 = gaussian_bump(&g, [0.5, 0.0], 0.1, 0.2);
        let s = simulate_pair(&g, &m, &fb, &fb, &m0, 50, 0.01, 3).unwrap();
        assert_eq!(s.sup, 0.0);
    }

    #[test]
    fn simulation_is_reproducible() {
        let g = build_interval_domain(1.0, 32).unwrap();
        let m = ModelSpec::uniform_1d();
        let fb = ZeroFeedback { players: 2, horizon: m.horizon };
        let m0 = gaussian_bump(&g, [0.5, 0.0], 0.1, 0.2);
        let a = simulate(&g, &m, &fb, &m0, 20, 0.01, 11, true).unwrap();
        let b = simulate(&g, &m, &fb, &m0, 20, 0.01, 11, true).unwrap();
        assert_eq!(a.paths, b.paths);
        let c = simulate(&g, &m, &fb, &m0, 30, 0.01, 11, true).unwrap();
        assert_eq!(a.paths.as_ref().unwrap()[..], c.paths.as_ref().unwrap()[..20]);
    }

    #[test]
    fn deterministic_inward_flow_never_triggers_the_safeguard() {
        let g = build_interval_domain(1.0, 32).unwrap();
        let mut m = ModelSpec::shipped_1d();
        m.diffusion = crate::model::Diffusion::Constant { nu: 0.0 };
        let fb = ZeroFeedback { players: 2, horizon: m.horizon };
        let m0 = gaussian_bump(&g, [0.5, 0.0], 0.1, 0.2);
        let e = simulate(&g, &m, &fb, &m0, 20, 0.01, 5, false).unwrap();
        assert_eq!(e.counters.exit_attempts, 0);
    }
}
