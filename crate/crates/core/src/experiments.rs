//! Experiment configuration, orchestration and persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{check_invariance_condition, DomainGrid, GridDescriptor, Point, Shape};
use crate::linearized::{compute_k, loglog_slope, master_equation_residual, residual_rms, solve_linearized, LinearizedData};
use crate::measures::{gaussian_bump, MeasureField};
use crate::mfg::{solve_mfg, MfgSolution, SolverConfig};
use crate::model::{validate_model, ModelSpec};
use crate::nash::convergence_study;
use crate::particles::{particle_study, simulate, viability_report, MfgFeedback};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SolveMfg,
    EvalMaster,
    Residual,
    Linearized,
    NashStudy,
    ParticleStudy,
    CheckHypotheses,
}

impl ExperimentKind {
    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::SolveMfg => "solve-mfg",
            ExperimentKind::EvalMaster => "eval-master",
            ExperimentKind::Residual => "residual",
            ExperimentKind::Linearized => "linearized",
            ExperimentKind::NashStudy => "nash-study",
            ExperimentKind::ParticleStudy => "particle-study",
            ExperimentKind::CheckHypotheses => "check-hypotheses",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Interval,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: ShapeKind,
    /// Interval length or disk radius.
    pub size: f64,
    /// Nodes (interval) or nodes per axis (disk).
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_levels: Option<Vec<f64>>,
}

impl DomainConfig {
    pub fn build(&self) -> Result<DomainGrid> {
        let shape = match self.shape {
            ShapeKind::Interval => Shape::Interval { length: self.size },
            ShapeKind::Disk => Shape::Disk { radius: self.size },
        };
        DomainGrid::from_descriptor(&GridDescriptor {
            dim: if self.shape == ShapeKind::Interval { 1 } else { 2 },
            shape,
            n: self.nodes,
            eps_levels: self.eps_levels.clone().unwrap_or_default(),
        })
    }
}

/// A shipped model by id, or a full inline specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<ModelSpec> {
        let m = match (&self.id, &self.spec) {
            (Some(id), None) => ModelSpec::by_name(id)?,
            (None, Some(spec)) => spec.clone(),
            _ => return Err(Error::Config("model needs exactly one of `id` or `spec`".into())),
        };
        m.validate_params()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    /// Defaults to the domain centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    pub width: f64,
    pub cut: f64,
}

impl Default for BumpConfig {
    fn default() -> Self {
        BumpConfig { center: None, width: 0.12, cut: 0.2 }
    }
}

impl BumpConfig {
    pub fn build(&self, grid: &DomainGrid) -> MeasureField {
        let c = self.center.unwrap_or(match grid.shape {
            Shape::Interval { length } => [0.5 * length, 0.0],
            Shape::Disk { .. } => [0.0, 0.0],
        });
        gaussian_bump(grid, c, self.width, self.cut)
    }
}

fn d_players() -> Vec<usize> {
    vec![2, 3, 4]
}
fn d_samples() -> usize {
    2000
}
fn d_paths() -> usize {
    10_000
}
fn d_dt_sde() -> f64 {
    1e-3
}
fn d_s_values() -> Vec<f64> {
    vec![0.04, 0.02, 0.01]
}
fn d_margin() -> f64 {
    2.0
}
fn d_p_max() -> f64 {
    4.0
}

/// Parameters shared by the experiment kinds; each kind reads what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub initial: BumpConfig,
    /// Perturbed measure for linearization experiments; `m0 - m1` is the
    /// direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed: Option<BumpConfig>,
    /// Evaluation points along the first axis (second coordinate zero).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x_points: Vec<f64>,
    #[serde(default = "d_players")]
    pub players: Vec<usize>,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_paths")]
    pub paths: usize,
    #[serde(default = "d_dt_sde")]
    pub dt_sde: f64,
    #[serde(default)]
    pub halve_dt: bool,
    /// Paths of the single-population viability ensemble (0 skips it).
    #[serde(default)]
    pub viability_paths: usize,
    #[serde(default = "d_s_values")]
    pub s_values: Vec<f64>,
    #[serde(default = "d_margin")]
    pub invariance_margin: f64,
    /// Gradient samples for the invariance check span `[-p_max, p_max]`.
    #[serde(default = "d_p_max")]
    pub p_max: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty study table uses defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub domain: DomainConfig,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(toml::from_str(text)?)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Full validation without touching the file system.
    pub fn validate(&self) -> Result<(DomainGrid, ModelSpec)> {
        let grid = self.domain.build()?;
        let model = self.model.resolve()?;
        self.solver.validate(&grid, &model)?;
        let s = &self.study;
        if !(s.t0 >= 0.0 && s.t0 < model.horizon) {
            return Err(Error::Config(format!("t0 must lie in [0, {})", model.horizon)));
        }
        if !(s.initial.width > 0.0) {
            return Err(Error::Config("initial width must be positive".into()));
        }
        if !(s.dt_sde > 0.0) || s.paths < 2 {
            return Err(Error::Config("dt_sde must be positive and paths at least 2".into()));
        }
        if s.players.is_empty() || s.players.iter().any(|&n| !(2..=4).contains(&n)) {
            return Err(Error::Config("players must be a nonempty list drawn from 2..=4".into()));
        }
        if s.s_values.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Config("s_values must lie in (0, 1]".into()));
        }
        let needs_1d = matches!(self.kind, ExperimentKind::NashStudy | ExperimentKind::ParticleStudy);
        if needs_1d && grid.dim != 1 {
            return Err(Error::Config(format!("{} runs on the interval only", self.kind.id())));
        }
        Ok((grid, model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub model_hash: String,
    pub eps_levels: Vec<f64>,
    pub version: String,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub summary: BTreeMap<String, f64>,
    /// Outcome of check-style experiments.
    pub checks_passed: Option<bool>,
    pub files: Vec<FileEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes into a fresh output directory and records checksums.
struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(FileEntry { path: name.to_string(), sha256: hex(&Sha256::digest(contents)), bytes: contents.len() as u64 });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SolutionMeta {
    grid: GridDescriptor,
    model: ModelSpec,
    model_hash: String,
    t0: f64,
    dt: f64,
    nt: usize,
    eps: f64,
    eps_levels: Vec<f64>,
    picard_iters: usize,
    residuals: Vec<f64>,
    terminal_correction: f64,
}

fn coord_header(grid: &DomainGrid) -> &'static str {
    if grid.dim == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn coords(grid: &DomainGrid, k: usize) -> String {
    let x = grid.nodes[k];
    if grid.dim == 1 {
        format!("{}", x[0])
    } else {
        format!("{},{}", x[0], x[1])
    }
}

/// `u.csv` and `m.csv` contents: one row per (time level, active node).
pub fn solution_csv(grid: &DomainGrid, sol: &MfgSolution) -> (String, String) {
    let mut u = format!("t,{},value\n", coord_header(grid));
    let mut m = format!("t,{},density\n", coord_header(grid));
    for n in 0..=sol.nt {
        let t = sol.time(n);
        for (i, &k) in sol.nodes.iter().enumerate() {
            let c = coords(grid, k);
            let _ = writeln!(u, "{t},{c},{}", sol.u[n][i]);
            let _ = writeln!(m, "{t},{c},{}", sol.rho[n][i] / grid.quad_weights[k]);
        }
    }
    (u, m)
}

/// Persists a solution as `meta.json`, `u.csv`, `m.csv` under `dir`.
pub fn save_solution(dir: &Path, grid: &DomainGrid, model: &ModelSpec, sol: &MfgSolution) -> Result<Vec<FileEntry>> {
    let mut out = Output::new(dir)?;
    write_solution(&mut out, grid, model, sol)?;
    Ok(out.files)
}

fn write_solution(out: &mut Output, grid: &DomainGrid, model: &ModelSpec, sol: &MfgSolution) -> Result<()> {
    let meta = SolutionMeta {
        grid: grid.descriptor(),
        model: model.clone(),
        model_hash: model.hash(),
        t0: sol.t0,
        dt: sol.dt,
        nt: sol.nt,
        eps: sol.eps,
        eps_levels: sol.eps_used.clone(),
        picard_iters: sol.picard_iters,
        residuals: sol.residuals.clone(),
        terminal_correction: sol.terminal_correction,
    };
    out.json("meta.json", &meta)?;
    let (u, m) = solution_csv(grid, sol);
    out.write("u.csv", u.as_bytes())?;
    out.write("m.csv", m.as_bytes())
}

fn eval_points(grid: &DomainGrid, s: &StudyConfig) -> Vec<Point> {
    if !s.x_points.is_empty() {
        return s.x_points.iter().map(|&x| [x, 0.0]).collect();
    }
    match grid.shape {
        Shape::Interval { length } => (1..=8).map(|k| [length * (0.25 + 0.5 * k as f64 / 9.0), 0.0]).collect(),
        Shape::Disk { radius } => (0..8)
            .map(|k| {
                let th = std::f64::consts::PI * k as f64 / 4.0;
                [0.4 * radius * th.cos(), 0.4 * radius * th.sin()]
            })
            .collect(),
    }
}

fn slope_or_nan(x: &[f64], y: &[f64]) -> f64 {
    if x.len() >= 2 && y.iter().all(|&v| v > 0.0) {
        loglog_slope(x, y)
    } else {
        f64::NAN
    }
}

/// Runs one experiment into `out_dir`. The directory is created only after
/// the configuration validates; the manifest is written last.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let (grid, model) = config.validate()?;
    let start = Instant::now();
    let mut out = Output::new(out_dir)?;
    let s = &config.study;
    let cfg = &config.solver;
    let mut summary = BTreeMap::new();
    let mut tolerances = BTreeMap::new();
    tolerances.insert("picard_tol".to_string(), cfg.picard_tol);
    tolerances.insert("linear_tol".to_string(), cfg.linear_tol);
    let mut checks_passed = None;
    let m0 = s.initial.build(&grid);
    out.write("config.toml", config.to_toml()?.as_bytes())?;

    match config.kind {
        ExperimentKind::SolveMfg => {
            let sol = solve_mfg(&grid, &model, s.t0, &m0, cfg)?;
            write_solution(&mut out, &grid, &model, &sol)?;
            let mut picard = String::from("iteration,residual\n");
            for (k, r) in sol.residuals.iter().enumerate() {
                let _ = writeln!(picard, "{},{r}", k + 1);
            }
            out.write("picard.csv", picard.as_bytes())?;
            let diffs = sol.cascade_differences();
            let mut cascade = String::from("eps,sup_diff\n");
            for (e, d) in &diffs {
                let _ = writeln!(cascade, "{e},{d}");
            }
            out.write("cascade.csv", cascade.as_bytes())?;
            let mass_defect = (0..=sol.nt).map(|n| (sol.mass(n) - sol.m0_mass).abs()).fold(0.0, f64::max);
            summary.insert("picard_iters".into(), sol.picard_iters as f64);
            summary.insert("mass_defect".into(), mass_defect);
            summary.insert("cascade_monotone".into(), f64::from(u8::from(diffs.windows(2).all(|w| w[1].1 <= w[0].1))));
            summary.insert("residuals_monotone".into(), f64::from(u8::from(sol.residuals_monotone)));
        }
        ExperimentKind::EvalMaster => {
            let sol = solve_mfg(&grid, &model, s.t0, &m0, cfg)?;
            let active = sol.active();
            let u0 = sol.u_full(0);
            let mut csv = format!("{},value\n", coord_header(&grid));
            for x in eval_points(&grid, s) {
                let v = grid.interpolate(&u0, &active, &x);
                if grid.dim == 1 {
                    let _ = writeln!(csv, "{},{v}", x[0]);
                } else {
                    let _ = writeln!(csv, "{},{},{v}", x[0], x[1]);
                }
            }
            out.write("master.csv", csv.as_bytes())?;
            summary.insert("picard_iters".into(), sol.picard_iters as f64);
        }
        ExperimentKind::Residual => {
            let terms = master_equation_residual(&grid, &model, s.t0, &eval_points(&grid, s), &m0, cfg)?;
            let mut csv = String::from("x,y,dt_u,trace,hamiltonian,measure_trace,measure_drift,coupling,residual\n");
            for t in &terms {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{}",
                    t.x[0], t.x[1], t.dt_u, t.trace, t.hamiltonian, t.measure_trace, t.measure_drift, t.coupling, t.residual
                );
            }
            out.write("residual.csv", csv.as_bytes())?;
            summary.insert("residual_rms".into(), residual_rms(&terms));
        }
        ExperimentKind::Linearized => {
            let base = solve_mfg(&grid, &model, s.t0, &m0, cfg)?;
            let m1 = s
                .perturbed
                .clone()
                .unwrap_or(BumpConfig {
                    center: Some(match grid.shape {
                        Shape::Interval { length } => [0.4 * length, 0.0],
                        Shape::Disk { radius } => [0.2 * radius, 0.0],
                    }),
                    ..s.initial.clone()
                })
                .build(&grid);
            let mu: Vec<f64> = m1.masses(&grid).iter().zip(m0.masses(&grid)).map(|(a, b)| a - b).collect();
            let mu0 = MeasureField::signed_from_masses(&grid, &mu)?;
            let lin = solve_linearized(&grid, &model, &base, &mu0, &LinearizedData::default(), cfg)?;
            let mut csv = format!("t,{},v,mu\n", coord_header(&grid));
            for n in 0..lin.v.len() {
                let t = lin.t0 + n as f64 * lin.dt;
                for (i, &k) in lin.nodes.iter().enumerate() {
                    let _ = writeln!(csv, "{t},{},{},{}", coords(&grid, k), lin.v[n][i], lin.mu[n][i]);
                }
            }
            out.write("linearized.csv", csv.as_bytes())?;
            summary.insert("gmres_matvecs".into(), lin.matvecs as f64);
            summary.insert("gmres_relative_residual".into(), lin.relative_residual);
            tolerances.insert("representation_rel".into(), 1e-5);
            // Representation through the kernel on the direction's support.
            let y_nodes: Vec<usize> = (0..grid.len()).filter(|&k| mu[k] != 0.0).collect();
            if grid.dim == 1 {
                let kd = compute_k(&grid, &model, &base, s.t0, &y_nodes, cfg)?;
                let paired = kd.pair(&mu);
                let v0 = lin.v_full(0);
                let mut num: f64 = 0.0;
                let mut den: f64 = 0.0;
                for (i, &x) in kd.x_nodes.iter().enumerate() {
                    num = num.max((paired[i] - v0[x]).abs());
                    den = den.max(v0[x].abs());
                }
                summary.insert("representation_rel_error".into(), num / den.max(1e-300));
            }
        }
        ExperimentKind::NashStudy => {
            let tab = convergence_study(&grid, &model, &s.players, &m0, s.samples, config.seed, cfg)?;
            let mut csv = String::from(
                "players,grid_per_axis,dt,sup_gap,sup_gap_weighted,w_gap,w_gap_exact,remainder_sup,exchangeability_defect,projection_solves\n",
            );
            for r in &tab.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.players,
                    r.grid_per_axis,
                    r.dt,
                    r.sup_gap,
                    r.sup_gap_weighted,
                    r.w_gap,
                    r.w_gap_exact,
                    r.remainder_sup,
                    r.exchangeability_defect,
                    r.projection_solves
                );
            }
            out.write("nash_study.csv", csv.as_bytes())?;
            summary.insert("sup_slope".into(), tab.sup_slope);
            summary.insert("w_slope".into(), tab.w_slope);
            summary.insert("remainder_slope".into(), tab.remainder_slope);
        }
        ExperimentKind::ParticleStudy => {
            let st = particle_study(&grid, &model, &s.players, &m0, s.paths, s.dt_sde, config.seed, s.halve_dt, cfg)?;
            let mut csv = String::from(
                "players,paths,dt_sde,solver_dt,sup_msd,se,lo_2se,hi_2se,sup_msd_half_dt,se_half_dt,exit_attempts_x,exit_attempts_y\n",
            );
            for r in &st.rows {
                let p = &r.pairs;
                let (hs, hse) = r.sup_half_dt.unwrap_or((f64::NAN, f64::NAN));
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.players,
                    p.n_paths,
                    p.dt_sde,
                    r.solver_dt,
                    p.sup,
                    p.sup_se,
                    p.sup - 2.0 * p.sup_se,
                    p.sup + 2.0 * p.sup_se,
                    hs,
                    hse,
                    p.counters_x.exit_attempts,
                    p.counters_y.exit_attempts
                );
            }
            out.write("particle_study.csv", csv.as_bytes())?;
            summary.insert("slope".into(), st.slope);
            if s.viability_paths > 0 {
                let sol = solve_mfg(&grid, &model, 0.0, &m0, cfg)?;
                let fb = MfgFeedback::new(&grid, &sol, 1)?;
                let ens = simulate(&grid, &model, &fb, &m0, s.viability_paths, s.dt_sde, config.seed, false)?;
                let rep = viability_report(&ens, &grid);
                summary.insert("activation_rate".into(), rep.activation_rate);
                out.json("viability.json", &rep)?;
            }
        }
        ExperimentKind::CheckHypotheses => {
            let k = 8;
            let p_samples: Vec<Point> = if grid.dim == 1 {
                (0..=2 * k).map(|i| [s.p_max * (i as f64 / k as f64 - 1.0), 0.0]).collect()
            } else {
                (0..=2 * k)
                    .flat_map(|i| (0..=2 * k).map(move |j| (i, j)))
                    .map(|(i, j)| [s.p_max * (i as f64 / k as f64 - 1.0), s.p_max * (j as f64 / k as f64 - 1.0)])
                    .collect()
            };
            let inv = check_invariance_condition(&grid, &model, &p_samples, s.invariance_margin);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
                .map(|_| {
                    let mut draw = || {
                        let v: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
                        let t: f64 = v.iter().sum();
                        v.into_iter().map(|x| x / t).collect::<Vec<f64>>()
                    };
                    (draw(), draw())
                })
                .collect();
            let rep = validate_model(&grid, &model, &samples)?;
            #[derive(Serialize)]
            struct Hypotheses<'a> {
                invariance: &'a crate::geometry::InvarianceReport,
                model: &'a crate::model::ModelReport,
            }
            out.json("hypotheses.json", &Hypotheses { invariance: &inv, model: &rep })?;
            summary.insert("invariance_worst_slack".into(), inv.worst_slack);
            summary.insert("monotonicity_running".into(), rep.monotonicity_running);
            summary.insert("monotonicity_terminal".into(), rep.monotonicity_terminal);
            checks_passed = Some(inv.holds && rep.ok);
        }
    }

    let manifest = RunManifest {
        kind: config.kind,
        config_hash: config.hash(),
        model_hash: model.hash(),
        eps_levels: grid.eps_levels.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        wall_clock_s: start.elapsed().as_secs_f64(),
        tolerances,
        summary,
        checks_passed,
        files: out.files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Usage(format!("no manifest in {}", dir.display())));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Recomputes every listed checksum.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    for f in &manifest.files {
        let bytes = fs::read(dir.join(&f.path))?;
        if hex(&Sha256::digest(&bytes)) != f.sha256 {
            return Err(Error::Numerical(format!("checksum mismatch for {}", f.path)));
        }
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> =
        lines.next().ok_or_else(|| Error::Usage(format!("{} is empty", path.display())))?.split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| Error::Serde(format!("{}: {e}", path.display())))).collect())
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::Serde(format!("missing column {name}")))
}

/// Writes gnuplot-compatible series for a finished study into `dir` and
/// returns the produced paths. `which` is `nash-study` or `particle-study`.
pub fn emit_plot_data(dir: &Path, manifest: &RunManifest, which: &str) -> Result<Vec<PathBuf>> {
    let (csv, gap_col) = match which {
        "nash-study" => ("nash_study.csv", "sup_gap"),
        "particle-study" => ("particle_study.csv", "sup_msd"),
        other => return Err(Error::Usage(format!("no plot data for study '{other}'"))),
    };
    if !manifest.files.iter().any(|f| f.path == csv) {
        return Err(Error::Usage(format!("manifest lists no {which} output")));
    }
    let (header, rows) = read_csv(&dir.join(csv))?;
    if rows.is_empty() {
        return Err(Error::Usage(format!("{csv} has no rows")));
    }
    let pc = column(&header, "players")?;
    let gc = column(&header, gap_col)?;
    let ns: Vec<f64> = rows.iter().map(|r| r[pc]).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r[gc]).collect();
    let slope = slope_or_nan(&ns, &gaps);
    let lx: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = gaps.iter().map(|v| v.ln()).collect();
    let intercept = ly.iter().sum::<f64>() / ly.len() as f64 - slope * lx.iter().sum::<f64>() / lx.len() as f64;
    let mut text = format!("# {which}: log N vs log {gap_col}\n# slope = {slope}\n# intercept = {intercept}\n");
    if which == "nash-study" {
        text.push_str("# log_n log_gap fit\n");
        for (x, y) in lx.iter().zip(&ly) {
            let _ = writeln!(text, "{x} {y} {}", intercept + slope * x);
        }
    } else {
        let sc = column(&header, "se")?;
        text.push_str("# n gap lo_2se hi_2se log_n log_gap fit\n");
        for (r, (x, y)) in rows.iter().zip(lx.iter().zip(&ly)) {
            let _ = writeln!(text, "{} {} {} {} {x} {y} {}", r[pc], r[gc], r[gc] - 2.0 * r[sc], r[gc] + 2.0 * r[sc], intercept + slope * x);
        }
    }
    let path = dir.join(format!("plot_{}.dat", which.replace('-', "_")));
    fs::write(&path, text)?;
    Ok(vec![path])
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
kind = "solve-mfg"
seed = 3

[domain]
shape = "interval"
size = 1.0
nodes = 32

[model]
id = "decoupled-1d"

[solver]
dt = 0.05
"#;

    #[test]
    fn config_round_trips() {
        let c = ExperimentConfig::parse(BASIC).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), c);
        assert_eq!(c.study, StudyConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{BASIC}\nextra = 1\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = BASIC.replace("dt = 0.05", "dt = 0.05\nfoo = 2");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn inline_model_spec_round_trips() {
        let mut c = ExperimentConfig::parse(BASIC).unwrap();
        c.model = ModelConfig { id: None, spec: Some(ModelSpec::shipped_1d()) };
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
