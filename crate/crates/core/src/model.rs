//! Problem data: diffusion, Hamiltonian and the running/terminal couplings
//! with their flat derivatives.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{smoothstep, DomainGrid, Point, Shape};

/// Saturating profile `kappa * tanh(d / kappa)`, with derivative.
fn saturate(d: f64, kappa: f64) -> (f64, f64) {
    let t = (d.max(0.0) / kappa).tanh();
    (kappa * t, 1.0 - t * t)
}

/// Isotropic diffusion `a(x) = value(x) I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Diffusion {
    Constant {
        nu: f64,
    },
    /// `a = nu0 * s(d)^2` with `s(d) = kappa * tanh(d / kappa)`: vanishes
    /// quadratically at the boundary.
    Degenerate {
        nu0: f64,
        kappa: f64,
    },
}

impl Diffusion {
    pub fn scalar(&self, grid: &DomainGrid, x: &Point) -> f64 {
        match *self {
            Diffusion::Constant { nu } => nu,
            Diffusion::Degenerate { nu0, kappa } => {
                let (s, _) = saturate(grid.dist_at(x), kappa);
                nu0 * s * s
            }
        }
    }

    /// Diagonal of `a`; unused axes are zero.
    pub fn a(&self, grid: &DomainGrid, x: &Point) -> Point {
        let v = self.scalar(grid, x);
        if grid.dim == 1 {
            [v, 0.0]
        } else {
            [v, v]
        }
    }

    pub fn sigma(&self, grid: &DomainGrid, x: &Point) -> Point {
        let a = self.a(grid, x);
        [a[0].sqrt(), a[1].sqrt()]
    }

    /// Row divergence of `a`.
    pub fn b_tilde(&self, grid: &DomainGrid, x: &Point) -> Point {
        match *self {
            Diffusion::Constant { .. } => [0.0, 0.0],
            Diffusion::Degenerate { nu0, kappa } => {
                let (s, ds) = saturate(grid.dist_at(x), kappa);
                let (grad, _) = grid.dist_derivatives(x);
                let c = 2.0 * nu0 * s * ds;
                let mut b = [c * grad[0], c * grad[1]];
                if grid.dim == 1 {
                    b[1] = 0.0;
                }
                b
            }
        }
    }

    pub fn is_uniformly_elliptic(&self) -> bool {
        matches!(self, Diffusion::Constant { .. })
    }
}

/// Spatial weight multiplying the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Weight {
    Unit,
    /// `kappa * tanh(d / kappa)`, vanishing at the boundary.
    Saturated {
        kappa: f64,
    },
}

impl Weight {
    pub fn eval(&self, grid: &DomainGrid, x: &Point) -> f64 {
        match *self {
            Weight::Unit => 1.0,
            Weight::Saturated { kappa } => saturate(grid.dist_at(x), kappa).0,
        }
    }
}

/// Convex Hamiltonians with bounded gradient in `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hamiltonian {
    Zero,
    /// `scale * w(x) * (sqrt(1 + |p|^2) - 1)`.
    Relativistic {
        scale: f64,
        weight: Weight,
    },
}

impl Hamiltonian {
    pub fn h(&self, grid: &DomainGrid, x: &Point, p: &Point) -> f64 {
        match *self {
            Hamiltonian::Zero => 0.0,
            Hamiltonian::Relativistic { scale, weight } => {
                let q = p[0] * p[0] + p[1] * p[1];
                // sqrt(1+q) - 1 written to avoid cancellation for small q.
                scale * weight.eval(grid, x) * q / ((1.0 + q).sqrt() + 1.0)
            }
        }
    }

    pub fn hp(&self, grid: &DomainGrid, x: &Point, p: &Point) -> Point {
        match *self {
            Hamiltonian::Zero => [0.0, 0.0],
            Hamiltonian::Relativistic { scale, weight } => {
                let c = scale * weight.eval(grid, x) / (1.0 + p[0] * p[0] + p[1] * p[1]).sqrt();
                [c * p[0], c * p[1]]
            }
        }
    }

    pub fn hpp(&self, grid: &DomainGrid, x: &Point, p: &Point) -> [[f64; 2]; 2] {
        match *self {
            Hamiltonian::Zero => [[0.0; 2]; 2],
            Hamiltonian::Relativistic { scale, weight } => {
                let r2 = 1.0 + p[0] * p[0] + p[1] * p[1];
                let c = scale * weight.eval(grid, x) / (r2 * r2.sqrt());
                [[c * (r2 - p[0] * p[0]), -c * p[0] * p[1]], [-c * p[1] * p[0], c * (r2 - p[1] * p[1])]]
            }
        }
    }

    /// Bound on `|H_p(x, .)|` per axis, uniform in `p`.
    pub fn hp_bound(&self, grid: &DomainGrid, x: &Point) -> f64 {
        match *self {
            Hamiltonian::Zero => 0.0,
            Hamiltonian::Relativistic { scale, weight } => scale.abs() * weight.eval(grid, x),
        }
    }
}

/// Response `psi` applied to the projections `<phi_k, m>`; increasing, so
/// the coupling is monotone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Response {
    Linear,
    /// `psi(s) = s + c s^3` with `c >= 0`.
    Cubic {
        c: f64,
    },
}

impl Response {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Response::Linear => s,
            Response::Cubic { c } => s + c * s * s * s,
        }
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match *self {
            Response::Linear => 1.0,
            Response::Cubic { c } => 1.0 + 3.0 * c * s * s,
        }
    }
}

/// One basis function `chi(d(x)) * cos(k pi (x_axis - lo) / extent)`, where
/// `chi` vanishes on the collar `{d <= eps0 / 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub lambda: f64,
    pub axis: usize,
    pub k: u32,
}

/// `F(x, m) = amp * phi_pot(x) + sum_k lambda_k phi_k(x) psi(<phi_k, m>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    #[serde(default)]
    pub potential: Option<Mode>,
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default = "linear")]
    pub response: Response,
}

fn linear() -> Response {
    Response::Linear
}

impl Coupling {
    pub fn zero() -> Self {
        Coupling { potential: None, modes: Vec::new(), response: Response::Linear }
    }

    pub fn depends_on_measure(&self) -> bool {
        self.modes.iter().any(|m| m.lambda != 0.0)
    }
}

/// Cut-off vanishing on `{d <= eps0/3}` and equal to one on `{d >= eps0}`.
pub fn collar_cutoff(grid: &DomainGrid, d: f64) -> f64 {
    let lo = grid.collar.eps0 / 3.0;
    let hi = grid.collar.eps0;
    smoothstep((d - lo) / (hi - lo))
}

pub fn basis_value(grid: &DomainGrid, mode: &Mode, x: &Point) -> f64 {
    let (lo, extent) = match grid.shape {
        Shape::Interval { length } => (0.0, length),
        Shape::Disk { radius } => (-radius, 2.0 * radius),
    };
    let chi = collar_cutoff(grid, grid.dist_at(x));
    chi * (mode.k as f64 * std::f64::consts::PI * (x[mode.axis] - lo) / extent).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub horizon: f64,
    pub diffusion: Diffusion,
    pub hamiltonian: Hamiltonian,
    pub running: Coupling,
    pub terminal: Coupling,
    pub alpha: f64,
}

/// Coupling tabulated on grid nodes.
#[derive(Debug, Clone)]
pub struct CouplingTable {
    pub potential: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `phi[k][node]`.
    pub phi: Vec<Vec<f64>>,
    pub response: Response,
}

impl CouplingTable {
    pub fn new(grid: &DomainGrid, c: &Coupling) -> Self {
        let potential = match &c.potential {
            Some(m) => grid.nodes.iter().map(|x| m.lambda * basis_value(grid, m, x)).collect(),
            None => vec![0.0; grid.len()],
        };
        CouplingTable {
            potential,
            lambda: c.modes.iter().map(|m| m.lambda).collect(),
            phi: c.modes.iter().map(|m| grid.nodes.iter().map(|x| basis_value(grid, m, x)).collect()).collect(),
            response: c.response,
        }
    }

    /// Projections `<phi_k, rho>` of a mass vector.
    pub fn project(&self, rho: &[f64]) -> Vec<f64> {
        self.phi.iter().map(|p| p.iter().zip(rho).map(|(a, b)| a * b).sum()).collect()
    }

    /// `F(x_i, m)` for every node, `rho` the node masses of `m`.
    pub fn eval(&self, rho: &[f64]) -> Vec<f64> {
        let s = self.project(rho);
        let mut out = self.potential.clone();
        for (k, p) in self.phi.iter().enumerate() {
            let c = self.lambda[k] * self.response.eval(s[k]);
            for (o, v) in out.iter_mut().zip(p) {
                *o += c * v;
            }
        }
        out
    }

    /// Flat derivative applied to a signed mass vector `mu` at base `rho`.
    pub fn derivative(&self, rho: &[f64], mu: &[f64]) -> Vec<f64> {
        let s = self.project(rho);
        let t = self.project(mu);
        let mut out = vec![0.0; self.potential.len()];
        for (k, p) in self.phi.iter().enumerate() {
            let c = self.lambda[k] * self.response.deriv(s[k]) * t[k];
            for (o, v) in out.iter_mut().zip(p) {
                *o += c * v;
            }
        }
        out
    }

    /// Kernel `dF/dm(x_i, m, y_j)`.
    pub fn kernel(&self, rho: &[f64], i: usize, j: usize) -> f64 {
        let s = self.project(rho);
        (0..self.phi.len()).map(|k| self.lambda[k] * self.response.deriv(s[k]) * self.phi[k][i] * self.phi[k][j]).sum()
    }

    pub fn is_constant_in_measure(&self) -> bool {
        self.lambda.iter().all(|&l| l == 0.0)
    }
}

impl ModelSpec {
    /// Invariant 1D model: diffusion and Hamiltonian weight degenerate at
    /// the boundary, monotone couplings flat on the collar.
    pub fn shipped_1d() -> Self {
        ModelSpec {
            name: "invariant-1d".into(),
            horizon: 0.5,
            diffusion: Diffusion::Degenerate { nu0: 0.5, kappa: 0.25 },
            hamiltonian: Hamiltonian::Relativistic { scale: 1.0, weight: Weight::Saturated { kappa: 0.25 } },
            running: Coupling {
                potential: None,
                modes: vec![Mode { lambda: 0.4, axis: 0, k: 1 }, Mode { lambda: 0.2, axis: 0, k: 2 }],
                response: Response::Linear,
            },
            terminal: Coupling {
                potential: Some(Mode { lambda: 0.3, axis: 0, k: 1 }),
                modes: vec![Mode { lambda: 0.3, axis: 0, k: 1 }],
                response: Response::Cubic { c: 1.0 },
            },
            alpha: 0.5,
        }
    }

    /// Same dynamics with measure-independent costs.
    pub fn decoupled_1d() -> Self {
        let mut m = Self::shipped_1d();
        m.name = "decoupled-1d".into();
        m.running = Coupling { potential: Some(Mode { lambda: 0.2, axis: 0, k: 2 }), modes: Vec::new(), response: Response::Linear };
        m.terminal = Coupling { potential: Some(Mode { lambda: 0.3, axis: 0, k: 1 }), modes: Vec::new(), response: Response::Linear };
        m
    }

    /// Uniformly elliptic counterpart of the shipped model; violates the
    /// invariance condition near the boundary.
    pub fn uniform_1d() -> Self {
        let mut m = Self::shipped_1d();
        m.name = "uniform-1d".into();
        m.diffusion = Diffusion::Constant { nu: 0.03 };
        m.hamiltonian = Hamiltonian::Relativistic { scale: 0.25, weight: Weight::Unit };
        m
    }

    /// Pure reflected heat flow.
    pub fn heat(nu: f64, horizon: f64) -> Self {
        ModelSpec {
            name: "heat".into(),
            horizon,
            diffusion: Diffusion::Constant { nu },
            hamiltonian: Hamiltonian::Zero,
            running: Coupling::zero(),
            terminal: Coupling::zero(),
            alpha: 0.5,
        }
    }

    pub fn shipped_2d() -> Self {
        ModelSpec {
            name: "invariant-disk".into(),
            horizon: 0.3,
            diffusion: Diffusion::Degenerate { nu0: 0.5, kappa: 0.25 },
            hamiltonian: Hamiltonian::Relativistic { scale: 1.0, weight: Weight::Saturated { kappa: 0.25 } },
            running: Coupling {
                potential: None,
                modes: vec![Mode { lambda: 0.3, axis: 0, k: 1 }, Mode { lambda: 0.3, axis: 1, k: 1 }],
                response: Response::Linear,
            },
            terminal: Coupling {
                potential: Some(Mode { lambda: 0.3, axis: 0, k: 1 }),
                modes: vec![Mode { lambda: 0.2, axis: 1, k: 1 }],
                response: Response::Linear,
            },
            alpha: 0.5,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "invariant-1d" => Ok(Self::shipped_1d()),
            "decoupled-1d" => Ok(Self::decoupled_1d()),
            "uniform-1d" => Ok(Self::uniform_1d()),
            "invariant-disk" => Ok(Self::shipped_2d()),
            other => Err(Error::Config(format!("unknown model id '{other}'"))),
        }
    }

    pub fn is_decoupled(&self) -> bool {
        !self.running.depends_on_measure() && !self.terminal.depends_on_measure()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `H(x,p) + b_tilde(x).p`.
    pub fn h_tilde(&self, grid: &DomainGrid, x: &Point, p: &Point) -> f64 {
        let b = self.diffusion.b_tilde(grid, x);
        self.hamiltonian.h(grid, x, p) + b[0] * p[0] + b[1] * p[1]
    }

    pub fn validate_params(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("model '{}': {msg}", self.name)));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        match self.diffusion {
            Diffusion::Constant { nu } if !(nu > 0.0) => return bad("nu must be positive"),
            Diffusion::Degenerate { nu0, kappa } if !(nu0 > 0.0 && kappa > 0.0) => return bad("nu0 and kappa must be positive"),
            _ => {}
        }
        if let Hamiltonian::Relativistic { scale, weight } = self.hamiltonian {
            if !(scale >= 0.0) {
                return bad("Hamiltonian scale must be nonnegative for convexity");
            }
            if let Weight::Saturated { kappa } = weight {
                if !(kappa > 0.0) {
                    return bad("weight kappa must be positive");
                }
            }
        }
        for c in [&self.running, &self.terminal] {
            if c.modes.iter().any(|m| !(m.lambda >= 0.0)) {
                return bad("coupling weights must be nonnegative (monotonicity)");
            }
            if let Response::Cubic { c } = c.response {
                if !(c >= 0.0) {
                    return bad("cubic response coefficient must be nonnegative");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub sigma_defect: f64,
    pub b_tilde_defect: f64,
    pub b_tilde_tolerance: f64,
    pub monotonicity_running: f64,
    pub monotonicity_terminal: f64,
    pub boundary_compatibility: f64,
    /// Smallest diffusion on `{d >= delta}` for each probed `delta`.
    pub ellipticity: Vec<(f64, f64)>,
    pub ellipticity_global: f64,
    pub ok: bool,
}

/// Checks the structural hypotheses on the grid. `samples` are pairs of
/// node-mass vectors used for the monotonicity test.
pub fn validate_model(grid: &DomainGrid, model: &ModelSpec, samples: &[(Vec<f64>, Vec<f64>)]) -> Result<ModelReport> {
    model.validate_params()?;
    let mut sigma_defect: f64 = 0.0;
    let mut b_defect: f64 = 0.0;
    let h = grid.h;
    for x in &grid.nodes {
        let a = model.diffusion.a(grid, x);
        let s = model.diffusion.sigma(grid, x);
        for ax in 0..grid.dim {
            sigma_defect = sigma_defect.max((s[ax] * s[ax] - a[ax]).abs());
            let mut xp = *x;
            let mut xm = *x;
            xp[ax] += h;
            xm[ax] -= h;
            if grid.contains(&xp) && grid.contains(&xm) {
                let div = (model.diffusion.scalar(grid, &xp) - model.diffusion.scalar(grid, &xm)) / (2.0 * h);
                let b = model.diffusion.b_tilde(grid, x);
                b_defect = b_defect.max((div - b[ax]).abs());
            }
        }
    }
    let f = CouplingTable::new(grid, &model.running);
    let g = CouplingTable::new(grid, &model.terminal);
    let mono = |t: &CouplingTable| {
        samples
            .iter()
            .map(|(r1, r2)| {
                let (f1, f2) = (t.eval(r1), t.eval(r2));
                (0..r1.len()).map(|i| (f1[i] - f2[i]) * (r1[i] - r2[i])).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (mono_f, mono_g) = if samples.is_empty() { (0.0, 0.0) } else { (mono(&f), mono(&g)) };
    // Co-normal derivative of G on the collar, for each sample measure.
    let mut compat: f64 = 0.0;
    let lo = grid.collar.eps0 / 3.0;
    for (r1, _) in samples.iter().take(4) {
        let gv = g.eval(r1);
        for k in 0..grid.len() {
            if grid.dist[k] >= lo - h {
                continue;
            }
            let a = model.diffusion.a(grid, &grid.nodes[k]);
            for ax in 0..grid.dim {
                if let (Some(m), Some(p)) = (grid.neighbor(k, ax, -1), grid.neighbor(k, ax, 1)) {
                    let d = (gv[p] - gv[m]) / (2.0 * h);
                    compat = compat.max((a[ax] * d * grid.normal[k][ax]).abs());
                }
            }
        }
    }
    let ellipticity: Vec<(f64, f64)> = grid
        .eps_levels
        .iter()
        .map(|&delta| {
            let min = grid
                .nodes
                .iter()
                .zip(&grid.dist)
                .filter(|(_, &d)| d >= delta)
                .map(|(x, _)| model.diffusion.scalar(grid, x))
                .fold(f64::INFINITY, f64::min);
            (delta, min)
        })
        .collect();
    let ellipticity_global = grid.nodes.iter().map(|x| model.diffusion.scalar(grid, x)).fold(f64::INFINITY, f64::min);
    let tol = 10.0 * h * h;
    let ok = sigma_defect <= 1e-12 && b_defect <= tol && mono_f >= -1e-10 && mono_g >= -1e-10 && compat <= h;
    Ok(ModelReport {
        sigma_defect,
        b_tilde_defect: b_defect,
        b_tilde_tolerance: tol,
        monotonicity_running: mono_f,
        monotonicity_terminal: mono_g,
        boundary_compatibility: compat,
        ellipticity,
        ellipticity_global,
        ok,
    })
}
