//! C interface to the viamfg toolkit.
//!
//! Objects are opaque handles created by `viamfg_*_new`-style functions and
//! released by the matching `*_free`. Every fallible call returns a
//! [`ViamfgStatus`]; the message of the last failure on the calling thread is
//! available through [`viamfg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use viamfg::experiments::{run, ExperimentConfig};
use viamfg::mfg::{solve_mfg, MfgSolution, SolverConfig};
use viamfg::{build_disk_domain, build_interval_domain, wasserstein1, DomainGrid, Error, MeasureField, ModelSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViamfgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Convergence = 3,
    Io = 4,
    Numerical = 5,
    Panic = 6,
}

pub struct ViamfgGrid(DomainGrid);
pub struct ViamfgModel(ModelSpec);
pub struct ViamfgSolution(MfgSolution);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> ViamfgStatus {
    match e {
        Error::Convergence { .. } => ViamfgStatus::Convergence,
        Error::Numerical(_) => ViamfgStatus::Numerical,
        Error::Io(_) => ViamfgStatus::Io,
        _ => ViamfgStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), ViamfgStatus>>(f: F) -> ViamfgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ViamfgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            ViamfgStatus::Panic
        }
    }
}

fn fail(e: Error) -> ViamfgStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> ViamfgStatus {
    set_error(format!("null pointer: {what}"));
    ViamfgStatus::NullPointer
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, ViamfgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        ViamfgStatus::InvalidArgument
    })
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], ViamfgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn viamfg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn viamfg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Cell-centred interval `[0, length]` with `n` nodes.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn viamfg_grid_interval(length: f64, n: usize, out: *mut *mut ViamfgGrid) -> ViamfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = build_interval_domain(length, n).map_err(fail)?;
        *out = Box::into_raw(Box::new(ViamfgGrid(g)));
        Ok(())
    })
}

/// Disk of the given radius on an `n x n` lattice.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn viamfg_grid_disk(radius: f64, n: usize, out: *mut *mut ViamfgGrid) -> ViamfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = build_disk_domain(radius, n).map_err(fail)?;
        *out = Box::into_raw(Box::new(ViamfgGrid(g)));
        Ok(())
    })
}

/// Number of grid nodes, 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn viamfg_grid_len(grid: *const ViamfgGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Writes node coordinates as `(x, y)` pairs into `xy` (length `2 * len`).
///
/// # Safety
/// `grid` must be a live handle and `xy` must hold `2 * len` doubles.
#[no_mangle]
pub unsafe extern "C" fn viamfg_grid_nodes(grid: *const ViamfgGrid, xy: *mut f64, len: usize) -> ViamfgStatus {
    guard(|| {
        let g = &grid.as_ref().ok_or_else(|| null("grid"))?.0;
        if xy.is_null() {
            return Err(null("xy"));
        }
        if len != g.len() {
            return Err(fail(Error::Usage(format!("expected {} nodes, got {len}", g.len()))));
        }
        for (k, x) in g.nodes.iter().enumerate() {
            *xy.add(2 * k) = x[0];
            *xy.add(2 * k + 1) = x[1];
        }
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn viamfg_grid_free(grid: *mut ViamfgGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Shipped model by id: `invariant-1d`, `decoupled-1d`, `uniform-1d` or
/// `invariant-disk`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn viamfg_model_by_name(name: *const c_char, out: *mut *mut ViamfgModel) -> ViamfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = ModelSpec::by_name(c_str(name, "name")?).map_err(fail)?;
        *out = Box::into_raw(Box::new(ViamfgModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn viamfg_model_free(model: *mut ViamfgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves the MFG system from node masses `m0` (length `len`) at time `t0`
/// with time step `dt` and default solver settings.
///
/// # Safety
/// Handles must be live, `m0` must hold `len` doubles, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn viamfg_solve_mfg(
    grid: *const ViamfgGrid,
    model: *const ViamfgModel,
    t0: f64,
    dt: f64,
    m0: *const f64,
    len: usize,
    out: *mut *mut ViamfgSolution,
) -> ViamfgStatus {
    guard(|| {
        let g = &grid.as_ref().ok_or_else(|| null("grid"))?.0;
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let masses = slice(m0, len, "m0")?;
        if len != g.len() {
            return Err(fail(Error::Usage(format!("expected {} masses, got {len}", g.len()))));
        }
        let mu = MeasureField::from_masses(g, masses).map_err(fail)?;
        let sol = solve_mfg(g, m, t0, &mu, &SolverConfig::with_dt(dt)).map_err(fail)?;
        *out = Box::into_raw(Box::new(ViamfgSolution(sol)));
        Ok(())
    })
}

/// Number of stored time levels (`nt + 1`), 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn viamfg_solution_levels(sol: *const ViamfgSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.nt + 1)
}

/// Picard iterations on the finest level, 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn viamfg_solution_picard_iters(sol: *const ViamfgSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.picard_iters)
}

unsafe fn copy_level(
    sol: *const ViamfgSolution,
    level: usize,
    out: *mut f64,
    len: usize,
    pick: fn(&MfgSolution, usize) -> Vec<f64>,
) -> ViamfgStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or_else(|| null("solution"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if level > s.nt {
            return Err(fail(Error::Usage(format!("level {level} exceeds {}", s.nt))));
        }
        let v = pick(s, level);
        if len != v.len() {
            return Err(fail(Error::Usage(format!("expected {} values, got {len}", v.len()))));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, len);
        Ok(())
    })
}

/// Values at time level `level` on the full grid (zero off the active set).
///
/// # Safety
/// `sol` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn viamfg_solution_values(sol: *const ViamfgSolution, level: usize, out: *mut f64, len: usize) -> ViamfgStatus {
    copy_level(sol, level, out, len, |s, n| s.u_full(n))
}

/// Node masses at time level `level` on the full grid.
///
/// # Safety
/// `sol` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn viamfg_solution_masses(sol: *const ViamfgSolution, level: usize, out: *mut f64, len: usize) -> ViamfgStatus {
    copy_level(sol, level, out, len, |s, n| s.masses_full(n))
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn viamfg_solution_free(sol: *mut ViamfgSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Generalized Wasserstein-1 distance between two node-mass vectors.
///
/// # Safety
/// `grid` must be live, `a` and `b` must hold `len` doubles, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn viamfg_wasserstein1(
    grid: *const ViamfgGrid,
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> ViamfgStatus {
    guard(|| {
        let g = &grid.as_ref().ok_or_else(|| null("grid"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = (slice(a, len, "a")?, slice(b, len, "b")?);
        let ma = MeasureField::from_masses(g, a).map_err(fail)?;
        let mb = MeasureField::from_masses(g, b).map_err(fail)?;
        *out = wasserstein1(g, &ma, &mb).map_err(fail)?;
        Ok(())
    })
}

/// Runs an experiment file into `out_dir`. `exit_code` (optional) receives
/// the CLI exit code the run would produce.
///
/// # Safety
/// Strings must be NUL-terminated; `exit_code` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn viamfg_run_experiment(config_path: *const c_char, out_dir: *const c_char, exit_code: *mut i32) -> ViamfgStatus {
    let mut code = 0;
    let status = guard(|| {
        let cfg_path = c_str(config_path, "config_path")?;
        let dir = c_str(out_dir, "out_dir")?;
        let result = ExperimentConfig::load(Path::new(cfg_path)).and_then(|c| run(&c, Path::new(dir)));
        match result {
            Ok(m) => {
                code = if m.checks_passed == Some(false) { 1 } else { 0 };
                Ok(())
            }
            Err(e) => {
                code = e.exit_code();
                Err(fail(e))
            }
        }
    });
    if !exit_code.is_null() {
        *exit_code = if status == ViamfgStatus::Panic { 1 } else { code };
    }
    status
}
