use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use viamfg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        viamfg_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn grid_model_solve_round_trip() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(viamfg_grid_interval(1.0, 32, &mut g), ViamfgStatus::Ok);
        let n = viamfg_grid_len(g);
        assert_eq!(n, 32);
        let mut m = ptr::null_mut();
        let name = CString::new("invariant-1d").unwrap();
        assert_eq!(viamfg_model_by_name(name.as_ptr(), &mut m), ViamfgStatus::Ok);
        let m0: Vec<f64> = (0..n).map(|k| if (8..24).contains(&k) { 1.0 / 16.0 } else { 0.0 }).collect();
        let mut s = ptr::null_mut();
        assert_eq!(viamfg_solve_mfg(g, m, 0.0, 0.05, m0.as_ptr(), n, &mut s), ViamfgStatus::Ok);
        let levels = viamfg_solution_levels(s);
        assert_eq!(levels, 11);
        assert!(viamfg_solution_picard_iters(s) >= 2);
        let mut out = vec![0.0; n];
        assert_eq!(viamfg_solution_masses(s, levels - 1, out.as_mut_ptr(), n), ViamfgStatus::Ok);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let mut d = -1.0;
        assert_eq!(viamfg_wasserstein1(g, m0.as_ptr(), out.as_ptr(), n, &mut d), ViamfgStatus::Ok);
        assert!(d >= 0.0);
        viamfg_solution_free(s);
        viamfg_model_free(m);
        viamfg_grid_free(g);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(viamfg_grid_interval(1.0, 1, &mut g), ViamfgStatus::InvalidArgument);
        assert!(g.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(viamfg_grid_interval(1.0, 16, ptr::null_mut()), ViamfgStatus::NullPointer);
        let mut m = ptr::null_mut();
        let name = CString::new("no-such-model").unwrap();
        assert_eq!(viamfg_model_by_name(name.as_ptr(), &mut m), ViamfgStatus::InvalidArgument);
        assert!(last_error().contains("no-such-model"));
        assert_eq!(viamfg_grid_len(ptr::null()), 0);
        viamfg_grid_free(ptr::null_mut());
        let mut code = -1;
        let cfg = CString::new("/nonexistent/config.toml").unwrap();
        let out = CString::new(std::env::temp_dir().join("viamfg-ffi-none").to_str().unwrap()).unwrap();
        assert_eq!(viamfg_run_experiment(cfg.as_ptr(), out.as_ptr(), &mut code), ViamfgStatus::Io);
        assert_eq!(code, 4);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(viamfg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // tests/../.. is the workspace root; the test binary sits in target/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = dir.join("include");
    assert!(header_dir.join("viamfg.h").exists());
    let tmp = tempfile::tempdir().unwrap();
    let obj = tmp.path().join("smoke.o");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-c"])
        .arg(dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(&header_dir)
        .arg("-o")
        .arg(&obj)
        .status();
    let Ok(status) = status else {
        eprintln!("no C compiler available; header check skipped");
        return;
    };
    assert!(status.success(), "header does not compile");
    let lib = target_dir().join("libviamfg_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}; link step skipped", lib.display());
        return;
    }
    let exe = tmp.path().join("smoke");
    let ok = Command::new("cc").arg(&obj).arg(&lib).args(["-lpthread", "-ldl", "-lm", "-o"]).arg(&exe).status().unwrap();
    assert!(ok.success(), "link failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
