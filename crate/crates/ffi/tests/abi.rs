use std::ffi::{CStr, CString};
use std::ptr;

use poisson_stop_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ps_last_error()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut PsProblem {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ps_problem_load(cstr(name).as_ptr(), &mut p) }, PsStatus::Ok, "{}", last_error());
    p
}

#[test]
fn solve_and_read_back() {
    let p = load("dw");
    let mut o = ps_solve_options_default();
    o.grid_nodes = 801;
    let mut v = ptr::null_mut();
    unsafe {
        assert_eq!(ps_solve(p, &o, &mut v), PsStatus::Ok, "{}", last_error());
        assert!(ps_value_converged(v));
        let n = ps_value_len(v);
        assert_eq!(n, 801);
        let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(ps_value_copy(v, xs.as_mut_ptr(), ys.as_mut_ptr(), n), PsStatus::Ok);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        let mut y = 0.0;
        assert_eq!(ps_value_eval(v, xs[400], &mut y), PsStatus::Ok);
        assert_eq!(y, ys[400]);
        let json = ps_value_report_json(v);
        let report: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(report["converged"], true);
        ps_string_free(json);
        ps_value_free(v);
        ps_problem_free(p);
    }
}

#[test]
fn json_round_trip() {
    let p = load("eg2_3");
    unsafe {
        let json = ps_problem_to_json(p);
        assert!(!json.is_null());
        let mut q = ptr::null_mut();
        assert_eq!(ps_problem_from_json(json, &mut q), PsStatus::Ok, "{}", last_error());
        ps_string_free(json);
        ps_problem_free(q);
        ps_problem_free(p);
    }
}

#[test]
fn error_codes() {
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(ps_problem_from_json(ptr::null(), &mut p), PsStatus::NullPointer);
        assert_eq!(ps_problem_from_json(cstr("{").as_ptr(), &mut p), PsStatus::InvalidProblem);
        assert!(!last_error().is_empty());
        assert!(p.is_null());
        let bad = [0xffu8, 0];
        assert_eq!(ps_problem_from_json(bad.as_ptr().cast(), &mut p), PsStatus::InvalidString);

        let singular = load("eg2_5");
        let mut v = ptr::null_mut();
        let mut e = PsEstimate::default();
        assert_eq!(ps_estimate_first_arrival(singular, 0.5, 100, 0.0, 1, &mut e), PsStatus::AssumptionFailed);
        ps_problem_free(singular);

        let q = load("dw");
        let mut o = ps_solve_options_default();
        o.grid_nodes = 3;
        assert_eq!(ps_solve(q, &o, &mut v), PsStatus::InvalidArgument, "{}", last_error());
        assert!(v.is_null());
        let mut y = 0.0;
        assert_eq!(ps_value_eval(ptr::null(), 1.0, &mut y), PsStatus::NullPointer);
        assert_eq!(ps_value_len(ptr::null()), 0);
        ps_problem_free(q);
        ps_problem_free(ptr::null_mut());
        ps_value_free(ptr::null_mut());
    }
}

#[test]
fn first_arrival_estimates_agree() {
    let p = load("psi_half");
    let mut e = PsEstimate::default();
    unsafe {
        assert_eq!(ps_estimate_first_arrival(p, 1.0, 5000, 0.01, 7, &mut e), PsStatus::Ok, "{}", last_error());
        ps_problem_free(p);
    }
    assert!((e.time_changed_mean - 0.5).abs() < 1e-9);
    assert!((e.direct_mean - 0.5).abs() < 4.0 * e.direct_std_error + 5e-3);
}

#[test]
fn errors_are_thread_local() {
    let mut p = ptr::null_mut();
    unsafe { ps_problem_from_json(cstr("[]").as_ptr(), &mut p) };
    let here = last_error();
    let there = std::thread::spawn(last_error).join().unwrap();
    assert!(!here.is_empty());
    assert!(there.is_empty());
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libpoisson_stop_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let exe = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_smoke");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("cc");
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
