use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use sparsepmm_ffi::*;

fn last_error() -> String {
    let p = spm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> CString {
    CString::new("simulation.n = 60\nsimulation.p = 12\nsimulation.seed = 4\n").unwrap()
}

#[test]
fn simulate_fit_score_round_trip() {
    unsafe {
        let cfg = small_config();
        let mut ds = ptr::null_mut();
        let mut truth = ptr::null_mut();
        assert_eq!(spm_simulate(cfg.as_ptr(), &mut ds, &mut truth), SpmStatus::Ok);
        assert_eq!(spm_dataset_n(ds), 60);
        assert_eq!(spm_dataset_p(ds), 12);

        let mut fit = ptr::null_mut();
        assert_eq!(spm_fit(ds, 0.0, 0.0, 0.1, ptr::null(), &mut fit), SpmStatus::Ok);
        assert_eq!(spm_fit_n(fit), 60);
        assert_eq!(spm_fit_p(fit), 12);

        let mut delta = vec![0.0; 12];
        assert_eq!(spm_fit_delta(fit, delta.as_mut_ptr(), delta.len()), SpmStatus::Ok);
        assert!(delta.iter().any(|d| *d != 0.0));
        let mut g = vec![-1.0; 60];
        assert_eq!(spm_fit_g(fit, g.as_mut_ptr(), g.len()), SpmStatus::Ok);
        assert!(g.iter().all(|v| (0.0..=0.5).contains(v)));
        let mut om = vec![0.0; 144];
        assert_eq!(spm_fit_omega(fit, om.as_mut_ptr(), om.len()), SpmStatus::Ok);
        for i in 0..12 {
            assert!(om[i * 12 + i] > 0.0);
            for j in 0..12 {
                assert_eq!(om[i * 12 + j], om[j * 12 + i]);
            }
        }
        let mut lam = [0.0; 3];
        assert_eq!(spm_fit_lambda(fit, lam.as_mut_ptr()), SpmStatus::Ok);
        assert_eq!(lam, [0.0, 0.0, 0.1]);
        let mut bic = 0.0;
        assert_eq!(spm_fit_bic(fit, &mut bic), SpmStatus::Ok);
        assert!(bic.is_finite());
        let mut conv = -1;
        assert_eq!(spm_fit_converged(fit, &mut conv), SpmStatus::Ok);
        assert!(conv == 0 || conv == 1);

        let mut json = ptr::null_mut();
        assert_eq!(spm_fit_to_json(fit, &mut json), SpmStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        spm_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["n"], 60);

        let mut scores = ptr::null_mut();
        assert_eq!(spm_score(fit, truth, &mut scores), SpmStatus::Ok);
        let s: serde_json::Value = serde_json::from_str(CStr::from_ptr(scores).to_str().unwrap()).unwrap();
        spm_string_free(scores);
        assert!(s["mae_g"].as_f64().unwrap() >= 0.0);

        let mut gt = vec![0.0; 60];
        assert_eq!(spm_truth_g(truth, gt.as_mut_ptr(), 60), SpmStatus::Ok);
        assert_eq!(gt.iter().filter(|x| **x != 0.0).count(), 18);

        spm_fit_free(fit);
        spm_truth_free(truth);
        spm_dataset_free(ds);
    }
}

#[test]
fn dataset_from_memory_and_tune() {
    unsafe {
        let cfg = small_config();
        let mut sim = ptr::null_mut();
        assert_eq!(spm_simulate(cfg.as_ptr(), &mut sim, ptr::null_mut()), SpmStatus::Ok);
        let mut fit0 = ptr::null_mut();
        let grid = CString::new("grid.g = [0.5, 5]\ngrid.delta = [0.1, 1]\ngrid.omega = [0.1, 1]\n").unwrap();
        assert_eq!(spm_tune(sim, grid.as_ptr(), &mut fit0), SpmStatus::Ok);
        let mut lam = [0.0; 3];
        spm_fit_lambda(fit0, lam.as_mut_ptr());
        assert!([0.5, 5.0].contains(&lam[0]));
        assert!([0.1, 1.0].contains(&lam[1]));
        spm_fit_free(fit0);
        spm_dataset_free(sim);

        let (n, p) = (4, 3);
        let y: Vec<f64> = (0..n * p).map(|k| (k as f64 * 0.37).sin()).collect();
        let known = [0.0, f64::NAN, 0.0, f64::NAN];
        let mut ds = ptr::null_mut();
        assert_eq!(
            spm_dataset_new(y.as_ptr(), n, p, known.as_ptr(), ptr::null(), &mut ds),
            SpmStatus::Ok
        );
        assert_eq!((spm_dataset_n(ds), spm_dataset_p(ds)), (4, 3));
        spm_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            spm_dataset_new(ptr::null(), 2, 2, ptr::null(), ptr::null(), &mut ds),
            SpmStatus::NullPointer
        );
        assert!(ds.is_null());
        assert!(last_error().contains("absorbance"));

        let y = [0.1, 0.2, 0.3, 0.4];
        let bad_g = [0.7, f64::NAN];
        assert_eq!(
            spm_dataset_new(y.as_ptr(), 2, 2, bad_g.as_ptr(), ptr::null(), &mut ds),
            SpmStatus::Validation
        );

        let path = CString::new("/nonexistent/spectra.csv").unwrap();
        assert_eq!(spm_dataset_load_csv(path.as_ptr(), ptr::null(), &mut ds), SpmStatus::Io);

        let cfg = CString::new("fit.no_such_key = 1").unwrap();
        let mut sim = ptr::null_mut();
        assert_eq!(spm_simulate(cfg.as_ptr(), &mut sim, ptr::null_mut()), SpmStatus::InvalidArgument);
        assert!(last_error().contains("no_such_key"));

        let cfg = small_config();
        assert_eq!(spm_simulate(cfg.as_ptr(), &mut sim, ptr::null_mut()), SpmStatus::Ok);
        let mut fit = ptr::null_mut();
        assert_eq!(spm_fit(sim, -1.0, 0.0, 0.0, ptr::null(), &mut fit), SpmStatus::InvalidArgument);
        assert!(fit.is_null());
        assert_eq!(spm_fit(sim, 0.0, 0.0, 0.1, ptr::null(), &mut fit), SpmStatus::Ok);
        let mut small = [0.0; 3];
        assert_eq!(spm_fit_delta(fit, small.as_mut_ptr(), 3), SpmStatus::BufferTooSmall);
        assert_eq!(spm_fit_bic(ptr::null(), small.as_mut_ptr()), SpmStatus::NullPointer);
        assert_eq!(spm_fit_n(ptr::null()), 0);
        spm_fit_free(fit);
        spm_dataset_free(sim);
        spm_fit_free(ptr::null_mut());
        spm_string_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(spm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_api_and_compiles_as_c() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/sparsepmm.h")).unwrap();
    for name in [
        "spm_dataset_new",
        "spm_dataset_load_csv",
        "spm_fit",
        "spm_tune",
        "spm_simulate",
        "spm_score",
        "spm_fit_free",
        "spm_last_error_message",
        "SPM_STATUS_BUFFER_TOO_SMALL",
        "typedef struct SpmFit SpmFit",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }

    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping the compile check");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "sparsepmm.h"
int main(void) {
    SpmDataset *ds = NULL;
    SpmFit *fit = NULL;
    SpmStatus s = spm_simulate(NULL, &ds, NULL);
    if (s == SPM_STATUS_OK) s = spm_fit(ds, 0.0, 0.0, 0.1, NULL, &fit);
    double delta[8];
    if (s == SPM_STATUS_OK) s = spm_fit_delta(fit, delta, 8);
    spm_fit_free(fit);
    spm_dataset_free(ds);
    return (int)s;
}
"#,
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
