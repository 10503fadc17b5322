//! C API for `sparsepmm`.
//!
//! Objects are opaque handles created by `spm_*_new`, `spm_fit`, `spm_tune` or
//! `spm_simulate` and released with the matching `spm_*_free`. Every fallible
//! call returns an `SpmStatus`; on failure `spm_last_error_message` holds a
//! description until the next failing call on the same thread.
//!
//! Optional settings are passed as TOML text using the keys accepted by the
//! command-line `--config` file, or NULL for the defaults.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sparsepmm::cli::{self, LambdaSpec, RunConfig};
use sparsepmm::data::{self, SpectraDataset};
use sparsepmm::nalgebra::{DMatrix, DVector};
use sparsepmm::simulation::{self, GroundTruth};
use sparsepmm::{Error, FitReport, Hyperparameters};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmStatus {
    Ok = 0,
    InvalidArgument = 1,
    Parse = 2,
    Validation = 3,
    Configuration = 4,
    Numerical = 5,
    DegenerateSignal = 6,
    Io = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<&Error> for SpmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => Self::Parse,
            Error::Validation(_) => Self::Validation,
            Error::Configuration(_) => Self::Configuration,
            Error::Numerical { .. } => Self::Numerical,
            Error::DegenerateSignal => Self::DegenerateSignal,
            Error::Io(_) => Self::Io,
        }
    }
}

/// A spectra dataset.
pub struct SpmDataset(SpectraDataset);

/// A fitted model.
pub struct SpmFit(FitReport);

/// Ground truth of a simulated dataset.
pub struct SpmTruth(GroundTruth);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SpmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SpmStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: SpmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SpmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SpmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SpmStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SpmStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(SpmStatus::NullPointer, format!("{name} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(SpmStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SpmStatus::NullPointer, format!("{name} is NULL"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn run_config(toml: *const c_char) -> Result<RunConfig, Failure> {
    if toml.is_null() {
        return Ok(RunConfig::default());
    }
    let cfg = RunConfig::from_toml_str(c_str(toml, "config")?)?;
    cfg.fit.validate()?;
    Ok(cfg)
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len < values.len() {
        return fail(
            SpmStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        );
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return fail(SpmStatus::NullPointer, "out is NULL");
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn spm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a dataset from a row-major `n x p` absorbance matrix.
///
/// `known_g` may be NULL; otherwise it holds `n` values with NaN marking an
/// unlabeled sample. `mu_pure` may be NULL or hold `p` values.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_new(
    absorbance: *const f64,
    n: usize,
    p: usize,
    known_g: *const f64,
    mu_pure: *const f64,
    out: *mut *mut SpmDataset,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let len = n
            .checked_mul(p)
            .ok_or_else(|| Failure(SpmStatus::InvalidArgument, "n * p overflows".into()))?;
        let y = DMatrix::from_row_slice(n, p, slice(absorbance, len, "absorbance")?);
        let labels = if known_g.is_null() {
            vec![None; n]
        } else {
            slice(known_g, n, "known_g")?
                .iter()
                .map(|g| (!g.is_nan()).then_some(*g))
                .collect()
        };
        let mut ds = SpectraDataset::from_matrix(y, labels)?;
        if !mu_pure.is_null() {
            ds = ds.with_mu_pure(DVector::from_column_slice(slice(mu_pure, p, "mu_pure")?))?;
        }
        *out = Box::into_raw(Box::new(SpmDataset(ds)));
        Ok(())
    })
}

/// Reads a spectra CSV. `mu_pure_path` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_load_csv(
    path: *const c_char,
    mu_pure_path: *const c_char,
    out: *mut *mut SpmDataset,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let mut ds = data::load_csv(c_str(path, "path")?, &Default::default())?;
        if !mu_pure_path.is_null() {
            let mu = data::load_mu_pure(c_str(mu_pure_path, "mu_pure_path")?, ds.wavelengths())?;
            ds = ds.with_mu_pure(mu)?;
        }
        *out = Box::into_raw(Box::new(SpmDataset(ds)));
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_n(ds: *const SpmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Number of wavelengths, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_p(ds: *const SpmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.p())
}

#[no_mangle]
pub unsafe extern "C" fn spm_dataset_free(ds: *mut SpmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits at fixed penalties.
#[no_mangle]
pub unsafe extern "C" fn spm_fit(
    ds: *const SpmDataset,
    lambda_g: f64,
    lambda_delta: f64,
    lambda_omega: f64,
    config_toml: *const c_char,
    out: *mut *mut SpmFit,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ds = borrow(ds, "ds")?;
        let cfg = run_config(config_toml)?;
        let lam = Hyperparameters::new(lambda_g, lambda_delta, lambda_omega)?;
        let report = sparsepmm::fit(&ds.0, &lam, &cfg.fit)?;
        *out = Box::into_raw(Box::new(SpmFit(report)));
        Ok(())
    })
}

/// Selects penalties by BIC and returns the selected fit. A fixed `lambda`
/// in the config is ignored.
#[no_mangle]
pub unsafe extern "C" fn spm_tune(
    ds: *const SpmDataset,
    config_toml: *const c_char,
    out: *mut *mut SpmFit,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ds = borrow(ds, "ds")?;
        let mut cfg = run_config(config_toml)?;
        cfg.lambda = Some(LambdaSpec::Auto);
        let trace = cli::tune_dataset(&cfg, &ds.0)?;
        *out = Box::into_raw(Box::new(SpmFit(trace.best)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spm_fit_free(fit: *mut SpmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of samples of a fit, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_n(fit: *const SpmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.g().len())
}

/// Number of wavelengths of a fit, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_p(fit: *const SpmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.p())
}

/// Copies the `p` mean-shift values into `out`.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_delta(fit: *const SpmFit, out: *mut f64, len: usize) -> SpmStatus {
    guard(|| copy_out(borrow(fit, "fit")?.0.delta(), out, len))
}

/// Copies the `n` adulteration levels into `out`.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_g(fit: *const SpmFit, out: *mut f64, len: usize) -> SpmStatus {
    guard(|| copy_out(borrow(fit, "fit")?.0.g(), out, len))
}

/// Copies the `p x p` precision matrix into `out`, row-major.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_omega(fit: *const SpmFit, out: *mut f64, len: usize) -> SpmStatus {
    guard(|| {
        let om = borrow(fit, "fit")?.0.omega();
        let rows: Vec<f64> = om.transpose().iter().copied().collect();
        copy_out(&rows, out, len)
    })
}

/// Writes `lambda_g`, `lambda_delta` and `lambda_omega` into `out[0..3]`.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_lambda(fit: *const SpmFit, out: *mut f64) -> SpmStatus {
    guard(|| {
        let l = borrow(fit, "fit")?.0.lambda;
        copy_out(&[l.lambda_g, l.lambda_delta, l.lambda_omega], out, 3)
    })
}

/// BIC of the fit; larger is better.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_bic(fit: *const SpmFit, out: *mut f64) -> SpmStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(fit, "fit")?.0.bic;
        Ok(())
    })
}

/// Unpenalized log-likelihood at the estimate.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_loglik(fit: *const SpmFit, out: *mut f64) -> SpmStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(fit, "fit")?.0.loglik_unpenalized;
        Ok(())
    })
}

/// 1 when the outer loop met its tolerance, else 0.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_converged(fit: *const SpmFit, out: *mut i32) -> SpmStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(fit, "fit")?.0.converged as i32;
        Ok(())
    })
}

/// Full report as JSON. Release with `spm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn spm_fit_to_json(fit: *const SpmFit, out: *mut *mut c_char) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = serde_json::to_string(&borrow(fit, "fit")?.0).map_err(Error::from)?;
        *out = into_c_string(text);
        Ok(())
    })
}

/// Generates a synthetic dataset from the `simulation.*` keys of the config.
/// `truth_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn spm_simulate(
    config_toml: *const c_char,
    ds_out: *mut *mut SpmDataset,
    truth_out: *mut *mut SpmTruth,
) -> SpmStatus {
    guard(|| {
        let ds_out = out_ptr(ds_out, "ds_out")?;
        *ds_out = ptr::null_mut();
        if let Some(t) = truth_out.as_mut() {
            *t = ptr::null_mut();
        }
        let cfg = run_config(config_toml)?;
        let sc = cli::scenario_config(&cfg)?;
        let (ds, truth) = simulation::generate(&sc)?;
        *ds_out = Box::into_raw(Box::new(SpmDataset(ds)));
        if let Some(t) = truth_out.as_mut() {
            *t = Box::into_raw(Box::new(SpmTruth(truth)));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spm_truth_free(truth: *mut SpmTruth) {
    if !truth.is_null() {
        drop(Box::from_raw(truth));
    }
}

/// Copies the `n` true adulteration levels into `out`.
#[no_mangle]
pub unsafe extern "C" fn spm_truth_g(truth: *const SpmTruth, out: *mut f64, len: usize) -> SpmStatus {
    guard(|| copy_out(&borrow(truth, "truth")?.0.g_true, out, len))
}

/// Copies the `p` true mean-shift values into `out`.
#[no_mangle]
pub unsafe extern "C" fn spm_truth_delta(truth: *const SpmTruth, out: *mut f64, len: usize) -> SpmStatus {
    guard(|| copy_out(&borrow(truth, "truth")?.0.delta_true, out, len))
}

/// Scores a fit against the truth; writes the metrics as JSON.
/// Release with `spm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn spm_score(
    fit: *const SpmFit,
    truth: *const SpmTruth,
    out: *mut *mut c_char,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (fit, truth) = (borrow(fit, "fit")?, borrow(truth, "truth")?);
        if fit.0.g().len() != truth.0.g_true.len() || fit.0.p() != truth.0.delta_true.len() {
            return fail(SpmStatus::Validation, "fit and truth dimensions differ");
        }
        let m = simulation::scenario::score(&fit.0, &truth.0)?;
        *out = into_c_string(serde_json::to_string(&m).map_err(Error::from)?);
        Ok(())
    })
}
