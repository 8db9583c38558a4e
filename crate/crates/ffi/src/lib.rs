//! C ABI over the `hefty` library.
//!
//! Every fallible function returns a [`HeftyStatus`]; on failure a message is
//! available from [`hefty_last_error`] on the same thread until the next
//! failing call. Handles are opaque and owned by the caller, who releases
//! them with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hefty::estimators::{Covariates, Dataset, EstimateError};
use hefty::linear_models::LinearError;
use hefty::sim::Method;
use hefty::stats::clopper_pearson_ci;
use hefty::tail_model::{self, MixtureParams, TailError};
use thiserror::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeftyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A fit, solve or root search failed on valid input.
    NumericalFailure = 3,
    /// A Rust panic was caught at the boundary.
    Panic = 4,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("null pointer passed for `{0}`")]
    Null(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tail(#[from] TailError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

impl FfiError {
    fn status(&self) -> HeftyStatus {
        match self {
            FfiError::Null(_) => HeftyStatus::NullPointer,
            FfiError::InvalidArgument(_) => HeftyStatus::InvalidArgument,
            FfiError::Tail(e) => tail_status(e),
            FfiError::Estimate(e) => match e {
                EstimateError::InvalidData(_) | EstimateError::MissingCovariates(_) => HeftyStatus::InvalidArgument,
                EstimateError::Tail(t) => tail_status(t),
                EstimateError::Linear(LinearError::Shape(_) | LinearError::NonFinite(_)) => {
                    HeftyStatus::InvalidArgument
                }
                _ => HeftyStatus::NumericalFailure,
            },
        }
    }
}

fn tail_status(e: &TailError) -> HeftyStatus {
    match e {
        TailError::InvalidParams(_) | TailError::Domain(_) => HeftyStatus::InvalidArgument,
        _ => HeftyStatus::NumericalFailure,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> HeftyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HeftyStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            HeftyStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &'static str) -> Result<&'a [T], FfiError> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, FfiError> {
    p.as_mut().ok_or(FfiError::Null(name))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or(FfiError::Null(name))
}

/// Message of the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hefty_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hefty_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Mixture parameters by value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeftyMixtureParams {
    pub p_nonconv: f64,
    pub p_torso: f64,
    pub p_tail: f64,
    pub lambda: f64,
    pub cutoff_c: f64,
    pub alpha: f64,
}

impl From<MixtureParams> for HeftyMixtureParams {
    fn from(p: MixtureParams) -> Self {
        Self {
            p_nonconv: p.p_nonconv,
            p_torso: p.p_torso,
            p_tail: p.p_tail,
            lambda: p.lambda,
            cutoff_c: p.cutoff_c,
            alpha: p.alpha,
        }
    }
}

/// Opaque validated mixture.
pub struct HeftyMixture(MixtureParams);

fn emit_mixture(params: MixtureParams, out: *mut *mut HeftyMixture) -> Result<(), FfiError> {
    let out = unsafe { out_ref(out, "out") }?;
    *out = Box::into_raw(Box::new(HeftyMixture(params)));
    Ok(())
}

/// Validates `params` and allocates a mixture handle.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_new(
    params: *const HeftyMixtureParams,
    out: *mut *mut HeftyMixture,
) -> HeftyStatus {
    guard(|| {
        let p = in_ref(params, "params")?;
        let m = MixtureParams::new(p.p_nonconv, p.p_torso, p.p_tail, p.lambda, p.cutoff_c, p.alpha)?;
        emit_mixture(m, out)
    })
}

/// Fits the mixture to `n` non-negative observations at a fixed cutoff.
///
/// # Safety
/// `sample` must point to `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_fit(
    sample: *const f64,
    n: usize,
    cutoff_c: f64,
    out: *mut *mut HeftyMixture,
) -> HeftyStatus {
    guard(|| {
        let sample = slice(sample, n, "sample")?;
        let fit = tail_model::fit_mixture(sample, cutoff_c)?;
        emit_mixture(fit.params, out)
    })
}

/// Releases a mixture handle. NULL is ignored.
///
/// # Safety
/// `mixture` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_free(mixture: *mut HeftyMixture) {
    if !mixture.is_null() {
        drop(Box::from_raw(mixture));
    }
}

/// # Safety
/// `mixture` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_params(
    mixture: *const HeftyMixture,
    out: *mut HeftyMixtureParams,
) -> HeftyStatus {
    guard(|| {
        let m = in_ref(mixture, "mixture")?;
        *out_ref(out, "out")? = m.0.into();
        Ok(())
    })
}

/// Closed-form mean; fails when `alpha <= 1`.
///
/// # Safety
/// `mixture` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_mean(mixture: *const HeftyMixture, out: *mut f64) -> HeftyStatus {
    guard(|| {
        let m = in_ref(mixture, "mixture")?;
        *out_ref(out, "out")? = tail_model::mixture_mean(&m.0)?;
        Ok(())
    })
}

/// # Safety
/// `mixture` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_cdf(mixture: *const HeftyMixture, y: f64, out: *mut f64) -> HeftyStatus {
    guard(|| {
        let m = in_ref(mixture, "mixture")?;
        *out_ref(out, "out")? = m.0.cdf(y);
        Ok(())
    })
}

/// Inverse CDF at level `q` in (0, 1).
///
/// # Safety
/// `mixture` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_quantile(mixture: *const HeftyMixture, q: f64, out: *mut f64) -> HeftyStatus {
    guard(|| {
        let m = in_ref(mixture, "mixture")?;
        *out_ref(out, "out")? = tail_model::mixture_quantile(&m.0, q)?;
        Ok(())
    })
}

/// Writes `n` draws to `out`; identical seeds give identical draws.
///
/// # Safety
/// `mixture` must be a live handle and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_sample(
    mixture: *const HeftyMixture,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> HeftyStatus {
    guard(|| {
        let m = in_ref(mixture, "mixture")?;
        if n == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(FfiError::Null("out"));
        }
        let draws = tail_model::sample_mixture(&m.0, n, seed);
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&draws);
        Ok(())
    })
}

/// New handle whose mean is `(1 + target_lift)` times the original, obtained
/// by re-solving the torso rate.
///
/// # Safety
/// `mixture` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_mixture_inject_lift(
    mixture: *const HeftyMixture,
    target_lift: f64,
    out: *mut *mut HeftyMixture,
) -> HeftyStatus {
    guard(|| {
        let m = in_ref(mixture, "mixture")?;
        emit_mixture(tail_model::inject_lift(&m.0, target_lift)?, out)
    })
}

/// Opaque experiment dataset.
pub struct HeftyDataset(Dataset);

/// Builds a dataset from `n` responses, `n` assignments (0 or 1) and an
/// optional row-major `n x k` covariate block (`covariates` may be NULL when
/// `k` is 0). Inputs are copied.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_dataset_new(
    response: *const f64,
    assignment: *const u8,
    n: usize,
    covariates: *const f64,
    k: usize,
    out: *mut *mut HeftyDataset,
) -> HeftyStatus {
    guard(|| {
        let y = slice(response, n, "response")?.to_vec();
        let t = slice(assignment, n, "assignment")?.to_vec();
        let cov = if k == 0 {
            None
        } else {
            let len = n.checked_mul(k).ok_or_else(|| FfiError::InvalidArgument("n * k overflows".into()))?;
            let values = slice(covariates, len, "covariates")?.to_vec();
            Some(Covariates { names: (0..k).map(|j| format!("x{j}")).collect(), values })
        };
        let data = Dataset::new(y, t, cov)?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(HeftyDataset(data)));
        Ok(())
    })
}

/// Releases a dataset handle. NULL is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hefty_dataset_free(dataset: *mut HeftyDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Core fields of an estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeftyEstimate {
    pub effect_abs: f64,
    pub lift: f64,
    pub std_err: f64,
    pub z_stat: f64,
    pub p_value: f64,
}

/// Runs the estimator named by `method_id` (for example `naive`,
/// `winsor_union@0.99`, `huber`, `dml_huber@5`). `seed` drives the
/// cross-fitting partition of the DML methods.
///
/// # Safety
/// `dataset` must be a live handle, `method_id` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_estimate(
    dataset: *const HeftyDataset,
    method_id: *const c_char,
    seed: u64,
    out: *mut HeftyEstimate,
) -> HeftyStatus {
    guard(|| {
        let data = in_ref(dataset, "dataset")?;
        if method_id.is_null() {
            return Err(FfiError::Null("method_id"));
        }
        let id = CStr::from_ptr(method_id)
            .to_str()
            .map_err(|_| FfiError::InvalidArgument("method_id is not UTF-8".into()))?;
        let method: Method = id.parse().map_err(FfiError::InvalidArgument)?;
        let r = method.estimate(&data.0, seed)?;
        *out_ref(out, "out")? = HeftyEstimate {
            effect_abs: r.effect_abs,
            lift: r.lift,
            std_err: r.std_err,
            z_stat: r.z_stat,
            p_value: r.p_value,
        };
        Ok(())
    })
}

/// Exact binomial interval for `successes` out of `trials`.
///
/// # Safety
/// `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hefty_clopper_pearson(
    successes: u64,
    trials: u64,
    confidence: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> HeftyStatus {
    guard(|| {
        let lo = out_ref(lo, "lo")?;
        let hi = out_ref(hi, "hi")?;
        if trials == 0 || successes > trials {
            return Err(FfiError::InvalidArgument(format!(
                "need 0 <= successes ({successes}) <= trials ({trials}), trials >= 1"
            )));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(FfiError::InvalidArgument(format!("confidence {confidence} outside (0, 1)")));
        }
        (*lo, *hi) = clopper_pearson_ci(successes, trials, confidence);
        Ok(())
    })
}
