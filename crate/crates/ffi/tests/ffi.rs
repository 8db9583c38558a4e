use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use hefty::sim::{Method, PairedPeriodSpec};
use hefty::tail_model::{self, MixtureParams};
use hefty_ffi::*;

const PARAMS: HeftyMixtureParams =
    HeftyMixtureParams { p_nonconv: 0.5, p_torso: 0.4, p_tail: 0.1, lambda: 1.0, cutoff_c: 10.0, alpha: 1.5 };

fn last_error() -> String {
    let p = hefty_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_mixture(params: &HeftyMixtureParams) -> *mut HeftyMixture {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hefty_mixture_new(params, &mut m) }, HeftyStatus::Ok);
    m
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(hefty_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn mixture_round_trip_matches_library() {
    let m = new_mixture(&PARAMS);
    let lib = MixtureParams::new(0.5, 0.4, 0.1, 1.0, 10.0, 1.5).unwrap();
    let mut got =
        HeftyMixtureParams { p_nonconv: 0.0, p_torso: 0.0, p_tail: 0.0, lambda: 0.0, cutoff_c: 0.0, alpha: 0.0 };
    let (mut mean, mut q, mut cdf) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(hefty_mixture_params(m, &mut got), HeftyStatus::Ok);
        assert_eq!(hefty_mixture_mean(m, &mut mean), HeftyStatus::Ok);
        assert_eq!(hefty_mixture_quantile(m, 0.95, &mut q), HeftyStatus::Ok);
        assert_eq!(hefty_mixture_cdf(m, q, &mut cdf), HeftyStatus::Ok);
    }
    assert_eq!(got, PARAMS);
    assert_eq!(mean, tail_model::mixture_mean(&lib).unwrap());
    assert!((cdf - 0.95).abs() < 1e-12);

    let mut draws = vec![0.0; 1000];
    assert_eq!(unsafe { hefty_mixture_sample(m, draws.len(), 9, draws.as_mut_ptr()) }, HeftyStatus::Ok);
    assert_eq!(draws, tail_model::sample_mixture(&lib, 1000, 9));

    let mut lifted = ptr::null_mut();
    let mut lifted_mean = 0.0;
    unsafe {
        assert_eq!(hefty_mixture_inject_lift(m, 0.05, &mut lifted), HeftyStatus::Ok);
        assert_eq!(hefty_mixture_mean(lifted, &mut lifted_mean), HeftyStatus::Ok);
        hefty_mixture_free(lifted);
        hefty_mixture_free(m);
    }
    assert!((lifted_mean / mean - 1.05).abs() < 1e-9);
}

#[test]
fn fit_recovers_segment_weights() {
    let lib = MixtureParams::new(0.5, 0.4, 0.1, 1.0, 10.0, 1.5).unwrap();
    let sample = tail_model::sample_mixture(&lib, 50_000, 3);
    let mut m = ptr::null_mut();
    let mut got = PARAMS;
    unsafe {
        assert_eq!(hefty_mixture_fit(sample.as_ptr(), sample.len(), 10.0, &mut m), HeftyStatus::Ok);
        assert_eq!(hefty_mixture_params(m, &mut got), HeftyStatus::Ok);
        hefty_mixture_free(m);
    }
    let expected = tail_model::fit_mixture(&sample, 10.0).unwrap().params;
    assert_eq!(got.alpha, expected.alpha);
    assert!((got.p_tail - 0.1).abs() < 0.01);
}

#[test]
fn invalid_inputs_report_status_and_message() {
    let bad = HeftyMixtureParams { p_tail: 0.2, ..PARAMS };
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hefty_mixture_new(&bad, &mut m) }, HeftyStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("invalid mixture parameters"));

    assert_eq!(unsafe { hefty_mixture_new(ptr::null(), &mut m) }, HeftyStatus::NullPointer);
    assert!(last_error().contains("params"));

    let heavy = new_mixture(&HeftyMixtureParams { alpha: 0.9, ..PARAMS });
    let mut x = 0.0;
    unsafe {
        assert_eq!(hefty_mixture_mean(heavy, &mut x), HeftyStatus::NumericalFailure);
        assert_eq!(hefty_mixture_quantile(heavy, 1.5, &mut x), HeftyStatus::InvalidArgument);
        hefty_mixture_free(heavy);
        hefty_mixture_free(ptr::null_mut());
        hefty_dataset_free(ptr::null_mut());
    }
}

#[test]
fn estimate_matches_library() {
    let paired = PairedPeriodSpec {
        base_params: MixtureParams::new(0.5, 0.4, 0.1, 1.0, 10.0, 1.8).unwrap(),
        noise_cv: 0.3,
        target_lift: 0.0,
    };
    let data = paired.generate(200, 5).unwrap();
    let (y, t) = (data.response(), data.assignment());
    let x = &data.covariates().unwrap().values;
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { hefty_dataset_new(y.as_ptr(), t.as_ptr(), y.len(), x.as_ptr(), 1, &mut d) }, HeftyStatus::Ok);
    for id in ["naive", "winsor_union@0.9", "huber", "post_strat", "dr", "dml_huber@5"] {
        let c = CString::new(id).unwrap();
        let mut out = HeftyEstimate::default();
        assert_eq!(unsafe { hefty_estimate(d, c.as_ptr(), 11, &mut out) }, HeftyStatus::Ok, "{id}");
        let r = id.parse::<Method>().unwrap().estimate(&data, 11).unwrap();
        assert_eq!((out.effect_abs, out.std_err, out.p_value, out.lift), (r.effect_abs, r.std_err, r.p_value, r.lift));
    }

    let unknown = CString::new("nope").unwrap();
    let mut out = HeftyEstimate::default();
    assert_eq!(unsafe { hefty_estimate(d, unknown.as_ptr(), 0, &mut out) }, HeftyStatus::InvalidArgument);
    unsafe { hefty_dataset_free(d) };

    let mut bare = ptr::null_mut();
    assert_eq!(
        unsafe { hefty_dataset_new(y.as_ptr(), t.as_ptr(), y.len(), ptr::null(), 0, &mut bare) },
        HeftyStatus::Ok
    );
    let ps = CString::new("post_strat").unwrap();
    assert_eq!(unsafe { hefty_estimate(bare, ps.as_ptr(), 0, &mut out) }, HeftyStatus::InvalidArgument);
    assert!(last_error().contains("covariates"));
    unsafe { hefty_dataset_free(bare) };

    let bad_t = vec![2u8; y.len()];
    let mut d = ptr::null_mut();
    assert_eq!(
        unsafe { hefty_dataset_new(y.as_ptr(), bad_t.as_ptr(), y.len(), ptr::null(), 0, &mut d) },
        HeftyStatus::InvalidArgument
    );
}

#[test]
fn clopper_pearson_bounds() {
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { hefty_clopper_pearson(50, 500, 0.95, &mut lo, &mut hi) }, HeftyStatus::Ok);
    assert!(lo < 0.1 && 0.1 < hi);
    assert_eq!((lo, hi), hefty::stats::clopper_pearson_ci(50, 500, 0.95));
    assert_eq!(unsafe { hefty_clopper_pearson(5, 4, 0.95, &mut lo, &mut hi) }, HeftyStatus::InvalidArgument);
    assert_eq!(unsafe { hefty_clopper_pearson(1, 4, 1.0, &mut lo, &mut hi) }, HeftyStatus::InvalidArgument);
}

#[test]
fn last_error_is_thread_local() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hefty_mixture_new(ptr::null(), &mut m) }, HeftyStatus::NullPointer);
    let other = std::thread::spawn(|| hefty_last_error().is_null()).join().unwrap();
    assert!(other);
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("hefty.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["hefty_estimate", "hefty_mixture_new", "hefty_dataset_free", "HEFTY_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(status) =
            Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(&header).status()
        else {
            eprintln!("{compiler} unavailable; skipping");
            continue;
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
