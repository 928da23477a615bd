use std::ffi::{CStr, CString};
use std::ptr;

use cobras::signal_sim::{sample_covariance, simulate_snapshots, SourceScenario};
use cobras_ffi::*;

const ULA: &str = r#"{"subarrays": [[0, 1, 2], [0, 1, 2], [0, 1, 2]], "displacements": [3, 6]}"#;

fn geometry(json: &str) -> *mut CobrasGeometry {
    let text = CString::new(json).unwrap();
    let mut g = ptr::null_mut();
    let status = unsafe { cobras_geometry_from_json(text.as_ptr(), &mut g) };
    assert_eq!(status, CobrasStatus::Ok);
    g
}

fn covariance(json: &str, mus: &[f64], snr_db: f64) -> (Vec<f64>, usize) {
    let geom: cobras::array_model::ArrayGeometry = serde_json::from_str(json).unwrap();
    let scenario = SourceScenario {
        frequencies: mus.to_vec(),
        correlation: Default::default(),
        snr_db,
        snapshots: 200,
        seed: 11,
    };
    let r = sample_covariance(&simulate_snapshots(&geom, &scenario).unwrap()).data;
    let m = r.nrows();
    let mut flat = Vec::with_capacity(2 * m * m);
    for i in 0..m {
        for j in 0..m {
            flat.push(r[(i, j)].re);
            flat.push(r[(i, j)].im);
        }
    }
    (flat, m)
}

fn last_error() -> String {
    let p = cobras_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn wrap(d: f64) -> f64 {
    (d + 1.0).rem_euclid(2.0) - 1.0
}

#[test]
fn geometry_round_trip() {
    let g = geometry(ULA);
    let (mut m, mut p) = (0usize, 0usize);
    unsafe {
        assert_eq!(cobras_geometry_num_sensors(g, &mut m), CobrasStatus::Ok);
        assert_eq!(cobras_geometry_num_subarrays(g, &mut p), CobrasStatus::Ok);
        cobras_geometry_free(g);
    }
    assert_eq!((m, p), (9, 3));
}

#[test]
fn malformed_geometry_reports_parse_error() {
    let text = CString::new("{not json").unwrap();
    let mut g = ptr::null_mut();
    let status = unsafe { cobras_geometry_from_json(text.as_ptr(), &mut g) };
    assert_eq!(status, CobrasStatus::ParseError);
    assert!(g.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = 0usize;
    let status = unsafe { cobras_geometry_num_sensors(ptr::null(), &mut out) };
    assert_eq!(status, CobrasStatus::NullPointer);
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { cobras_geometry_from_json(ptr::null(), &mut g) },
        CobrasStatus::NullPointer
    );
    unsafe {
        cobras_geometry_free(ptr::null_mut());
        cobras_estimate_free(ptr::null_mut());
        cobras_string_free(ptr::null_mut());
    }
}

#[test]
fn lambda_matches_library() {
    let g = geometry(ULA);
    let mut lam = 0.0;
    assert_eq!(unsafe { cobras_select_lambda(0.5, g, &mut lam) }, CobrasStatus::Ok);
    assert!((lam - 0.5 * (3.0 * 9f64.ln()).sqrt()).abs() < 1e-12);
    assert_eq!(
        unsafe { cobras_select_lambda(-1.0, g, &mut lam) },
        CobrasStatus::InvalidArgument
    );
    unsafe { cobras_geometry_free(g) };
}

#[test]
fn grid_estimate_through_c_abi() {
    let g = geometry(ULA);
    let (cov, m) = covariance(ULA, &[0.5, -0.2], 20.0);
    let mut lam = 0.0;
    unsafe { cobras_select_lambda(0.1, g, &mut lam) };
    let mut est = ptr::null_mut();
    let status = unsafe { cobras_estimate_grid(g, cov.as_ptr(), m, 200, 200, lam, 2, 1e-5, 1, &mut est) };
    assert_eq!(status, CobrasStatus::Ok, "{}", last_error());

    let mut l = 0usize;
    assert_eq!(unsafe { cobras_estimate_num_sources(est, &mut l) }, CobrasStatus::Ok);
    assert_eq!(l, 2);
    let mut freqs = vec![0.0; l];
    assert_eq!(
        unsafe { cobras_estimate_frequencies(est, freqs.as_mut_ptr(), l) },
        CobrasStatus::Ok
    );
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(wrap(freqs[0] + 0.2).abs() < 0.02, "{freqs:?}");
    assert!(wrap(freqs[1] - 0.5).abs() < 0.02, "{freqs:?}");

    let mut shifts = vec![0.0; 2 * 3 * l];
    assert_eq!(
        unsafe { cobras_estimate_shifts(est, shifts.as_mut_ptr(), shifts.len()) },
        CobrasStatus::Ok
    );
    assert_eq!(
        unsafe { cobras_estimate_shifts(est, shifts.as_mut_ptr(), 3) },
        CobrasStatus::InvalidArgument
    );

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cobras_estimate_to_json(est, &mut json) }, CobrasStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(value.is_object());
    unsafe {
        cobras_string_free(json);
        cobras_estimate_free(est);
        cobras_geometry_free(g);
    }
}

#[test]
fn gridless_estimate_through_c_abi() {
    let g = geometry(ULA);
    let (cov, m) = covariance(ULA, &[0.505, 0.205], 20.0);
    let mut lam = 0.0;
    unsafe { cobras_select_lambda(0.1, g, &mut lam) };
    let mut est = ptr::null_mut();
    let status = unsafe { cobras_estimate_gridless(g, cov.as_ptr(), m, 200, lam, 2, 0.0, 1, &mut est) };
    assert_eq!(status, CobrasStatus::Ok, "{}", last_error());
    let mut freqs = [0.0; 2];
    assert_eq!(
        unsafe { cobras_estimate_frequencies(est, freqs.as_mut_ptr(), 2) },
        CobrasStatus::Ok
    );
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(wrap(freqs[0] - 0.205).abs() < 0.01, "{freqs:?}");
    assert!(wrap(freqs[1] - 0.505).abs() < 0.01, "{freqs:?}");
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cobras_estimate_to_json(est, &mut json) }, CobrasStatus::Ok);
    unsafe {
        cobras_string_free(json);
        cobras_estimate_free(est);
        cobras_geometry_free(g);
    }
}

#[test]
fn gridless_without_common_baseline_is_not_applicable() {
    let json = r#"{"subarrays": [[0, 1, 2.000314159], [0, 1]], "displacements": [5]}"#;
    let g = geometry(json);
    let (cov, m) = covariance(json, &[0.3], 10.0);
    let mut est = ptr::null_mut();
    let status = unsafe { cobras_estimate_gridless(g, cov.as_ptr(), m, 200, 0.5, 1, 0.0, 1, &mut est) };
    assert_eq!(status, CobrasStatus::NotApplicable);
    assert!(est.is_null());
    unsafe { cobras_geometry_free(g) };
}

#[test]
fn non_hermitian_covariance_is_rejected() {
    let g = geometry(ULA);
    let mut cov = vec![0.0; 2 * 81];
    cov[2] = 1.0;
    let mut est = ptr::null_mut();
    let status = unsafe { cobras_estimate_grid(g, cov.as_ptr(), 9, 10, 50, 0.1, 1, 0.0, 0, &mut est) };
    assert_eq!(status, CobrasStatus::InvalidArgument);
    unsafe { cobras_geometry_free(g) };
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/cobras.h");
    for name in [
        "cobras_geometry_from_json",
        "cobras_geometry_free",
        "cobras_select_lambda",
        "cobras_estimate_grid",
        "cobras_estimate_gridless",
        "cobras_estimate_frequencies",
        "cobras_estimate_shifts",
        "cobras_estimate_to_json",
        "cobras_string_free",
        "cobras_last_error_message",
        "COBRAS_STATUS_NOT_APPLICABLE",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
