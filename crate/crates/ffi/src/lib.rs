//! C interface to the `cobras` estimators.
//!
//! Geometries and estimates are opaque handles released with their `_free`
//! functions. Every fallible call returns a [`CobrasStatus`]; the message of
//! the most recent failure on the calling thread is available from
//! [`cobras_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cobras::array_model::{ArrayGeometry, FrequencyGrid};
use cobras::cobras_grid::{estimate_grid, EstimatorOptions, GridData, GridEstimate};
use cobras::gridless::{estimate_gridless, GridlessEstimate};
use cobras::signal_sim::{select_lambda, trial_rng, SampleCovariance};
use cobras::{CMatrix, CVector, CobrasError, C64};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobrasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    SolverFailed = 4,
    NotApplicable = 5,
    Panic = 6,
}

/// Array geometry handle.
pub struct CobrasGeometry {
    inner: ArrayGeometry,
}

enum EstimateKind {
    Grid(GridEstimate),
    Gridless(Box<GridlessEstimate>, ArrayGeometry),
}

/// Estimate handle (grid or gridless).
pub struct CobrasEstimate {
    kind: EstimateKind,
}

impl CobrasEstimate {
    fn frequencies(&self) -> &[f64] {
        match &self.kind {
            EstimateKind::Grid(e) => &e.frequencies,
            EstimateKind::Gridless(e, _) => &e.frequencies,
        }
    }

    fn shifts(&self) -> &[CVector] {
        match &self.kind {
            EstimateKind::Grid(e) => &e.shifts,
            EstimateKind::Gridless(e, _) => &e.shifts,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &CobrasError) -> CobrasStatus {
    match err {
        CobrasError::Domain(_) | CobrasError::InvalidInput(_) | CobrasError::Io(_) => CobrasStatus::InvalidArgument,
        CobrasError::Json(_) => CobrasStatus::ParseError,
        CobrasError::NotApplicable(_) => CobrasStatus::NotApplicable,
        CobrasError::Solver { .. }
        | CobrasError::DegenerateShift(_)
        | CobrasError::Numerical(_)
        | CobrasError::Aborted { .. } => CobrasStatus::SolverFailed,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (CobrasStatus, String)>) -> CobrasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CobrasStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CobrasStatus::Panic
        }
    }
}

fn lift<T>(r: cobras::Result<T>) -> Result<T, (CobrasStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CobrasStatus, String) {
    (CobrasStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> (CobrasStatus, String) {
    (CobrasStatus::InvalidArgument, message.into())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cobras_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a geometry document
/// `{"subarrays": [[...], ...], "displacements": [...], "offsets": [[re, im], ...]}`
/// with one displacement and one offset per subarray after the first.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_geometry_from_json(json: *const c_char, out: *mut *mut CobrasGeometry) -> CobrasStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (CobrasStatus::ParseError, e.to_string()))?;
        let inner: ArrayGeometry = serde_json::from_str(text).map_err(|e| (CobrasStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(CobrasGeometry { inner }));
        Ok(())
    })
}

/// # Safety
/// `geom` must be null or a handle from [`cobras_geometry_from_json`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cobras_geometry_free(geom: *mut CobrasGeometry) {
    if !geom.is_null() {
        drop(Box::from_raw(geom));
    }
}

/// # Safety
/// `geom` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_geometry_num_sensors(geom: *const CobrasGeometry, out: *mut usize) -> CobrasStatus {
    guard(|| {
        let g = geom.as_ref().ok_or_else(|| null("geometry"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = g.inner.num_sensors();
        Ok(())
    })
}

/// # Safety
/// `geom` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_geometry_num_subarrays(geom: *const CobrasGeometry, out: *mut usize) -> CobrasStatus {
    guard(|| {
        let g = geom.as_ref().ok_or_else(|| null("geometry"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = g.inner.num_subarrays();
        Ok(())
    })
}

/// Regularisation heuristic for noise standard deviation `sigma`.
///
/// # Safety
/// `geom` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_select_lambda(sigma: f64, geom: *const CobrasGeometry, out: *mut f64) -> CobrasStatus {
    guard(|| {
        let g = geom.as_ref().ok_or_else(|| null("geometry"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be non-negative, got {sigma}")));
        }
        *out = select_lambda(sigma, &g.inner);
        Ok(())
    })
}

/// Reads an `M x M` covariance stored row-major as interleaved `re, im`.
unsafe fn read_covariance(
    data: *const f64,
    m: usize,
    snapshots: usize,
) -> Result<SampleCovariance, (CobrasStatus, String)> {
    if data.is_null() {
        return Err(null("covariance"));
    }
    let raw = std::slice::from_raw_parts(data, 2 * m * m);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(invalid("covariance has non-finite entries"));
    }
    let r = CMatrix::from_fn(m, m, |i, j| C64::new(raw[2 * (i * m + j)], raw[2 * (i * m + j) + 1]));
    if (&r - r.adjoint()).norm() > 1e-9 * (1.0 + r.norm()) {
        return Err(invalid("covariance is not Hermitian"));
    }
    Ok(SampleCovariance {
        data: (&r + r.adjoint()).scale(0.5),
        snapshots,
    })
}

fn options(tolerance: f64) -> Result<EstimatorOptions, (CobrasStatus, String)> {
    if tolerance.is_nan() || tolerance.is_infinite() {
        return Err(invalid("tolerance must be finite"));
    }
    Ok(if tolerance > 0.0 {
        EstimatorOptions::with_tolerance(tolerance)
    } else {
        EstimatorOptions::default()
    })
}

/// Grid-based estimate from a sample covariance (`m x m`, row-major,
/// interleaved real and imaginary parts) on a uniform grid of `grid_size`
/// points. A non-positive `tolerance` selects the library default (1e-7);
/// 1e-5 is usually enough. `seed` drives the padding of missing peaks.
///
/// # Safety
/// `geom` must be a live geometry handle, `covariance` must point to
/// `2 * m * m` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_grid(
    geom: *const CobrasGeometry,
    covariance: *const f64,
    m: usize,
    snapshots: usize,
    grid_size: usize,
    lambda: f64,
    num_sources: usize,
    tolerance: f64,
    seed: u64,
    out: *mut *mut CobrasEstimate,
) -> CobrasStatus {
    guard(|| {
        let g = geom.as_ref().ok_or_else(|| null("geometry"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = read_covariance(covariance, m, snapshots)?;
        let grid = lift(FrequencyGrid::uniform(grid_size))?;
        let mut rng = trial_rng(seed, 0);
        let est = lift(estimate_grid(
            &GridData::Covariance(r),
            &g.inner,
            &grid,
            lambda,
            num_sources,
            &options(tolerance)?,
            &mut rng,
        ))?;
        *out = Box::into_raw(Box::new(CobrasEstimate {
            kind: EstimateKind::Grid(est),
        }));
        Ok(())
    })
}

/// Gridless estimate from a sample covariance; see [`cobras_estimate_grid`]
/// for the layout. Fails with `NOT_APPLICABLE` when the subarrays do not
/// share a common baseline.
///
/// # Safety
/// Same requirements as [`cobras_estimate_grid`].
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_gridless(
    geom: *const CobrasGeometry,
    covariance: *const f64,
    m: usize,
    snapshots: usize,
    lambda: f64,
    num_sources: usize,
    tolerance: f64,
    seed: u64,
    out: *mut *mut CobrasEstimate,
) -> CobrasStatus {
    guard(|| {
        let g = geom.as_ref().ok_or_else(|| null("geometry"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = read_covariance(covariance, m, snapshots)?;
        let mut rng = trial_rng(seed, 0);
        let est = lift(estimate_gridless(
            &r,
            &g.inner,
            lambda,
            num_sources,
            &options(tolerance)?,
            &mut rng,
        ))?;
        *out = Box::into_raw(Box::new(CobrasEstimate {
            kind: EstimateKind::Gridless(Box::new(est), g.inner.clone()),
        }));
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_free(est: *mut CobrasEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// # Safety
/// `est` must be a live estimate handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_num_sources(est: *const CobrasEstimate, out: *mut usize) -> CobrasStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = e.frequencies().len();
        Ok(())
    })
}

/// Copies the estimated frequencies into `buf`, which must hold at least
/// as many entries as [`cobras_estimate_num_sources`] reports.
///
/// # Safety
/// `est` must be a live estimate handle and `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_frequencies(
    est: *const CobrasEstimate,
    buf: *mut f64,
    len: usize,
) -> CobrasStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let f = e.frequencies();
        if len < f.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", f.len())));
        }
        std::slice::from_raw_parts_mut(buf, f.len()).copy_from_slice(f);
        Ok(())
    })
}

/// Copies the shift vectors (source-major, interleaved `re, im`, `P`
/// entries per source) into `buf` of `len` doubles.
///
/// # Safety
/// `est` must be a live estimate handle and `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_shifts(est: *const CobrasEstimate, buf: *mut f64, len: usize) -> CobrasStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let flat: Vec<f64> = e
            .shifts()
            .iter()
            .flat_map(|s| s.iter().flat_map(|c| [c.re, c.im]))
            .collect();
        if len < flat.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", flat.len())));
        }
        std::slice::from_raw_parts_mut(buf, flat.len()).copy_from_slice(&flat);
        Ok(())
    })
}

/// JSON document describing the estimate; release with
/// [`cobras_string_free`].
///
/// # Safety
/// `est` must be a live estimate handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobras_estimate_to_json(est: *const CobrasEstimate, out: *mut *mut c_char) -> CobrasStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = match &e.kind {
            EstimateKind::Grid(g) => lift(g.to_json())?,
            EstimateKind::Gridless(g, geom) => lift(g.to_json(geom))?,
        };
        *out = CString::new(text).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn cobras_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
