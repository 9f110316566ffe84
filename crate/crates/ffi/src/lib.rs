//! C ABI for loading zones and flows, running the gravity and radiation
//! models, scoring CPC and comparing histograms.
//!
//! Objects are opaque handles freed with their `*_free` function. Every
//! fallible call returns an [`FfStatus`]; on failure the message is kept per
//! thread and can be read with [`ff_last_error`]. Zone indices follow the row
//! order of the zones file.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use flowfair::fairness::{kl_divergence, FairnessError, ProbDist};
use flowfair::geodata::{load_flows, load_zones, save_flows, GeodataError};
use flowfair::metrics::{cpc, Pairs};
use flowfair::models::{fit_gravity, generate_gravity, generate_radiation, Deterrence, GravityParams};
use flowfair::{Error, FlowMatrix, Tessellation};
use libc::c_char;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    Metric = 6,
    Panic = 7,
}

/// Distance deterrence for the gravity model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfDeterrence {
    Power = 0,
    Exponential = 1,
}

/// Gravity parameters, `p(j|i) ~ pop_j^gamma * f(d_ij)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfGravityParams {
    pub gamma: f64,
    pub beta: f64,
    pub deterrence: FfDeterrence,
}

/// Opaque zone set.
pub struct FfTessellation(Tessellation);

/// Opaque sparse flow matrix.
pub struct FfFlowMatrix(FlowMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(FfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => FfStatus::Io,
            Error::Geodata(GeodataError::Io { .. }) => FfStatus::Io,
            Error::Geodata(_) | Error::Json(_) => FfStatus::Parse,
            Error::Model(_) | Error::Synth(_) => FfStatus::Model,
            Error::Metric(_) | Error::Fairness(_) => FfStatus::Metric,
        };
        Failure(status, e.to_string())
    }
}

fn fail<E: Into<Error>>(e: E) -> Failure {
    e.into().into()
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FfStatus::InvalidArgument, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> FfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FfStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure(FfStatus::NullPointer, "path is null".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn num_slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure(FfStatus::NullPointer, "array is null".into()));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(FfStatus::NullPointer, "handle is null".into()))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(FfStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a zones CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_tessellation_load(path: *const c_char, out: *mut *mut FfTessellation) -> FfStatus {
    guard(|| {
        let tess = load_zones(path_arg(path)?).map_err(fail)?;
        store(out, FfTessellation(tess))
    })
}

/// # Safety
/// `tess` must come from [`ff_tessellation_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ff_tessellation_free(tess: *mut FfTessellation) {
    if !tess.is_null() {
        drop(Box::from_raw(tess));
    }
}

/// Number of zones, 0 for null.
///
/// # Safety
/// `tess` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ff_tessellation_len(tess: *const FfTessellation) -> usize {
    tess.as_ref().map_or(0, |t| t.0.len())
}

/// Great-circle distance in km between zones `i` and `j`.
///
/// # Safety
/// `tess` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ff_tessellation_distance(tess: *const FfTessellation, i: usize, j: usize, out: *mut f64) -> FfStatus {
    guard(|| {
        let t = &deref(tess)?.0;
        if i >= t.len() || j >= t.len() || out.is_null() {
            return Err(invalid("zone index out of range or null output"));
        }
        *out = t.distance(i, j);
        Ok(())
    })
}

/// Loads a flows CSV against `tess`.
///
/// # Safety
/// `tess` must be a live handle, `path` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ff_flows_load(
    tess: *const FfTessellation,
    path: *const c_char,
    out: *mut *mut FfFlowMatrix,
) -> FfStatus {
    guard(|| {
        let flows = load_flows(path_arg(path)?, &deref(tess)?.0).map_err(fail)?;
        store(out, FfFlowMatrix(flows))
    })
}

/// Writes `flows` as CSV.
///
/// # Safety
/// Handles must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ff_flows_save(
    flows: *const FfFlowMatrix,
    tess: *const FfTessellation,
    path: *const c_char,
) -> FfStatus {
    guard(|| {
        save_flows(&deref(flows)?.0, &deref(tess)?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `flows` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ff_flows_free(flows: *mut FfFlowMatrix) {
    if !flows.is_null() {
        drop(Box::from_raw(flows));
    }
}

/// Sum of all flows, 0 for null.
///
/// # Safety
/// `flows` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ff_flows_total(flows: *const FfFlowMatrix) -> f64 {
    flows.as_ref().map_or(0.0, |f| f.0.total())
}

/// Flow from zone `origin` to zone `destination`; absent pairs are 0.
///
/// # Safety
/// `flows` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ff_flows_get(
    flows: *const FfFlowMatrix,
    origin: usize,
    destination: usize,
    out: *mut f64,
) -> FfStatus {
    guard(|| {
        let f = &deref(flows)?.0;
        if origin >= f.n_zones() || destination >= f.n_zones() || out.is_null() {
            return Err(invalid("zone index out of range or null output"));
        }
        *out = f.get(origin, destination);
        Ok(())
    })
}

/// Per-origin totals excluding self-flows, written to `out[0..n_zones]`.
///
/// # Safety
/// `flows` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_flows_outflows(flows: *const FfFlowMatrix, out: *mut f64, len: usize) -> FfStatus {
    guard(|| {
        let f = &deref(flows)?.0;
        if out.is_null() || len != f.n_zones() {
            return Err(invalid(format!("output must hold {} values", f.n_zones())));
        }
        let totals = flowfair::models::outflows(f);
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&totals);
        Ok(())
    })
}

fn deterrence(d: FfDeterrence) -> Deterrence {
    match d {
        FfDeterrence::Power => Deterrence::Power,
        FfDeterrence::Exponential => Deterrence::Exponential,
    }
}

/// Maximum-likelihood gravity fit of `gamma` and `beta`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ff_fit_gravity(
    flows: *const FfFlowMatrix,
    tess: *const FfTessellation,
    kind: FfDeterrence,
    out: *mut FfGravityParams,
) -> FfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FfStatus::NullPointer, "output pointer is null".into()));
        }
        let fit = fit_gravity(&deref(flows)?.0, &deref(tess)?.0, deterrence(kind)).map_err(fail)?;
        *out = FfGravityParams {
            gamma: fit.params.gamma,
            beta: fit.params.beta,
            deterrence: kind,
        };
        Ok(())
    })
}

/// Gravity flows for per-origin totals `outflows[0..len]`, `len` = zone count.
///
/// # Safety
/// `tess` must be live, `params` readable, `outflows` hold `len` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ff_generate_gravity(
    tess: *const FfTessellation,
    params: *const FfGravityParams,
    outflows: *const f64,
    len: usize,
    out: *mut *mut FfFlowMatrix,
) -> FfStatus {
    guard(|| {
        let p = deref(params)?;
        let params = GravityParams {
            gamma: p.gamma,
            beta: p.beta,
            deterrence: deterrence(p.deterrence),
        };
        let flows = generate_gravity(&params, &deref(tess)?.0, num_slice(outflows, len)?).map_err(fail)?;
        store(out, FfFlowMatrix(flows))
    })
}

/// Radiation flows for per-origin totals `outflows[0..len]`.
///
/// # Safety
/// As for [`ff_generate_gravity`].
#[no_mangle]
pub unsafe extern "C" fn ff_generate_radiation(
    tess: *const FfTessellation,
    outflows: *const f64,
    len: usize,
    out: *mut *mut FfFlowMatrix,
) -> FfStatus {
    guard(|| {
        let flows = generate_radiation(&deref(tess)?.0, num_slice(outflows, len)?).map_err(fail)?;
        store(out, FfFlowMatrix(flows))
    })
}

/// Common part of commuters between generated and real flows. With
/// `off_diagonal` nonzero, self-flows are left out.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ff_cpc(
    generated: *const FfFlowMatrix,
    real: *const FfFlowMatrix,
    off_diagonal: i32,
    out: *mut f64,
) -> FfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FfStatus::NullPointer, "output pointer is null".into()));
        }
        let pairs = if off_diagonal != 0 { Pairs::OffDiagonal } else { Pairs::All };
        *out = cpc(&deref(generated)?.0, &deref(real)?.0, pairs).map_err(fail)?;
        Ok(())
    })
}

/// KL divergence in nats between two strictly positive mass vectors of length `len`,
/// each summing to one.
///
/// # Safety
/// `p` and `q` must hold `len` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_kl_divergence(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> FfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FfStatus::NullPointer, "output pointer is null".into()));
        }
        let dist = |m: &[f64]| ProbDist::from_masses(m.to_vec()).map_err(|e: FairnessError| invalid(e.to_string()));
        let p = dist(num_slice(p, len)?)?;
        let q = dist(num_slice(q, len)?)?;
        *out = kl_divergence(&p, &q).map_err(fail)?;
        Ok(())
    })
}
