//! C ABI over the `netstab` toolkit.
//!
//! Models and controllers are opaque handles created by `netstab_*_new`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`NetstabStatus`]; on failure the message is available from
//! [`netstab_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as [`NetstabStatus::Panic`].
//!
//! Arrays are passed as pointer plus length. Lengths are checked against the
//! model before any element is read.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use netstab::analysis::{analyze, build_core, AnalysisOptions, GammaOptions};
use netstab::controller::{synthesize, ControllerConfig, ControllerFile};
use netstab::diagram::Diagrams;
use netstab::dynamics::Model;
use netstab::equilibrium::solve_uep;
use netstab::network::NetworkSpec;
use netstab::{presets, NetError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetstabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    Cyclic = 4,
    Infeasible = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// Network, diagrams and junction bookkeeping.
pub struct NetstabModel {
    model: Model,
}

/// Saturated feedback law.
pub struct NetstabController {
    config: ControllerConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &NetError) -> NetstabStatus {
    match e {
        NetError::Dimension(_) => NetstabStatus::Dimension,
        NetError::Acyclicity { .. } => NetstabStatus::Cyclic,
        NetError::Domain(_) | NetError::Misuse(_) | NetError::Json(_) => {
            NetstabStatus::InvalidInput
        }
        NetError::Numerical { .. } => NetstabStatus::Numerical,
        NetError::InfeasibleInflow { .. }
        | NetError::NonUniformEquilibrium { .. }
        | NetError::Infeasible(_)
        | NetError::H3Violation(_)
        | NetError::Structural(_) => NetstabStatus::Infeasible,
        NetError::Io { .. } | NetError::Csv(_) => NetstabStatus::Io,
    }
}

/// Failure inside a wrapped call.
struct Fail(NetstabStatus, String);

impl From<NetError> for Fail {
    fn from(e: NetError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NetstabStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, records its error message and converts panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NetstabStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NetstabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NetstabStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be NULL or point to `len` readable `f64`s.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and the caller guarantees `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// # Safety
/// `p` must be NULL or point to `len` writable `f64`s.
unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and the caller guarantees `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

/// # Safety
/// `p` must be NULL or a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated by contract.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| {
        Fail(
            NetstabStatus::InvalidInput,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// # Safety
/// `p` must be NULL or a live handle from this library.
unsafe fn model_ref<'a>(p: *const NetstabModel) -> Result<&'a Model, Fail> {
    // SAFETY: the caller passes NULL or a live handle.
    unsafe { p.as_ref() }
        .map(|m| &m.model)
        .ok_or_else(|| null("model"))
}

fn check_len(len: usize, expected: usize, what: &str) -> Result<(), Fail> {
    if len == expected {
        Ok(())
    } else {
        Err(Fail(
            NetstabStatus::Dimension,
            format!("{what} has length {len}, expected {expected}"),
        ))
    }
}

/// # Safety
/// `out` must be NULL or writable.
unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: `out` is non-null and writable by contract.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Creates the built-in eight-cell freeway model.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn netstab_model_freeway(out: *mut *mut NetstabModel) -> NetstabStatus {
    guard(|| {
        let model = Model::new(presets::freeway_network(), presets::freeway_diagrams())?;
        // SAFETY: `out` is checked by `put`; writability is the caller contract.
        unsafe { put(out, NetstabModel { model }) }
    })
}

/// Creates a model from network and diagram JSON documents.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netstab_model_from_json(
    network_json: *const c_char,
    diagrams_json: *const c_char,
    out: *mut *mut NetstabModel,
) -> NetstabStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let net = unsafe { text(network_json, "network JSON") }?;
        // SAFETY: forwarded caller contract.
        let dg = unsafe { text(diagrams_json, "diagrams JSON") }?;
        let spec = NetworkSpec::from_json_str(net)?;
        let diagrams = Diagrams::from_json_str(dg)?;
        diagrams.check_matches(&spec)?;
        // SAFETY: `out` is checked by `put`; writability is the caller contract.
        unsafe {
            put(
                out,
                NetstabModel {
                    model: Model::new(spec, diagrams)?,
                },
            )
        }
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn netstab_model_free(model: *mut NetstabModel) {
    if !model.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of cells, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn netstab_model_cell_count(model: *const NetstabModel) -> usize {
    // SAFETY: the caller passes NULL or a live handle.
    unsafe { model.as_ref() }.map_or(0, |m| m.model.n())
}

/// Length of the disturbance vector, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn netstab_model_disturbance_dim(model: *const NetstabModel) -> usize {
    // SAFETY: the caller passes NULL or a live handle.
    unsafe { model.as_ref() }.map_or(0, |m| m.model.diagrams().domain.dim())
}

/// One step of the network: writes `x+` into `x_next`.
///
/// # Safety
/// `x`, `v` and `x_next` must hold `n` elements, `d` must hold `d_len`.
#[no_mangle]
pub unsafe extern "C" fn netstab_step(
    model: *const NetstabModel,
    x: *const f64,
    v: *const f64,
    n: usize,
    d: *const f64,
    d_len: usize,
    x_next: *mut f64,
) -> NetstabStatus {
    guard(|| {
        // SAFETY: forwarded caller contract for every pointer below.
        let m = unsafe { model_ref(model) }?;
        check_len(n, m.n(), "state")?;
        check_len(d_len, m.diagrams().domain.dim(), "disturbance")?;
        let (x, v, d, out) = unsafe {
            (
                slice(x, n, "x")?,
                slice(v, n, "v")?,
                slice(d, d_len, "d")?,
                slice_mut(x_next, n, "x_next")?,
            )
        };
        let (xn, _) = m.step(x, v, d)?;
        out.copy_from_slice(&xn);
        Ok(())
    })
}

/// Solves for the uncongested equilibrium of inflow `vstar`; writes the
/// densities into `xstar` and the flows into `flows` (may be NULL).
///
/// # Safety
/// `vstar` and `xstar` must hold `n` elements, `flows` NULL or `n`.
#[no_mangle]
pub unsafe extern "C" fn netstab_solve_uep(
    model: *const NetstabModel,
    vstar: *const f64,
    n: usize,
    xstar: *mut f64,
    flows: *mut f64,
) -> NetstabStatus {
    guard(|| {
        // SAFETY: forwarded caller contract for every pointer below.
        let m = unsafe { model_ref(model) }?;
        check_len(n, m.n(), "vstar")?;
        let v = unsafe { slice(vstar, n, "vstar") }?;
        let out = unsafe { slice_mut(xstar, n, "xstar") }?;
        let pair = solve_uep(m, v)?;
        out.copy_from_slice(&pair.xstar);
        if !flows.is_null() {
            let f = unsafe { slice_mut(flows, n, "flows") }?;
            f.copy_from_slice(&pair.flows);
        }
        Ok(())
    })
}

/// Creates a controller from explicit parameters; `k` is row-major `n x n`.
///
/// # Safety
/// `xstar`, `vstar`, `b` must hold `n` elements, `k` must hold `n * n`.
#[no_mangle]
pub unsafe extern "C" fn netstab_controller_new(
    xstar: *const f64,
    vstar: *const f64,
    b: *const f64,
    k: *const f64,
    n: usize,
    tau: f64,
    out: *mut *mut NetstabController,
) -> NetstabStatus {
    guard(|| {
        let size = n
            .checked_mul(n)
            .ok_or_else(|| Fail(NetstabStatus::Dimension, "n * n overflows".into()))?;
        // SAFETY: forwarded caller contract for every pointer below.
        let (xs, vs, bs, ks) = unsafe {
            (
                slice(xstar, n, "xstar")?,
                slice(vstar, n, "vstar")?,
                slice(b, n, "b")?,
                slice(k, size, "K")?,
            )
        };
        let file = ControllerFile {
            xstar: xs.to_vec(),
            vstar: vs.to_vec(),
            b: bs.to_vec(),
            k: ks.chunks(n.max(1)).map(<[f64]>::to_vec).collect(),
            tau,
        };
        let config = ControllerConfig::from_file(file)?;
        // SAFETY: `out` is checked by `put`; writability is the caller contract.
        unsafe { put(out, NetstabController { config }) }
    })
}

/// The ramp-metering controller of the built-in freeway experiment.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netstab_controller_experiment(
    out: *mut *mut NetstabController,
) -> NetstabStatus {
    guard(|| {
        // SAFETY: `out` is checked by `put`; writability is the caller contract.
        unsafe {
            put(
                out,
                NetstabController {
                    config: ControllerConfig::freeway_experiment(),
                },
            )
        }
    })
}

/// Derives the controller guaranteed by the certificate for inflow `vstar`.
///
/// # Safety
/// `vstar` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netstab_controller_synthesize(
    model: *const NetstabModel,
    vstar: *const f64,
    n: usize,
    tau: f64,
    out: *mut *mut NetstabController,
) -> NetstabStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let m = unsafe { model_ref(model) }?;
        check_len(n, m.n(), "vstar")?;
        let v = unsafe { slice(vstar, n, "vstar") }?;
        let eq = solve_uep(m, v)?;
        let core = build_core(m, &eq, GammaOptions::default())?;
        let config = synthesize(&eq, &core, tau)?;
        // SAFETY: `out` is checked by `put`; writability is the caller contract.
        unsafe { put(out, NetstabController { config }) }
    })
}

/// Releases a controller; NULL is ignored.
///
/// # Safety
/// `controller` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn netstab_controller_free(controller: *mut NetstabController) {
    if !controller.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(controller) });
    }
}

/// Evaluates the feedback law at `x`, writing the inflow into `v`.
///
/// # Safety
/// `x` and `v` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn netstab_control_law(
    controller: *const NetstabController,
    x: *const f64,
    n: usize,
    v: *mut f64,
) -> NetstabStatus {
    guard(|| {
        // SAFETY: forwarded caller contract for every pointer below.
        let c = unsafe { controller.as_ref() }.ok_or_else(|| null("controller"))?;
        check_len(n, c.config.n(), "state")?;
        let xs = unsafe { slice(x, n, "x") }?;
        let out = unsafe { slice_mut(v, n, "v") }?;
        out.copy_from_slice(&c.config.control_law(xs));
        Ok(())
    })
}

/// Computes the stability certificate as a JSON string written to
/// `out_json`; release it with [`netstab_string_free`]. `controller` may be
/// NULL to synthesize one. `*passed` (if non-NULL) receives the verdict.
///
/// # Safety
/// `vstar` must hold `n` elements; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netstab_analyze_json(
    model: *const NetstabModel,
    vstar: *const f64,
    n: usize,
    controller: *const NetstabController,
    seed: u64,
    passed: *mut bool,
    out_json: *mut *mut c_char,
) -> NetstabStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("output pointer"));
        }
        // SAFETY: forwarded caller contract for every pointer below.
        let m = unsafe { model_ref(model) }?;
        check_len(n, m.n(), "vstar")?;
        let v = unsafe { slice(vstar, n, "vstar") }?;
        let ctrl = unsafe { controller.as_ref() }.map(|c| &c.config);
        let opts = AnalysisOptions {
            seed,
            ..AnalysisOptions::default()
        };
        let cert = analyze(m, v, ctrl, opts)?;
        let json = serde_json::to_string(&cert).map_err(NetError::from)?;
        let c = CString::new(json)
            .map_err(|_| Fail(NetstabStatus::Numerical, "JSON contains NUL".into()))?;
        if !passed.is_null() {
            unsafe { *passed = cert.passed() };
        }
        unsafe { *out_json = c.into_raw() };
        Ok(())
    })
}

/// Releases a string returned by this library; NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn netstab_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` came from CString::into_raw and is freed once.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn netstab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
