//! C ABI over the pnpgrid toolkit.
//!
//! Grids and gain sets live behind opaque handles created by the `*_parse`
//! and `pnpgrid_synthesize` functions and released with the matching
//! `*_free`. Every fallible call returns a [`PnpgridStatus`]; the message of
//! the last failure on the calling thread is available through
//! [`pnpgrid_last_error`]. Strings returned through out-pointers are owned by
//! the caller and released with [`pnpgrid_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pnpgrid::cli::{certify, metrics_file, plug_check, PlugTarget};
use pnpgrid::design::{design_all, resolve_sets, synthesize_all, DesignOptions};
use pnpgrid::io::{self, StoredController};
use pnpgrid::pnp::{PnpOptions, Policy};
use pnpgrid::sim::{simulate, SimConfig, SimError};
use pnpgrid::synthesis::{LmiWeights, SynthesisOptions};
use pnpgrid::{DguId, Error, GridGraph};

/// Result of a call. The numeric values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnpgridStatus {
    Ok = 0,
    /// A certificate does not hold, a request is denied or a synthesis is infeasible.
    Denied = 2,
    InvalidInput = 3,
    Numerical = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

/// Microgrid topology and parameters.
pub struct PnpgridGrid(GridGraph);

/// Stored controllers keyed by DGU.
pub struct PnpgridGains(BTreeMap<DguId, StoredController>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(PnpgridStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(match pnpgrid::cli::exit_code(&e) {
            2 => PnpgridStatus::Denied,
            4 => PnpgridStatus::Numerical,
            _ => PnpgridStatus::InvalidInput,
        })
    }
}

fn fail(status: PnpgridStatus, msg: &str) -> Fail {
    set_error(msg);
    Fail(status)
}

/// Runs `f`, mapping failures and panics to a status.
fn guard(f: impl FnOnce() -> Result<PnpgridStatus, Fail>) -> PnpgridStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic");
            PnpgridStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(PnpgridStatus::NullPointer, &format!("{what} is null")));
    }
    // SAFETY: the caller passes a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| {
        fail(
            PnpgridStatus::InvalidUtf8,
            &format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }
        .ok_or_else(|| fail(PnpgridStatus::NullPointer, &format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(fail(PnpgridStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(())
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(PnpgridStatus::Numerical, "output contains a NUL byte"))
}

/// Writes `s` to `out` unless `out` is null.
unsafe fn put_string(
    out: *mut *mut c_char,
    s: impl FnOnce() -> pnpgrid::Result<String>,
) -> Result<(), Fail> {
    if !out.is_null() {
        let p = c_string(s()?)?;
        // SAFETY: `out` is non-null and writable per the caller contract.
        unsafe { *out = p };
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pnpgrid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` was produced by `CString::into_raw`.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parses a grid description in TOML.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_grid_parse(
    toml: *const c_char,
    out: *mut *mut PnpgridGrid,
) -> PnpgridStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let g = io::parse_grid(unsafe { text(toml, "toml") }?)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(PnpgridGrid(g))) };
        Ok(PnpgridStatus::Ok)
    })
}

/// Number of DGUs of a grid, 0 for null.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_grid_dgu_count(grid: *const PnpgridGrid) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { grid.as_ref() }.map_or(0, |g| g.0.len())
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_grid_free(grid: *mut PnpgridGrid) {
    if !grid.is_null() {
        // SAFETY: the handle was created by `Box::into_raw`.
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Parses a gains file.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_gains_parse(
    toml: *const c_char,
    out: *mut *mut PnpgridGains,
) -> PnpgridStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let k = io::parse_gains(unsafe { text(toml, "toml") }?)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(PnpgridGains(k))) };
        Ok(PnpgridStatus::Ok)
    })
}

/// Serializes a gain set; `timestamp` adds the generation time to the metadata.
///
/// # Safety
/// `gains` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_gains_to_toml(
    gains: *const PnpgridGains,
    timestamp: bool,
    out: *mut *mut c_char,
) -> PnpgridStatus {
    guard(|| {
        let k = unsafe { handle(gains, "gains") }?;
        out_ptr(out, "out")?;
        unsafe { put_string(out, || io::gains_to_toml(&k.0, timestamp)) }?;
        Ok(PnpgridStatus::Ok)
    })
}

/// Number of DGUs with stored gains, 0 for null.
///
/// # Safety
/// `gains` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_gains_count(gains: *const PnpgridGains) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { gains.as_ref() }.map_or(0, |k| k.0.len())
}

/// Releases a gain set. Null is ignored.
///
/// # Safety
/// `gains` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_gains_free(gains: *mut PnpgridGains) {
    if !gains.is_null() {
        // SAFETY: the handle was created by `Box::into_raw`.
        drop(unsafe { Box::from_raw(gains) });
    }
}

/// Synthesizes controllers for every DGU of `grid`.
///
/// `eta` fixes `P(1,1)` when positive and selects the default otherwise.
/// `prefilter_hz` adds a reference prefilter when positive.
///
/// # Safety
/// `grid` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_synthesize(
    grid: *const PnpgridGrid,
    eta: f64,
    prefilter_hz: f64,
    compensator: bool,
    out: *mut *mut PnpgridGains,
) -> PnpgridStatus {
    guard(|| {
        let g = unsafe { handle(grid, "grid") }?;
        out_ptr(out, "out")?;
        let opts = SynthesisOptions {
            eta: (eta > 0.0).then_some(eta),
            ..Default::default()
        };
        opts.validate()?;
        let k = synthesize_all(&g.0, &LmiWeights::default(), &opts)?;
        let d = DesignOptions {
            prefilter_hz: (prefilter_hz > 0.0).then_some(prefilter_hz),
            compensator,
            ..Default::default()
        };
        let stored = design_all(&g.0, &k, &d)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(PnpgridGains(stored))) };
        Ok(PnpgridStatus::Ok)
    })
}

/// Checks the per-DGU and global certificates of `gains` on `grid`.
///
/// Returns [`PnpgridStatus::Denied`] when a certificate does not hold. The
/// report is written to `report` unless it is null.
///
/// # Safety
/// `grid` and `gains` must be live handles; `report` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_certify(
    grid: *const PnpgridGrid,
    gains: *const PnpgridGains,
    report: *mut *mut c_char,
) -> PnpgridStatus {
    guard(|| {
        let g = unsafe { handle(grid, "grid") }?;
        let k = unsafe { handle(gains, "gains") }?;
        let plain: BTreeMap<_, _> =
            k.0.iter()
                .map(|(id, s)| (*id, s.controller.gains.clone()))
                .collect();
        if let Some(id) = g.0.ids().into_iter().find(|id| !plain.contains_key(id)) {
            return Err(fail(
                PnpgridStatus::InvalidInput,
                &format!("gains have no entry for DGU {id}"),
            ));
        }
        let r = certify(&g.0, &plain, &SynthesisOptions::default())?;
        unsafe { put_string(report, || io::report_to_toml(&r)) }?;
        if !r.valid {
            set_error("certificate does not hold");
            return Ok(PnpgridStatus::Denied);
        }
        Ok(PnpgridStatus::Ok)
    })
}

unsafe fn plug(
    grid: *const PnpgridGrid,
    gains: *const PnpgridGains,
    target: PlugTarget,
    retune: bool,
    decision: *mut *mut c_char,
    out: *mut *mut PnpgridGains,
) -> PnpgridStatus {
    guard(|| {
        let g = unsafe { handle(grid, "grid") }?;
        let k = unsafe { handle(gains, "gains") }?;
        let policy = if retune {
            Policy::Retune
        } else {
            Policy::KeepIfValid
        };
        let (d, updated) = plug_check(&g.0, &k.0, target, policy, &PnpOptions::default())?;
        unsafe { put_string(decision, || io::decision_to_toml(&d)) }?;
        let Some(updated) = updated else {
            let reasons: Vec<&str> = d.denials.iter().map(|x| x.reason.as_str()).collect();
            set_error(format!("request denied: {}", reasons.join("; ")));
            return Ok(PnpgridStatus::Denied);
        };
        if !out.is_null() {
            // SAFETY: `out` is non-null and writable per the caller contract.
            unsafe { *out = Box::into_raw(Box::new(PnpgridGains(updated))) };
        }
        Ok(PnpgridStatus::Ok)
    })
}

/// Decides whether DGU `id` of `grid` may join the others.
///
/// `gains` covers every DGU except `id`. `retune` resynthesizes the
/// neighbors instead of keeping gains that remain valid. The decision is
/// written to `decision` and, when allowed, the updated gains to `out`;
/// either may be null.
///
/// # Safety
/// `grid` and `gains` must be live handles; out-pointers must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_plug_in(
    grid: *const PnpgridGrid,
    gains: *const PnpgridGains,
    id: u32,
    retune: bool,
    decision: *mut *mut c_char,
    out: *mut *mut PnpgridGains,
) -> PnpgridStatus {
    unsafe { plug(grid, gains, PlugTarget::PlugIn(id), retune, decision, out) }
}

/// Decides whether DGU `id` may leave `grid`. Arguments as in [`pnpgrid_plug_in`].
///
/// # Safety
/// `grid` and `gains` must be live handles; out-pointers must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_unplug(
    grid: *const PnpgridGrid,
    gains: *const PnpgridGains,
    id: u32,
    retune: bool,
    decision: *mut *mut c_char,
    out: *mut *mut PnpgridGains,
) -> PnpgridStatus {
    unsafe { plug(grid, gains, PlugTarget::Unplug(id), retune, decision, out) }
}

/// Simulates a scenario given as TOML text.
///
/// `gains` backs the controller sets sourced from a gains file and may be
/// null when none is. The trace CSV and the metrics TOML are written to
/// `trace` and `metrics` unless null. An aborted run returns
/// [`PnpgridStatus::Numerical`] together with the partial trace.
///
/// # Safety
/// `grid` must be a live handle, `scenario` a NUL-terminated string,
/// `gains` null or live and the out-pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn pnpgrid_simulate(
    grid: *const PnpgridGrid,
    scenario: *const c_char,
    gains: *const PnpgridGains,
    trace: *mut *mut c_char,
    metrics: *mut *mut c_char,
) -> PnpgridStatus {
    guard(|| {
        let g = unsafe { handle(grid, "grid") }?;
        let spec = io::parse_scenario(unsafe { text(scenario, "scenario") }?)?;
        // SAFETY: forwarded caller contract.
        let stored = unsafe { gains.as_ref() }.map(|k| &k.0);
        let sets = resolve_sets(
            &g.0,
            &spec,
            stored,
            std::path::Path::new("."),
            &LmiWeights::default(),
            &SynthesisOptions::default(),
        )?;
        let events = &spec.scenario.events;
        let (tr, status) = match simulate(&g.0, &sets, &spec.scenario, &SimConfig::default()) {
            Ok(tr) => (tr, PnpgridStatus::Ok),
            Err(SimError::Failure(f)) => {
                set_error(f.to_string());
                (*f.trace, PnpgridStatus::Numerical)
            }
            Err(e) => return Err(Error::from(e).into()),
        };
        let completed = status == PnpgridStatus::Ok;
        unsafe {
            put_string(trace, || {
                let mut buf = Vec::new();
                tr.write_csv(&mut buf)?;
                String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
            })
        }?;
        unsafe {
            put_string(metrics, || {
                io::report_to_toml(&metrics_file(&tr, events, completed))
            })
        }?;
        Ok(status)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_match_the_command_line() {
        assert_eq!(PnpgridStatus::Denied as i32, pnpgrid::cli::EXIT_DENIED);
        assert_eq!(PnpgridStatus::InvalidInput as i32, pnpgrid::cli::EXIT_INPUT);
        assert_eq!(
            PnpgridStatus::Numerical as i32,
            pnpgrid::cli::EXIT_NUMERICAL
        );
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut g = ptr::null_mut();
        assert_eq!(
            unsafe { pnpgrid_grid_parse(ptr::null(), &mut g) },
            PnpgridStatus::NullPointer
        );
        assert!(g.is_null());
        assert!(!pnpgrid_last_error().is_null());
    }
}
