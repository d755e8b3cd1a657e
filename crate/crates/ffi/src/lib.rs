//! C ABI over the reduced trace map and the online reduced iteration.
//!
//! Every function returns an [`RsStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`romschwarz_last_error`]. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use romschwarz::config::RunConfig;
use romschwarz::fem::omega2_solve_count;
use romschwarz::geometry::InterfaceId;
use romschwarz::problem::PipeProblem;
use romschwarz::reduced::{run_reduced_schwarz, ReducedSetup, RomTraceMap};
use romschwarz::rom::{load_rom, RomArtifact};
use romschwarz::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Incompatible = 5,
    Numerical = 6,
    Panic = 7,
}

/// Trained reduced trace map.
pub struct RsRom {
    rom: RomArtifact,
}

/// Online solver: an artifact plus the problem it was checked against.
pub struct RsOnline {
    rom: RomArtifact,
    problem: PipeProblem,
    options: romschwarz::schwarz::SchwarzOptions,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RsOnlineResult {
    pub sweeps: usize,
    pub relerr_omega1: f64,
    pub relerr_omega3: f64,
    pub converged: bool,
    pub extrapolated: bool,
    /// Middle-subdomain linear solves performed; zero by construction.
    pub omega2_solves: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RsStatus {
    match err {
        Error::Io(_) => RsStatus::Io,
        Error::Parse(_) | Error::UnsupportedVersion { .. } | Error::Config(_) => RsStatus::Parse,
        Error::Compatibility(_) | Error::Dimension { .. } => RsStatus::Incompatible,
        Error::Parameter(_) | Error::Geometry(_) | Error::Coefficient(_) => RsStatus::InvalidArgument,
        _ => RsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RsStatus, String)>) -> RsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RsStatus::Panic
        }
    }
}

fn lift<T>(r: romschwarz::Result<T>) -> Result<T, (RsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RsStatus, String) {
    (RsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, (RsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| (RsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn romschwarz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn romschwarz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an artifact written by `romschwarz offline`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_rom_load(path: *const c_char, out: *mut *mut RsRom) -> RsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let rom = lift(load_rom(path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(RsRom { rom }));
        Ok(())
    })
}

/// # Safety
/// `rom` must come from [`romschwarz_rom_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_rom_free(rom: *mut RsRom) {
    if !rom.is_null() {
        drop(Box::from_raw(rom));
    }
}

/// Number of retained modes on 2in, 2out, 1out, 3in.
///
/// # Safety
/// `rom` must be a live handle and `ranks` must point to 4 writable values.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_rom_ranks(rom: *const RsRom, ranks: *mut usize) -> RsStatus {
    guard(|| {
        let rom = rom.as_ref().ok_or_else(|| null("rom"))?;
        if ranks.is_null() {
            return Err(null("ranks"));
        }
        let r = rom.rom.ranks();
        std::ptr::copy_nonoverlapping(r.as_ptr(), ranks, 4);
        Ok(())
    })
}

/// Nodes per interface trace.
///
/// # Safety
/// `rom` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_rom_trace_len(rom: *const RsRom, len: *mut usize) -> RsStatus {
    guard(|| {
        let rom = rom.as_ref().ok_or_else(|| null("rom"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        *len = rom.rom.geometry.interface_nodes[InterfaceId::In2.index()];
        Ok(())
    })
}

/// Reduced trace map: traces on 2in and 2out to traces on 1out and 3in.
/// All four buffers hold `len` values, which must equal the trace length.
///
/// # Safety
/// Buffers must be valid for `len` reads or writes; `extrapolated` may be null.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_rom_evaluate(
    rom: *const RsRom,
    in2: *const f64,
    out2: *const f64,
    len: usize,
    parameter: f64,
    out1: *mut f64,
    in3: *mut f64,
    extrapolated: *mut bool,
) -> RsStatus {
    guard(|| {
        let rom = rom.as_ref().ok_or_else(|| null("rom"))?;
        if in2.is_null() || out2.is_null() || out1.is_null() || in3.is_null() {
            return Err(null("trace buffer"));
        }
        let expected = rom.rom.geometry.interface_nodes[InterfaceId::In2.index()];
        if len != expected {
            return Err((RsStatus::InvalidArgument, format!("trace length {len}, artifact expects {expected}")));
        }
        let a = std::slice::from_raw_parts(in2, len);
        let b = std::slice::from_raw_parts(out2, len);
        let (t1, t3) = lift(rom.rom.evaluate(a, b, parameter))?;
        std::ptr::copy_nonoverlapping(t1.as_ptr(), out1, len);
        std::ptr::copy_nonoverlapping(t3.as_ptr(), in3, len);
        if let Some(flag) = extrapolated.as_mut() {
            *flag = rom.rom.is_extrapolated(parameter);
        }
        Ok(())
    })
}

/// Online solver for the configuration at `config_path` (the bundled
/// default when null). Fails with `INCOMPATIBLE` when the artifact was
/// trained on a different geometry or physics.
///
/// # Safety
/// `rom` must be a live handle, `config_path` null or NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_online_new(
    rom: *const RsRom,
    config_path: *const c_char,
    out: *mut *mut RsOnline,
) -> RsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let rom = rom.as_ref().ok_or_else(|| null("rom"))?;
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            lift(RunConfig::load(path_arg(config_path, "config_path")?))?
        };
        let problem = lift(cfg.problem())?;
        lift(rom.rom.check_compatible(&problem))?;
        let handle = RsOnline { rom: rom.rom.clone(), problem, options: cfg.online_options() };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `online` must come from [`romschwarz_online_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_online_free(online: *mut RsOnline) {
    if !online.is_null() {
        drop(Box::from_raw(online));
    }
}

/// Runs the reduced iteration at `parameter`.
///
/// # Safety
/// `online` must be a live handle and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn romschwarz_online_run(
    online: *const RsOnline,
    parameter: f64,
    result: *mut RsOnlineResult,
) -> RsStatus {
    guard(|| {
        let h = online.as_ref().ok_or_else(|| null("online"))?;
        let result = result.as_mut().ok_or_else(|| null("result"))?;
        let before = omega2_solve_count();
        let setup = lift(ReducedSetup::new(&h.problem, parameter))?;
        let r = lift(run_reduced_schwarz(&setup, &RomTraceMap { rom: &h.rom, parameter }, &h.options))?;
        *result = RsOnlineResult {
            sweeps: r.summary.sweeps,
            relerr_omega1: r.summary.rel_l2_omega1,
            relerr_omega3: r.summary.rel_l2_omega3,
            converged: r.summary.converged,
            extrapolated: r.summary.extrapolated,
            omega2_solves: omega2_solve_count() - before,
        };
        Ok(())
    })
}
