//! C ABI over the biphoton library.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every fallible call returns a [`BpStatus`]; the message of the most recent
//! failure on the calling thread is available via [`bp_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use biphoton::config::RunConfig;
use biphoton::events::{pair_events, read_events, EventStream};
use biphoton::experiments::{run_simulation, Simulation};
use biphoton::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BpStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Numerical = 3,
    Io = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Parsed and resolved run configuration.
pub struct BpConfig(RunConfig);

/// Result of one pipeline run.
pub struct BpSimulation(Simulation);

/// Time-sorted event stream.
pub struct BpEventStream(EventStream);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v: Vec<u8> = msg.bytes().filter(|b| *b != 0).collect();
        v.push(0);
        *e.borrow_mut() = v;
    });
}

fn status_of(e: &Error) -> BpStatus {
    match e.exit_code() {
        2 => match e {
            Error::Config(_) => BpStatus::Config,
            _ => BpStatus::InvalidArgument,
        },
        3 => BpStatus::Numerical,
        _ => BpStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (BpStatus, String)>) -> BpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BpStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            BpStatus::Panic
        }
    }
}

fn lib<T>(r: biphoton::Result<T>) -> Result<T, (BpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (BpStatus, String) {
    (BpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BpStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (BpStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err((
            BpStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} required", src.len()),
        ));
    }
    // SAFETY: caller guarantees `out` has room for `len` doubles
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Length in bytes, including the terminating NUL, of the last error message
/// on this thread (0 when there is none).
#[no_mangle]
pub extern "C" fn bp_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the number of bytes written including the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn bp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if e.is_empty() {
            *buf = 0;
            return 1;
        }
        let n = e.len().min(len);
        std::ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
        *buf.add(n - 1) = 0;
        n
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Configuration with every default applied.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn bp_config_default(out: *mut *mut BpConfig) -> BpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut c = RunConfig::default();
        lib(c.resolve())?;
        *out = Box::into_raw(Box::new(BpConfig(c)));
        Ok(())
    })
}

/// Parse a TOML configuration document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bp_config_from_toml(toml: *const c_char, out: *mut *mut BpConfig) -> BpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        let mut c = lib(RunConfig::from_toml(text))?;
        lib(c.resolve())?;
        *out = Box::into_raw(Box::new(BpConfig(c)));
        Ok(())
    })
}

/// Override the base seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bp_config_set_seed(config: *mut BpConfig, seed: u64) -> BpStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bp_config_free(config: *mut BpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured pipeline.
///
/// # Safety
/// `config` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bp_simulate(config: *const BpConfig, out: *mut *mut BpSimulation) -> BpStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sim = lib(run_simulation(&c.0))?;
        *out = Box::into_raw(Box::new(BpSimulation(sim)));
        Ok(())
    })
}

/// Grid size `M` of a simulation.
///
/// # Safety
/// `sim` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn bp_simulation_size(sim: *const BpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.0.ensemble.gamma.size())
}

/// Number of profiles: ground truth, singles, marginal, then one per window.
///
/// # Safety
/// `sim` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn bp_simulation_profile_count(sim: *const BpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| 3 + s.0.profiles.post.len())
}

/// Copy the `M x M` coincidence matrix (row = idler) into `out`.
///
/// # Safety
/// `sim` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bp_simulation_gamma(sim: *const BpSimulation, out: *mut f64, len: usize) -> BpStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        copy_out(s.0.ensemble.gamma.counts(), out, len)
    })
}

fn profile_at(s: &Simulation, index: usize) -> Result<&[f64], (BpStatus, String)> {
    let p = &s.profiles;
    match index {
        0 => Ok(p.ground_truth.values()),
        1 => Ok(p.singles.values()),
        2 => Ok(p.marginal.values()),
        k if k - 3 < p.post.len() => Ok(p.post[k - 3].1.values()),
        k => Err((BpStatus::InvalidArgument, format!("profile index {k} out of range"))),
    }
}

/// Copy profile `index` (see [`bp_simulation_profile_count`]) into `out`.
///
/// # Safety
/// `sim` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bp_simulation_profile(
    sim: *const BpSimulation,
    index: usize,
    out: *mut f64,
    len: usize,
) -> BpStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        copy_out(profile_at(&s.0, index)?, out, len)
    })
}

/// MTF of profile `index` (NaN when the object has no periodic component).
///
/// # Safety
/// `sim` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bp_simulation_mtf(sim: *const BpSimulation, index: usize, out: *mut f64) -> BpStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        profile_at(&s.0, index)?;
        *out = s.0.reports[index].mtf;
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bp_simulation_free(sim: *mut BpSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// MTF of `image` relative to the dominant frequency of `ground_truth`.
///
/// # Safety
/// Both arrays must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bp_mtf(image: *const f64, ground_truth: *const f64, n: usize, out: *mut f64) -> BpStatus {
    guard(|| {
        if image.is_null() || ground_truth.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let img = std::slice::from_raw_parts(image, n);
        let gt = std::slice::from_raw_parts(ground_truth, n);
        *out = lib(biphoton::metrics::mtf(img, gt))?.mtf;
        Ok(())
    })
}

/// Read a text or binary event file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bp_events_read(path: *const c_char, out: *mut *mut BpEventStream) -> BpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = str_arg(path, "path")?;
        let s = lib(read_events(Path::new(p)))?;
        *out = Box::into_raw(Box::new(BpEventStream(s)));
        Ok(())
    })
}

/// Number of records in a stream.
///
/// # Safety
/// `stream` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn bp_events_len(stream: *const BpEventStream) -> usize {
    stream.as_ref().map_or(0, |s| s.0.len())
}

/// Count coincidences within `window` nanoseconds.
///
/// # Safety
/// `stream` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bp_events_pair_count(stream: *const BpEventStream, window: u64, out: *mut usize) -> BpStatus {
    guard(|| {
        let s = stream.as_ref().ok_or_else(|| null("stream"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lib(pair_events(&s.0, window))?.len();
        Ok(())
    })
}

/// # Safety
/// `stream` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bp_events_free(stream: *mut BpEventStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}
