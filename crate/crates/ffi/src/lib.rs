//! C interface to the `bspd` library.
//!
//! Objects cross the boundary as opaque handles created by `bspd_*_new`-style
//! calls and released with the matching `*_free`. Every fallible call returns
//! a [`BspdStatus`]; on failure the message is available from
//! [`bspd_last_error`] on the same thread. Complex vectors are exchanged as
//! interleaved `re, im` pairs of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bspd::baselines::{baseline1, baseline2, baseline3};
use bspd::bspd::{run_bspd, BspdOptions};
use bspd::channel::{generate_channel, CVec, ChannelRealization};
use bspd::harness::{evaluate_sinr, realization_seed, realization_topology, worst_tag_ber};
use bspd::params::Transceiver;
use bspd::settings::{load_config, Settings};
use bspd::Error;
use num_complex::Complex64;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BspdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Domain = 4,
    Dimension = 5,
    Solver = 6,
    Io = 7,
    Parse = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Loaded configuration.
pub struct BspdConfig(Settings);

/// One channel realization.
pub struct BspdChannel(ChannelRealization);

/// Transmit beamformer and receivers.
pub struct BspdTransceiver(Transceiver);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BspdStatus {
    match e {
        Error::Config(_) => BspdStatus::InvalidConfig,
        Error::Domain(_) | Error::BarrierDomain { .. } => BspdStatus::Domain,
        Error::Dimension(_) | Error::UnsupportedSize { .. } => BspdStatus::Dimension,
        Error::Solver(_) => BspdStatus::Solver,
        Error::Io { .. } => BspdStatus::Io,
        Error::Parse { .. } => BspdStatus::Parse,
    }
}

struct Failure(BspdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BspdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BspdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            BspdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(BspdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure(BspdStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn bspd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bspd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a configuration document. `path` may be null for the built-in
/// defaults; `overrides` holds `n_overrides` strings of the form `KEY=VALUE`.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `overrides` must hold
/// `n_overrides` valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bspd_config_load(
    path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut BspdConfig,
) -> BspdStatus {
    guard(|| {
        let path = if path.is_null() { None } else { Some(PathBuf::from(c_string(path, "path")?)) };
        if n_overrides > 0 && overrides.is_null() {
            return Err(null("overrides"));
        }
        let items = (0..n_overrides)
            .map(|i| c_string(*overrides.add(i), "override"))
            .collect::<Result<Vec<_>, _>>()?;
        let settings = load_config(path.as_deref(), &items)?;
        put(out, BspdConfig(settings))
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`bspd_config_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bspd_config_free(cfg: *mut BspdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Antenna and tag counts of a configuration.
///
/// # Safety
/// `cfg` must be a live handle; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn bspd_config_dims(cfg: *const BspdConfig, m: *mut usize, n: *mut usize, k: *mut usize) -> BspdStatus {
    guard(|| {
        let c = &deref(cfg, "config")?.0.cfg;
        for (p, v) in [(m, c.m), (n, c.n), (k, c.k)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Draws the channel of `realization` under the configuration's seed.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bspd_channel_generate(cfg: *const BspdConfig, realization: usize, out: *mut *mut BspdChannel) -> BspdStatus {
    guard(|| {
        let s = &deref(cfg, "config")?.0;
        let spec = &s.experiment;
        let topo = realization_topology(spec, realization);
        let ch = generate_channel(&s.cfg, &topo, realization_seed(spec.seed, realization))?;
        put(out, BspdChannel(ch))
    })
}

/// # Safety
/// `ch` must be null or a live channel handle.
#[no_mangle]
pub unsafe extern "C" fn bspd_channel_free(ch: *mut BspdChannel) {
    if !ch.is_null() {
        drop(Box::from_raw(ch));
    }
}

/// Runs BSPD. `max_iters = 0` keeps the configured limit. `iterations` and
/// `converged` may be null.
///
/// # Safety
/// Handles must be live and belong to the same configuration; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bspd_optimize(
    cfg: *const BspdConfig,
    ch: *const BspdChannel,
    max_iters: usize,
    seed: u64,
    out: *mut *mut BspdTransceiver,
    iterations: *mut usize,
    converged: *mut bool,
) -> BspdStatus {
    guard(|| {
        let s = &deref(cfg, "config")?.0;
        let ch = &deref(ch, "channel")?.0;
        let opts = BspdOptions {
            max_iters: if max_iters == 0 { s.bspd.max_iters } else { max_iters },
            seed,
            ..s.bspd
        };
        let run = run_bspd(&s.cfg, ch, &s.schedule, &opts, None).map_err(|a| Failure::from(a.error))?;
        if !iterations.is_null() {
            *iterations = run.iterations;
        }
        if !converged.is_null() {
            *converged = run.converged;
        }
        put(out, BspdTransceiver(run.theta))
    })
}

/// One of the reference transceivers, `which` in `1..=3`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bspd_baseline(
    cfg: *const BspdConfig,
    ch: *const BspdChannel,
    which: u32,
    out: *mut *mut BspdTransceiver,
) -> BspdStatus {
    guard(|| {
        let c = &deref(cfg, "config")?.0.cfg;
        let ch = &deref(ch, "channel")?.0;
        ch.check(c)?;
        let t = match which {
            1 => baseline1(ch, c),
            2 => baseline2(ch, c),
            3 => baseline3(ch, c),
            _ => return Err(Failure(BspdStatus::InvalidArgument, format!("no baseline {which}"))),
        };
        put(out, BspdTransceiver(t))
    })
}

/// # Safety
/// `t` must be null or a live transceiver handle.
#[no_mangle]
pub unsafe extern "C" fn bspd_transceiver_free(t: *mut BspdTransceiver) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// `||v||^2`, or NaN for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bspd_transceiver_power(t: *const BspdTransceiver) -> f64 {
    t.as_ref().map_or(f64::NAN, |t| t.0.power())
}

unsafe fn export(x: &CVec, out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < 2 * x.len() {
        return Err(Failure(
            BspdStatus::BufferTooSmall,
            format!("need {} doubles, got {len}", 2 * x.len()),
        ));
    }
    for (i, z) in x.iter().enumerate() {
        *out.add(2 * i) = z.re;
        *out.add(2 * i + 1) = z.im;
    }
    Ok(())
}

/// Copies one vector of the transceiver as interleaved `re, im` pairs.
/// `index = 0` selects the transmit beamformer, `1` the direct-link
/// receiver and `1 + k` the receiver of tag `k`.
///
/// # Safety
/// `t` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bspd_transceiver_get(t: *const BspdTransceiver, index: usize, out: *mut f64, len: usize) -> BspdStatus {
    guard(|| {
        let t = &deref(t, "transceiver")?.0;
        let x = match index {
            0 => &t.v,
            1 => &t.u_s,
            i => t
                .u
                .get(i - 2)
                .ok_or_else(|| Failure(BspdStatus::InvalidArgument, format!("vector index {i} out of range")))?,
        };
        export(x, out, len)
    })
}

/// Builds a transceiver from interleaved vectors: `v` (`2M` doubles),
/// `u_s` (`2N`) and all tag receivers back to back (`2NK`).
///
/// # Safety
/// The arrays must hold the stated number of doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bspd_transceiver_new(
    cfg: *const BspdConfig,
    v: *const f64,
    u_s: *const f64,
    u: *const f64,
    out: *mut *mut BspdTransceiver,
) -> BspdStatus {
    guard(|| {
        let c = &deref(cfg, "config")?.0.cfg;
        let read = |p: *const f64, n: usize, what: &str| -> Result<CVec, Failure> {
            if p.is_null() && n > 0 {
                return Err(null(what));
            }
            Ok(CVec::from_fn(n, |i, _| Complex64::new(*p.add(2 * i), *p.add(2 * i + 1))))
        };
        let v = read(v, c.m, "v")?;
        let u_s = read(u_s, c.n, "u_s")?;
        let all = read(u, c.n * c.k, "u")?;
        let u = (0..c.k).map(|k| all.rows(k * c.n, c.n).into_owned()).collect();
        let t = Transceiver { v, u_s, u };
        t.check(c)?;
        if !t.is_finite() {
            return Err(Failure(BspdStatus::Domain, "transceiver has non-finite entries".into()));
        }
        put(out, BspdTransceiver(t))
    })
}

/// Expected SINRs: `out[0]` for the direct link, `out[1 + k]` for tag `k`.
///
/// # Safety
/// Handles must be live; `out` valid for `len >= K + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn bspd_expected_sinr(
    cfg: *const BspdConfig,
    ch: *const BspdChannel,
    t: *const BspdTransceiver,
    out: *mut f64,
    len: usize,
) -> BspdStatus {
    guard(|| {
        let s = &deref(cfg, "config")?.0;
        let ch = &deref(ch, "channel")?.0;
        let t = &deref(t, "transceiver")?.0;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len < s.cfg.k + 1 {
            return Err(Failure(BspdStatus::BufferTooSmall, format!("need {} doubles, got {len}", s.cfg.k + 1)));
        }
        ch.check(&s.cfg)?;
        t.check(&s.cfg)?;
        let g = evaluate_sinr(t, ch, &s.cfg, s.experiment.seed)?;
        *out = g.gamma_s;
        for (k, x) in g.gamma.iter().enumerate() {
            *out.add(1 + k) = *x;
        }
        Ok(())
    })
}

/// Simulated worst-tag bit error rate and its 95% half-width.
///
/// # Safety
/// Handles must be live; `ber` writable, `halfwidth` writable or null.
#[no_mangle]
pub unsafe extern "C" fn bspd_worst_tag_ber(
    cfg: *const BspdConfig,
    ch: *const BspdChannel,
    t: *const BspdTransceiver,
    n_slots: usize,
    seed: u64,
    ber: *mut f64,
    halfwidth: *mut f64,
) -> BspdStatus {
    guard(|| {
        let c = &deref(cfg, "config")?.0.cfg;
        let ch = &deref(ch, "channel")?.0;
        let t = &deref(t, "transceiver")?.0;
        if ber.is_null() {
            return Err(null("ber"));
        }
        let est = worst_tag_ber(t, ch, c, n_slots, seed)?;
        *ber = est.worst;
        if !halfwidth.is_null() {
            *halfwidth = est.halfwidth;
        }
        Ok(())
    })
}
