//! C ABI over the `infocomp` engine.
//!
//! Objects cross the boundary as opaque handles created by `ic_*_new` /
//! `ic_*_from_json` and released with the matching `ic_*_free`. Every
//! fallible call returns an [`IcStatus`]; on failure the message is kept per
//! thread and can be copied out with [`ic_last_error`]. Panics never unwind
//! into the caller.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use infocomp::cli::gen::ProtocolBundle;
use infocomp::cli::selftest;
use infocomp::cpj::{instance_divergence, sample_path, CpjInstance};
use infocomp::info::{kl_divergence, Dist, JointDist};
use infocomp::onesamp::{run_sampler, Outcome, SamplerConfig};
use infocomp::prototree::{
    comm_complexity, compress_with, external_info_cost, internal_info_cost, protocol_t_max,
    ProtocolTree,
};
use infocomp::sharedrand::SharedSeed;
use infocomp::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or a document of the wrong shape.
    Parse = 3,
    /// Invalid distribution, instance, protocol or parameter.
    Invalid = 4,
    Protocol = 5,
    Transport = 6,
    /// The sampler gave up scanning the shared tape.
    ScanCap = 7,
    Panic = 8,
}

/// Final state of a sampler run, mirroring the engine's outcome.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcOutcome {
    Match = 0,
    Mismatch = 1,
    AbortKOverflow = 2,
    AbortTMax = 3,
}

impl From<Outcome> for IcOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Match => IcOutcome::Match,
            Outcome::Mismatch => IcOutcome::Mismatch,
            Outcome::AbortKOverflow => IcOutcome::AbortKOverflow,
            Outcome::AbortTMax => IcOutcome::AbortTMax,
        }
    }
}

/// 128-bit shared seed, big-endian.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IcSeed {
    pub bytes: [u8; 16],
}

impl From<IcSeed> for SharedSeed {
    fn from(s: IcSeed) -> Self {
        SharedSeed::from_bytes(s.bytes)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcSampleResult {
    pub a: u64,
    /// B's output, meaningful only when `has_b` is nonzero.
    pub b: u64,
    pub has_b: u8,
    pub bits_a: u64,
    pub bits_b: u64,
    pub rounds_t: u32,
    pub k: u64,
    pub outcome: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcPathResult {
    pub matched: u8,
    /// Leaf output of A's path, meaningful only when `has_output` is nonzero.
    pub output: i64,
    pub has_output: u8,
    pub bits_a: u64,
    pub bits_b: u64,
    pub outcome: u32,
    pub divergence_cost: f64,
    pub bound: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcInfo {
    pub internal_ic: f64,
    pub external_ic: f64,
    pub cc: u64,
}

/// Finite distribution handle.
pub struct IcDist(Dist);

/// Protocol tree bundled with its input prior.
pub struct IcProtocol {
    pi: Arc<ProtocolTree>,
    mu: JointDist,
}

/// Correlated pointer jumping instance handle.
pub struct IcCpj(CpjInstance);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IcStatus {
    match e {
        Error::Protocol(_) => IcStatus::Protocol,
        Error::Transport(_) => IcStatus::Transport,
        Error::ScanCapExceeded(_) => IcStatus::ScanCap,
        Error::Input { .. } => IcStatus::Parse,
        _ => IcStatus::Invalid,
    }
}

struct Failure(IcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(IcStatus::Parse, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IcStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            IcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(IcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(IcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(IcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(IcStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn into_handle<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message, NUL-terminated, into
/// `buf` (truncating to `len - 1` bytes). Returns the full message length
/// excluding the terminator, or 0 when there is no error.
#[no_mangle]
pub unsafe extern "C" fn ic_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses 32 hex characters.
#[no_mangle]
pub unsafe extern "C" fn ic_seed_parse(hex: *const c_char, seed: *mut IcSeed) -> IcStatus {
    guard(|| {
        let s: SharedSeed = text(hex, "hex")?.parse()?;
        out(seed, "seed")?.bytes = *s.as_bytes();
        Ok(())
    })
}

/// Child seed, e.g. one per trial.
#[no_mangle]
pub unsafe extern "C" fn ic_seed_derive(
    seed: *const IcSeed,
    tag: u64,
    index: u64,
    child: *mut IcSeed,
) -> IcStatus {
    guard(|| {
        let s = SharedSeed::from(*deref(seed, "seed")?);
        out(child, "child")?.bytes = *s.derive(tag, index).as_bytes();
        Ok(())
    })
}

/// Distribution from `len` probabilities summing to 1.
#[no_mangle]
pub unsafe extern "C" fn ic_dist_new(
    probs: *const f64,
    len: usize,
    dist: *mut *mut IcDist,
) -> IcStatus {
    guard(|| {
        let slot = out(dist, "dist")?;
        if probs.is_null() {
            return Err(Failure(IcStatus::NullPointer, "probs is null".into()));
        }
        let d = Dist::new(std::slice::from_raw_parts(probs, len).to_vec())?;
        *slot = into_handle(IcDist(d));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ic_dist_free(dist: *mut IcDist) {
    free_handle(dist)
}

/// `D(P‖Q)` in bits; infinite when P is not absolutely continuous to Q.
#[no_mangle]
pub unsafe extern "C" fn ic_kl_divergence(
    p: *const IcDist,
    q: *const IcDist,
    bits: *mut f64,
) -> IcStatus {
    guard(|| {
        let d = kl_divergence(&deref(p, "p")?.0, &deref(q, "q")?.0)?;
        *out(bits, "bits")? = d;
        Ok(())
    })
}

/// One run of the one-shot sampler with the default `t_max` for the pair.
#[no_mangle]
pub unsafe extern "C" fn ic_sample(
    p: *const IcDist,
    q: *const IcDist,
    seed: *const IcSeed,
    eps: f64,
    result: *mut IcSampleResult,
) -> IcStatus {
    guard(|| {
        let (p, q) = (&deref(p, "p")?.0, &deref(q, "q")?.0);
        let seed = SharedSeed::from(*deref(seed, "seed")?);
        let slot = out(result, "result")?;
        let run = run_sampler(p, q, &seed, SamplerConfig::for_pair(p, q, eps)?)?;
        *slot = IcSampleResult {
            a: run.a as u64,
            b: run.b.unwrap_or(0) as u64,
            has_b: run.b.is_some() as u8,
            bits_a: run.stats.bits_a,
            bits_b: run.stats.bits_b,
            rounds_t: run.stats.rounds_t,
            k: run.stats.k,
            outcome: IcOutcome::from(run.stats.outcome) as u32,
        };
        Ok(())
    })
}

/// Protocol from a JSON bundle `{"protocol": ..., "mu": ...}`.
#[no_mangle]
pub unsafe extern "C" fn ic_protocol_from_json(
    json: *const c_char,
    protocol: *mut *mut IcProtocol,
) -> IcStatus {
    guard(|| {
        let slot = out(protocol, "protocol")?;
        let b: ProtocolBundle = serde_json::from_str(text(json, "json")?)?;
        if b.mu.rows() != b.protocol.x_size() || b.mu.cols() != b.protocol.y_size() {
            return Err(Failure(
                IcStatus::Invalid,
                "prior shape does not match the protocol inputs".into(),
            ));
        }
        *slot = into_handle(IcProtocol {
            pi: Arc::new(b.protocol),
            mu: b.mu,
        });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ic_protocol_free(protocol: *mut IcProtocol) {
    free_handle(protocol)
}

/// Exact internal and external information cost and communication.
#[no_mangle]
pub unsafe extern "C" fn ic_protocol_info(
    protocol: *const IcProtocol,
    info: *mut IcInfo,
) -> IcStatus {
    guard(|| {
        let h = deref(protocol, "protocol")?;
        let slot = out(info, "info")?;
        *slot = IcInfo {
            internal_ic: internal_info_cost(&h.pi, &h.mu)?,
            external_ic: external_info_cost(&h.pi, &h.mu)?,
            cc: comm_complexity(&h.pi) as u64,
        };
        Ok(())
    })
}

/// Compresses one run with inputs drawn from the prior.
#[no_mangle]
pub unsafe extern "C" fn ic_compress(
    protocol: *const IcProtocol,
    seed: *const IcSeed,
    eps: f64,
    result: *mut IcPathResult,
) -> IcStatus {
    guard(|| {
        let h = deref(protocol, "protocol")?;
        let seed = SharedSeed::from(*deref(seed, "seed")?);
        let slot = out(result, "result")?;
        let cfg = SamplerConfig::new(eps)?.with_t_max(protocol_t_max(&h.pi, &h.mu, 1)?);
        let run = compress_with(&h.pi, &h.mu, &seed, cfg)?;
        *slot = IcPathResult {
            matched: (run.stats.outcome == Outcome::Match) as u8,
            output: run.a.output.unwrap_or(0),
            has_output: run.a.output.is_some() as u8,
            bits_a: run.stats.bits_a,
            bits_b: run.stats.bits_b,
            outcome: IcOutcome::from(run.stats.outcome) as u32,
            divergence_cost: run.divergence_cost,
            bound: run.bound,
        };
        Ok(())
    })
}

/// CPJ instance from JSON.
#[no_mangle]
pub unsafe extern "C" fn ic_cpj_from_json(
    json: *const c_char,
    instance: *mut *mut IcCpj,
) -> IcStatus {
    guard(|| {
        let slot = out(instance, "instance")?;
        let f: CpjInstance = serde_json::from_str(text(json, "json")?)?;
        *slot = into_handle(IcCpj(f));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ic_cpj_free(instance: *mut IcCpj) {
    free_handle(instance)
}

/// Expected divergence cost of the instance.
#[no_mangle]
pub unsafe extern "C" fn ic_cpj_divergence(instance: *const IcCpj, bits: *mut f64) -> IcStatus {
    guard(|| {
        let d = instance_divergence(&deref(instance, "instance")?.0);
        *out(bits, "bits")? = d;
        Ok(())
    })
}

/// Samples one root-to-leaf path.
#[no_mangle]
pub unsafe extern "C" fn ic_cpj_sample(
    instance: *const IcCpj,
    seed: *const IcSeed,
    eps: f64,
    result: *mut IcPathResult,
) -> IcStatus {
    guard(|| {
        let f = &deref(instance, "instance")?.0;
        let seed = SharedSeed::from(*deref(seed, "seed")?);
        let slot = out(result, "result")?;
        let run = sample_path(f, &seed, eps)?;
        *slot = IcPathResult {
            matched: (run.stats.outcome == Outcome::Match) as u8,
            output: run.a.output.unwrap_or(0),
            has_output: run.a.output.is_some() as u8,
            bits_a: run.stats.bits_a,
            bits_b: run.stats.bits_b,
            outcome: IcOutcome::from(run.stats.outcome) as u32,
            divergence_cost: run.a.divergence_cost,
            bound: run.bound,
        };
        Ok(())
    })
}

/// Runs the selftest; `passed` is set to 1 when every check passes.
#[no_mangle]
pub unsafe extern "C" fn ic_selftest(seed: *const IcSeed, passed: *mut u8) -> IcStatus {
    guard(|| {
        let seed = SharedSeed::from(*deref(seed, "seed")?);
        let slot = out(passed, "passed")?;
        *slot = selftest(&seed)?.passed() as u8;
        Ok(())
    })
}
