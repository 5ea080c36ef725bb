//! C interface to `nmst`: load a checkpoint, decode continuations, read
//! per-step eos probabilities.
//!
//! Every fallible function returns an [`NmstStatus`]. On failure the
//! message is available from [`nmst_last_error`] on the same thread until
//! the next call into the library. Handles are opaque and must be released
//! with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nmst::checkpoint::{load_checkpoint, ModelCheckpoint};
use nmst::decoding::{decode, teacher_forced_eos, DecoderKind, DecoderSpec, Generation};
use nmst::{half_life, ConditionalModel, Context, Error, HeadKind};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmstStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DecoderSpec = 3,
    Checkpoint = 4,
    Io = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmstHeadKind {
    Vanilla = 0,
    SelfTerminating = 1,
    NonMonotonic = 2,
}

/// A loaded model. Immutable after loading, so one handle may be shared by
/// threads that only call decoding functions.
pub struct NmstModel {
    ckpt: ModelCheckpoint,
}

/// One decoded continuation, including eos if it terminated.
pub struct NmstGeneration {
    tokens: Vec<u32>,
    eos_probs: Vec<f64>,
    log_prob: f64,
    terminated: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: NmstStatus, msg: impl Into<String>) -> NmstStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> NmstStatus {
    let status = match e {
        Error::DecoderSpec { .. } => NmstStatus::DecoderSpec,
        Error::Checkpoint(_) | Error::Json(_) => NmstStatus::Checkpoint,
        Error::Io(_) => NmstStatus::Io,
        _ => NmstStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> NmstStatus) -> NmstStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        fail(NmstStatus::Internal, format!("internal error: {msg}"))
    })
}

unsafe fn utf8<'a>(s: *const c_char, what: &str) -> Result<&'a str, NmstStatus> {
    if s.is_null() {
        return Err(fail(NmstStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(NmstStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], NmstStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(NmstStatus::NullArgument, format!("{what} is null but has length {len}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn context(model: &NmstModel, ids: &[u32]) -> Result<Context, NmstStatus> {
    let v = model.ckpt.model.vocab();
    let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= v.len()) {
        return Err(fail(
            NmstStatus::InvalidArgument,
            format!("token id {bad} out of range for vocabulary of {}", v.len()),
        ));
    }
    Context::new(ids, v.eos_id()).map_err(from_error)
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn nmst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// First step at which the eos lower bound `1 - (1 - epsilon)^t` exceeds
/// 1/2. Returns 0 unless `0 < epsilon < 1`.
#[no_mangle]
pub extern "C" fn nmst_half_life(epsilon: f64) -> usize {
    if epsilon > 0.0 && epsilon < 1.0 {
        half_life(epsilon)
    } else {
        0
    }
}

/// Loads a checkpoint file. On success `*out` owns a new model.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmst_model_load(path: *const c_char, out: *mut *mut NmstModel) -> NmstStatus {
    guard(|| {
        if out.is_null() {
            return fail(NmstStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match utf8(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(NmstModel { ckpt }));
                NmstStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be null or a handle from [`nmst_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmst_model_free(model: *mut NmstModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmst_model_vocab_size(model: *const NmstModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.model.vocab().len())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmst_model_eos_id(model: *const NmstModel) -> u32 {
    model.as_ref().map_or(0, |m| m.ckpt.model.vocab().eos_id() as u32)
}

/// Head kind and epsilon (0 for the vanilla head).
///
/// # Safety
/// `model` must be a live handle; `kind` and `epsilon` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nmst_model_head(
    model: *const NmstModel,
    kind: *mut NmstHeadKind,
    epsilon: *mut f64,
) -> NmstStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(NmstStatus::NullArgument, "model is null");
        };
        if kind.is_null() || epsilon.is_null() {
            return fail(NmstStatus::NullArgument, "kind or epsilon is null");
        }
        let head = m.ckpt.model.head();
        *kind = match head.kind() {
            HeadKind::Va => NmstHeadKind::Vanilla,
            HeadKind::St => NmstHeadKind::SelfTerminating,
            HeadKind::Nmst => NmstHeadKind::NonMonotonic,
        };
        *epsilon = head.epsilon().unwrap_or(0.0);
        NmstStatus::Ok
    })
}

/// Token string for `id`, or null if out of range. Owned by the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmst_model_token(model: *const NmstModel, id: u32, len: *mut usize) -> *const u8 {
    let Some(tok) = model.as_ref().and_then(|m| m.ckpt.model.vocab().token(id as usize)) else {
        return ptr::null();
    };
    if !len.is_null() {
        *len = tok.len();
    }
    tok.as_ptr()
}

/// Decodes one continuation of `context`. `decoder` uses the command-line
/// syntax: `greedy`, `top-k:K`, `nucleus:P` or `beam:K`. Sampling decoders
/// are deterministic given `seed`.
///
/// # Safety
/// `model` must be a live handle, `context` must point to `context_len`
/// ids (or be null when the length is 0), `decoder` must be a
/// nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmst_generate(
    model: *const NmstModel,
    context_ids: *const u32,
    context_len: usize,
    decoder: *const c_char,
    cap: usize,
    seed: u64,
    out: *mut *mut NmstGeneration,
) -> NmstStatus {
    guard(|| {
        if out.is_null() {
            return fail(NmstStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let Some(m) = model.as_ref() else {
            return fail(NmstStatus::NullArgument, "model is null");
        };
        let run = || -> Result<Generation, NmstStatus> {
            let ids = slice(context_ids, context_len, "context_ids")?;
            let ctx = context(m, ids)?;
            let kind: DecoderKind = utf8(decoder, "decoder")?.parse().map_err(from_error)?;
            let spec = DecoderSpec::new(kind, cap, seed).map_err(from_error)?;
            decode(&m.ckpt.model, &ctx, &spec).map_err(from_error)
        };
        match run() {
            Ok(g) => {
                *out = Box::into_raw(Box::new(NmstGeneration {
                    tokens: g.sequence.token_ids().iter().map(|&t| t as u32).collect(),
                    eos_probs: g.eos_probs,
                    log_prob: g.log_prob,
                    terminated: g.sequence.terminated(),
                }));
                NmstStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Teacher-forced `p(eos)` at every step of `tokens` after `context`.
/// Writes `tokens_len` values to `out`.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn nmst_eos_probabilities(
    model: *const NmstModel,
    context_ids: *const u32,
    context_len: usize,
    tokens: *const u32,
    tokens_len: usize,
    out: *mut f64,
) -> NmstStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(NmstStatus::NullArgument, "model is null");
        };
        if tokens_len > 0 && out.is_null() {
            return fail(NmstStatus::NullArgument, "out is null");
        }
        let run = || -> Result<Vec<f64>, NmstStatus> {
            let ctx = context(m, slice(context_ids, context_len, "context_ids")?)?;
            let toks = slice(tokens, tokens_len, "tokens")?;
            let v = m.ckpt.model.vocab();
            let toks: Vec<usize> = toks.iter().map(|&t| t as usize).collect();
            if let Some(&bad) = toks.iter().find(|&&t| t >= v.len()) {
                return Err(fail(NmstStatus::InvalidArgument, format!("token id {bad} out of range")));
            }
            if toks[..toks.len().saturating_sub(1)].contains(&v.eos_id()) {
                return Err(fail(NmstStatus::InvalidArgument, "eos may only be the last token"));
            }
            Ok(teacher_forced_eos(&m.ckpt.model, &ctx, &toks))
        };
        match run() {
            Ok(p) => {
                std::slice::from_raw_parts_mut(out, p.len()).copy_from_slice(&p);
                NmstStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// # Safety
/// `g` must be null or a handle from [`nmst_generate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmst_generation_free(g: *mut NmstGeneration) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Generated ids (eos included when terminated). Owned by the generation.
///
/// # Safety
/// `g` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmst_generation_tokens(g: *const NmstGeneration, len: *mut usize) -> *const u32 {
    let Some(g) = g.as_ref() else {
        return ptr::null();
    };
    if !len.is_null() {
        *len = g.tokens.len();
    }
    g.tokens.as_ptr()
}

/// `p(eos)` at each generated step. Owned by the generation.
///
/// # Safety
/// `g` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmst_generation_eos_probs(g: *const NmstGeneration, len: *mut usize) -> *const f64 {
    let Some(g) = g.as_ref() else {
        return ptr::null();
    };
    if !len.is_null() {
        *len = g.eos_probs.len();
    }
    g.eos_probs.as_ptr()
}

/// # Safety
/// `g` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmst_generation_terminated(g: *const NmstGeneration) -> bool {
    g.as_ref().is_some_and(|g| g.terminated)
}

/// Model log-probability of the generated sequence.
///
/// # Safety
/// `g` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmst_generation_log_prob(g: *const NmstGeneration) -> f64 {
    g.as_ref().map_or(f64::NAN, |g| g.log_prob)
}
