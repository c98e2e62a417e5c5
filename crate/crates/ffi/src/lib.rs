//! C ABI over the stackformer library.
//!
//! Two opaque handles are exposed: `SfModel` (a trained model loaded from a
//! checkpoint) and `SfStack` (a single soft stack driven by explicit action
//! probabilities). Every fallible call returns an [`SfStatus`]; on failure a
//! message is kept per thread and can be fetched with
//! [`sf_last_error_message`]. Panics never cross the boundary.
//!
//! The header `include/stackformer.h` is regenerated by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stackformer::model::{checkpoint, Model};
use stackformer::stack::{self, ActionDistribution, StackState, StructureMode};
use stackformer::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    BufferTooSmall = 5,
    Io = 6,
    Checkpoint = 7,
    Panic = 8,
}

/// Structure selector for [`sf_stack_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStructure {
    Stack = 0,
    Queue = 1,
}

/// Opaque model handle.
pub struct SfModel {
    inner: Model<f32>,
}

/// Opaque soft-stack handle.
pub struct SfStack {
    state: StackState<f32>,
    structure: StructureMode,
}

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

fn status_of(err: &Error) -> SfStatus {
    match err {
        Error::InvalidDimension(_)
        | Error::InvalidConfig(_)
        | Error::UnknownTask(_)
        | Error::UnsupportedLength { .. }
        | Error::UnknownSymbol(_)
        | Error::TokenOutOfVocab(_)
        | Error::SequenceTooLong { .. }
        | Error::Empty(_)
        | Error::StackDisabled => SfStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => SfStatus::DimensionMismatch,
        Error::NonFinite(_) | Error::Diverged { .. } => SfStatus::NonFinite,
        Error::Checkpoint(_) | Error::Json(_) => SfStatus::Checkpoint,
        Error::Io(_) => SfStatus::Io,
    }
}

struct Fail(SfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            SfStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside stackformer");
            SfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SfStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(SfStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn too_small(need: usize, got: usize) -> Fail {
    Fail(SfStatus::BufferTooSmall, format!("buffer holds {got} elements, {need} needed"))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Load a checkpoint written by the `stackformer` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_model_load(path: *const c_char, out: *mut *mut SfModel) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let inner = checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(SfModel { inner }));
        Ok(())
    })
}

/// Write the model to `path`.
///
/// # Safety
/// `model` must come from [`sf_model_load`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sf_model_save(model: *const SfModel, path: *const c_char) -> SfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path)?;
        checkpoint::save(&m.inner, path)?;
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from [`sf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_model_vocab_size(model: *const SfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.vocab_size)
}

/// Logits for every position: `n_tokens × vocab` floats, row-major.
///
/// # Safety
/// `tokens` must hold `n_tokens` ids and `logits` `logits_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sf_model_forward(
    model: *const SfModel,
    tokens: *const u32,
    n_tokens: usize,
    logits: *mut f32,
    logits_len: usize,
) -> SfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let toks = slice(tokens, n_tokens, "tokens")?;
        let need = n_tokens * m.inner.config.vocab_size;
        if logits_len < need {
            return Err(too_small(need, logits_len));
        }
        let out = m.inner.forward(toks)?;
        slice_mut(logits, need, "logits")?.copy_from_slice(&out);
        Ok(())
    })
}

/// Greedy continuation of `prompt`. Pass a negative `eos` to disable early
/// stopping. New tokens (not the prompt) go to `out`; their count goes to
/// `out_len`.
///
/// # Safety
/// Buffers must be valid for the stated lengths; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_model_generate(
    model: *const SfModel,
    prompt: *const u32,
    n_prompt: usize,
    max_new: usize,
    eos: i64,
    out: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
) -> SfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if out_cap < max_new {
            return Err(too_small(max_new, out_cap));
        }
        let p = slice(prompt, n_prompt, "prompt")?;
        let eos = u32::try_from(eos).ok();
        let gen = m.inner.generate(p, max_new, eos)?;
        slice_mut(out, gen.len(), "out")?.copy_from_slice(&gen);
        *out_len = gen.len();
        Ok(())
    })
}

/// Empty soft stack (or queue) with `slots × width` storage.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_new(slots: usize, width: usize, structure: SfStructure, out: *mut *mut SfStack) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let state = StackState::empty(slots, width)?;
        let structure = match structure {
            SfStructure::Stack => StructureMode::Stack,
            SfStructure::Queue => StructureMode::Queue,
        };
        *out = Box::into_raw(Box::new(SfStack { state, structure }));
        Ok(())
    })
}

/// Release a stack. NULL is ignored.
///
/// # Safety
/// `stack` must come from [`sf_stack_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_free(stack: *mut SfStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// One soft update with explicit probabilities, which must be
/// non-negative and sum to one.
///
/// # Safety
/// `h` must hold `width` floats.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_update(
    stack: *mut SfStack,
    h: *const f32,
    width: usize,
    push: f32,
    pop: f32,
    noop: f32,
) -> SfStatus {
    guard(|| {
        let s = stack.as_mut().ok_or_else(|| null("stack"))?;
        let h = slice(h, width, "h")?;
        let a = ActionDistribution::new(push, pop, noop)?;
        s.state = stack::update(&s.state, h, &a, s.structure)?;
        Ok(())
    })
}

/// Copy the `slots × width` values (slot 0 first) into `out`.
///
/// # Safety
/// `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_values(stack: *const SfStack, out: *mut f32, out_len: usize) -> SfStatus {
    guard(|| {
        let s = stack.as_ref().ok_or_else(|| null("stack"))?;
        let v = s.state.values();
        if out_len < v.len() {
            return Err(too_small(v.len(), out_len));
        }
        slice_mut(out, v.len(), "out")?.copy_from_slice(v);
        Ok(())
    })
}

/// Copy the activation mask (`slots` floats) into `out`.
///
/// # Safety
/// `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_mask(stack: *const SfStack, out: *mut f32, out_len: usize) -> SfStatus {
    guard(|| {
        let s = stack.as_ref().ok_or_else(|| null("stack"))?;
        let m = s.state.mask();
        if out_len < m.len() {
            return Err(too_small(m.len(), out_len));
        }
        slice_mut(out, m.len(), "out")?.copy_from_slice(m);
        Ok(())
    })
}

/// Number of slots, or 0 for NULL.
///
/// # Safety
/// `stack` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_slots(stack: *const SfStack) -> usize {
    stack.as_ref().map_or(0, |s| s.state.slots())
}

/// Slot width, or 0 for NULL.
///
/// # Safety
/// `stack` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_stack_width(stack: *const SfStack) -> usize {
    stack.as_ref().map_or(0, |s| s.state.width())
}
