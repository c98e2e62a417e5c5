#![allow(clippy::field_reassign_with_default)]

use std::ffi::{CStr, CString};
use std::ptr;

use stackformer::model::{checkpoint, Model, ModelConfig};
use stackformer_ffi::*;

fn last_error() -> String {
    let p = sf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_model() -> Model<f32> {
    let mut cfg = ModelConfig::default();
    cfg.vocab_size = 7;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_attn_heads = 2;
    cfg.ffn_dim = 32;
    cfg.stack.slots = 4;
    cfg.stack.heads = 2;
    cfg.stack.head_width = 4;
    Model::new(cfg, 3).unwrap()
}

#[test]
fn stack_handle_push_pop() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(sf_stack_new(3, 2, SfStructure::Stack, &mut s), SfStatus::Ok);
        assert_eq!(sf_stack_slots(s), 3);
        assert_eq!(sf_stack_width(s), 2);
        let h = [1.0f32, 2.0];
        assert_eq!(sf_stack_update(s, h.as_ptr(), 2, 1.0, 0.0, 0.0), SfStatus::Ok);
        let h = [3.0f32, 4.0];
        assert_eq!(sf_stack_update(s, h.as_ptr(), 2, 0.5, 0.0, 0.5), SfStatus::Ok);
        let mut v = [0.0f32; 6];
        assert_eq!(sf_stack_values(s, v.as_mut_ptr(), v.len()), SfStatus::Ok);
        assert_eq!(v, [2.0, 3.0, 0.5, 1.0, 0.0, 0.0]);
        let mut m = [0.0f32; 3];
        assert_eq!(sf_stack_mask(s, m.as_mut_ptr(), 3), SfStatus::Ok);
        assert_eq!(m, [1.0, 0.5, 0.0]);
        sf_stack_free(s);
    }
}

#[test]
fn stack_errors_are_reported() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(sf_stack_new(0, 2, SfStructure::Queue, &mut s), SfStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert_eq!(sf_stack_new(2, 2, SfStructure::Queue, &mut s), SfStatus::Ok);
        assert!(sf_last_error_message().is_null());
        let h = [1.0f32, 2.0, 3.0];
        assert_eq!(sf_stack_update(s, h.as_ptr(), 3, 1.0, 0.0, 0.0), SfStatus::DimensionMismatch);
        assert_eq!(sf_stack_update(s, h.as_ptr(), 2, 0.7, 0.7, 0.0), SfStatus::InvalidArgument);
        assert_eq!(sf_stack_update(s, ptr::null(), 2, 1.0, 0.0, 0.0), SfStatus::NullPointer);
        let h = [f32::NAN, 0.0];
        assert_eq!(sf_stack_update(s, h.as_ptr(), 2, 1.0, 0.0, 0.0), SfStatus::NonFinite);
        let mut v = [0.0f32; 3];
        assert_eq!(sf_stack_values(s, v.as_mut_ptr(), 3), SfStatus::BufferTooSmall);
        assert_eq!(sf_stack_update(ptr::null_mut(), h.as_ptr(), 2, 1.0, 0.0, 0.0), SfStatus::NullPointer);
        sf_stack_free(s);
        sf_stack_free(ptr::null_mut());
    }
}

#[test]
fn model_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = tiny_model();
    checkpoint::save(&model, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(sf_model_load(cpath.as_ptr(), &mut m), SfStatus::Ok);
        assert_eq!(sf_model_vocab_size(m), 7);

        let toks = [0u32, 3, 4, 1];
        let mut logits = vec![0.0f32; 4 * 7];
        assert_eq!(sf_model_forward(m, toks.as_ptr(), 4, logits.as_mut_ptr(), logits.len()), SfStatus::Ok);
        assert_eq!(logits, model.forward(&toks).unwrap());
        assert_eq!(sf_model_forward(m, toks.as_ptr(), 4, logits.as_mut_ptr(), 5), SfStatus::BufferTooSmall);
        let bad = [9u32];
        assert_eq!(sf_model_forward(m, bad.as_ptr(), 1, logits.as_mut_ptr(), 7), SfStatus::InvalidArgument);

        let mut out = [0u32; 5];
        let mut n = 0usize;
        assert_eq!(sf_model_generate(m, toks.as_ptr(), 2, 5, -1, out.as_mut_ptr(), 5, &mut n), SfStatus::Ok);
        assert_eq!(n, 5);
        assert_eq!(out.to_vec(), model.generate(&toks[..2], 5, None).unwrap());

        let copy = CString::new(dir.path().join("copy.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(sf_model_save(m, copy.as_ptr()), SfStatus::Ok);
        sf_model_free(m);
    }
}

#[test]
fn model_load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
        assert_eq!(sf_model_load(missing.as_ptr(), &mut m), SfStatus::Io);
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(sf_model_load(junk.as_ptr(), &mut m), SfStatus::Checkpoint);
        assert!(m.is_null());
        assert_eq!(sf_model_load(ptr::null(), &mut m), SfStatus::NullPointer);
        assert_eq!(sf_model_vocab_size(ptr::null()), 0);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/stackformer.h");
    for sym in [
        "sf_last_error_message",
        "sf_model_load",
        "sf_model_save",
        "sf_model_free",
        "sf_model_forward",
        "sf_model_generate",
        "sf_stack_new",
        "sf_stack_update",
        "sf_stack_values",
        "sf_stack_mask",
        "typedef struct SfModel SfModel",
        "SF_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}
