use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use nmst::checkpoint::{round_to_f32, save_checkpoint, DataRecord, ModelCheckpoint};
use nmst::decoding::{decode, teacher_forced_eos, DecoderSpec};
use nmst::net::{Architecture, CellKind, NeuralModel};
use nmst::{half_life, ConditionalModel, Context, Head, HeadKind, Vocabulary};
use nmst_ffi::*;

const EPS: f64 = 0.1;

fn model() -> NeuralModel {
    let arch = Architecture {
        cell: CellKind::Lstm,
        layers: 1,
        hidden: 8,
        tie_embeddings: true,
    };
    let head = Head::new(HeadKind::Nmst, Some(EPS)).unwrap();
    let mut m = NeuralModel::new(Vocabulary::synthetic(6).unwrap(), arch, head, 3).unwrap();
    round_to_f32(&mut m);
    m
}

fn write_model(dir: &Path) -> PathBuf {
    let path = dir.join("m.nmst");
    let ckpt = ModelCheckpoint {
        model: model(),
        data: DataRecord::default(),
    };
    save_checkpoint(&path, &ckpt).unwrap();
    path
}

fn load(path: &Path) -> *mut NmstModel {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { nmst_model_load(c.as_ptr(), &mut m) }, NmstStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = nmst_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn generations_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let handle = load(&write_model(dir.path()));
    let rust = model();
    unsafe {
        assert_eq!(nmst_model_vocab_size(handle), 6);
        assert_eq!(nmst_model_eos_id(handle), 0);
        let (mut kind, mut eps) = (NmstHeadKind::Vanilla, 0.0);
        assert_eq!(nmst_model_head(handle, &mut kind, &mut eps), NmstStatus::Ok);
        assert_eq!(kind, NmstHeadKind::NonMonotonic);
        assert_eq!(eps, EPS);
        let mut len = 0;
        let tok = nmst_model_token(handle, 0, &mut len);
        assert_eq!(std::slice::from_raw_parts(tok, len), rust.vocab().token(0).unwrap().as_bytes());
        assert!(nmst_model_token(handle, 6, &mut len).is_null());
    }
    let ctx_ids = [1u32, 2, 3];
    let ctx = Context::new(vec![1, 2, 3], 0).unwrap();
    for (decoder, seed) in [("greedy", 0), ("top-k:2", 5), ("nucleus:0.4", 9), ("beam:3", 0)] {
        let spec = DecoderSpec::new(decoder.parse().unwrap(), 50, seed).unwrap();
        let want = decode(&rust, &ctx, &spec).unwrap();
        let d = CString::new(decoder).unwrap();
        let mut g = ptr::null_mut();
        let status = unsafe { nmst_generate(handle, ctx_ids.as_ptr(), 3, d.as_ptr(), 50, seed, &mut g) };
        assert_eq!(status, NmstStatus::Ok, "{decoder}");
        unsafe {
            let mut n = 0;
            let toks = std::slice::from_raw_parts(nmst_generation_tokens(g, &mut n), n);
            let got: Vec<usize> = toks.iter().map(|&t| t as usize).collect();
            assert_eq!(got, want.sequence.token_ids(), "{decoder}");
            let eos = std::slice::from_raw_parts(nmst_generation_eos_probs(g, &mut n), n);
            assert_eq!(eos, &want.eos_probs[..]);
            assert_eq!(nmst_generation_log_prob(g), want.log_prob);
            assert!(nmst_generation_terminated(g));
            assert!(got.len() <= half_life(EPS) + 3);
            nmst_generation_free(g);
        }
    }
    let forced = [4u32, 5, 1, 0];
    let mut out = [0.0; 4];
    let status = unsafe { nmst_eos_probabilities(handle, ctx_ids.as_ptr(), 3, forced.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(status, NmstStatus::Ok);
    assert_eq!(out.to_vec(), teacher_forced_eos(&rust, &ctx, &[4, 5, 1, 0]));
    unsafe { nmst_model_free(handle) };
}

#[test]
fn errors_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let handle = load(&write_model(dir.path()));
    let mut g = ptr::null_mut();
    let bad = CString::new("top-k:0").unwrap();
    let s = unsafe { nmst_generate(handle, ptr::null(), 0, bad.as_ptr(), 10, 0, &mut g) };
    assert_eq!(s, NmstStatus::DecoderSpec);
    assert!(g.is_null());
    assert!(last_error().contains("top-k:0"), "{}", last_error());

    let greedy = CString::new("greedy").unwrap();
    let ids = [9u32];
    let s = unsafe { nmst_generate(handle, ids.as_ptr(), 1, greedy.as_ptr(), 10, 0, &mut g) };
    assert_eq!(s, NmstStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));

    let s = unsafe { nmst_generate(handle, ptr::null(), 2, greedy.as_ptr(), 10, 0, &mut g) };
    assert_eq!(s, NmstStatus::NullArgument);
    let s = unsafe { nmst_generate(ptr::null(), ptr::null(), 0, greedy.as_ptr(), 10, 0, &mut g) };
    assert_eq!(s, NmstStatus::NullArgument);

    let s = unsafe { nmst_generate(handle, ptr::null(), 0, greedy.as_ptr(), 10, 0, &mut g) };
    assert_eq!(s, NmstStatus::Ok);
    assert!(nmst_last_error().is_null());
    unsafe { nmst_generation_free(g) };

    let mid_eos = [0u32, 1];
    let mut out = [0.0; 2];
    let s = unsafe { nmst_eos_probabilities(handle, ptr::null(), 0, mid_eos.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(s, NmstStatus::InvalidArgument);
    unsafe { nmst_model_free(handle) };

    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { nmst_model_load(missing.as_ptr(), &mut m) }, NmstStatus::Io);
    assert!(m.is_null());
    let junk = dir.path().join("junk");
    std::fs::write(&junk, b"not a model").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nmst_model_load(junk.as_ptr(), &mut m) }, NmstStatus::Checkpoint);
    assert!(last_error().contains("magic"));
    assert_eq!(unsafe { nmst_model_load(ptr::null(), &mut m) }, NmstStatus::NullArgument);
}

#[test]
fn half_life_and_null_handles() {
    assert_eq!(nmst_half_life(0.5), 2);
    assert_eq!(nmst_half_life(0.1), 7);
    assert_eq!(nmst_half_life(0.0), 0);
    assert_eq!(nmst_half_life(1.0), 0);
    unsafe {
        nmst_model_free(ptr::null_mut());
        nmst_generation_free(ptr::null_mut());
        assert_eq!(nmst_model_vocab_size(ptr::null()), 0);
        assert!(nmst_generation_tokens(ptr::null(), ptr::null_mut()).is_null());
        assert!(nmst_generation_log_prob(ptr::null()).is_nan());
    }
}
