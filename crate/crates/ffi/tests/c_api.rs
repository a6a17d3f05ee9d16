use std::ffi::{c_char, CStr, CString};
use std::ptr;

use ssr_core::trainer::{ExperimentConfig, Mode};
use ssr_ffi::*;

fn last_error() -> String {
    let p = ssr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { ssr_string_free(p) };
    s
}

fn tiny_toml() -> String {
    ExperimentConfig {
        train_size: 60,
        val_size: 20,
        test_size: 20,
        mono_size: 150,
        embed_dim: 12,
        hidden_dim: 12,
        lm_embed_dim: 12,
        lm_hidden_dim: 12,
        vse_embed_dim: 12,
        vse_hidden_dim: 12,
        sentence_joint_dim: 12,
        concept_joint_dim: 8,
        epochs_lm: 1,
        epochs_vse: 1,
        epochs_captioner: 2,
        epochs_rl: 1,
        batch_pretrain: 32,
        batch_rl: 32,
        modes: vec![Mode::Baseline, Mode::Flc],
        ..ExperimentConfig::desk()
    }
    .to_toml()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ssr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut cfg: *mut SsrConfig = ptr::null_mut();
    assert_eq!(unsafe { ssr_config_preset(ptr::null(), &mut cfg) }, SsrStatus::NullPointer);
    assert!(last_error().contains("name"));
    let name = cstr("desk");
    assert_eq!(unsafe { ssr_config_preset(name.as_ptr(), ptr::null_mut()) }, SsrStatus::NullPointer);
    assert_eq!(unsafe { ssr_config_set_seed(ptr::null_mut(), 3) }, SsrStatus::NullPointer);
    let mut out = SsrScores::default();
    assert_eq!(
        unsafe { ssr_run_evaluate(ptr::null(), name.as_ptr(), 1, &mut out) },
        SsrStatus::NullPointer
    );
    assert_eq!(unsafe { ssr_gradcheck(0, 1, ptr::null_mut(), ptr::null_mut()) }, SsrStatus::NullPointer);
    unsafe {
        ssr_config_free(ptr::null_mut());
        ssr_run_free(ptr::null_mut());
        ssr_string_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_codes() {
    let mut cfg: *mut SsrConfig = ptr::null_mut();
    let bad = cstr("enormous");
    assert_eq!(unsafe { ssr_config_preset(bad.as_ptr(), &mut cfg) }, SsrStatus::InvalidArgument);
    assert!(last_error().contains("enormous"));
    assert!(cfg.is_null());

    let toml = cstr("not_a_key = 3");
    assert_eq!(unsafe { ssr_config_from_toml(toml.as_ptr(), &mut cfg) }, SsrStatus::InvalidArgument);

    let path = cstr("/definitely/not/here.toml");
    assert_eq!(unsafe { ssr_config_load(path.as_ptr(), &mut cfg) }, SsrStatus::NotFound);

    let mut run: *mut SsrRun = ptr::null_mut();
    let dir = tempfile::tempdir().unwrap();
    let d = cstr(dir.path().to_str().unwrap());
    assert_eq!(unsafe { ssr_run_open(d.as_ptr(), &mut run) }, SsrStatus::NotFound);
    assert!(run.is_null());
}

#[test]
fn config_round_trip_and_setters() {
    let mut cfg: *mut SsrConfig = ptr::null_mut();
    let name = cstr("published");
    assert_eq!(unsafe { ssr_config_preset(name.as_ptr(), &mut cfg) }, SsrStatus::Ok);
    assert!(ssr_last_error().is_null());
    assert_eq!(unsafe { ssr_config_set_seed(cfg, 42) }, SsrStatus::Ok);
    assert_eq!(unsafe { ssr_config_set_noise(cfg, 0.1, 0.2) }, SsrStatus::Ok);
    assert_eq!(unsafe { ssr_config_set_noise(cfg, 2.0, 0.2) }, SsrStatus::InvalidArgument);
    let mut text: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { ssr_config_to_toml(cfg, &mut text) }, SsrStatus::Ok);
    let parsed = ExperimentConfig::from_toml(&take_string(text)).unwrap();
    assert_eq!(parsed.seed, 42);
    assert_eq!((parsed.disfluency_rate, parsed.irrelevancy_rate), (0.1, 0.2));
    unsafe { ssr_config_free(cfg) };
}

#[test]
fn gradcheck_passes() {
    let (mut err, mut ok) = (f64::NAN, false);
    assert_eq!(unsafe { ssr_gradcheck(1, 1, &mut err, &mut ok) }, SsrStatus::Ok);
    assert!(ok);
    assert!(err < 1e-4);
}

#[test]
fn tiny_experiment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = cstr(dir.path().to_str().unwrap());
    let toml = cstr(&tiny_toml());
    let mut cfg: *mut SsrConfig = ptr::null_mut();
    assert_eq!(unsafe { ssr_config_from_toml(toml.as_ptr(), &mut cfg) }, SsrStatus::Ok);
    assert_eq!(unsafe { ssr_run_experiment(cfg, d.as_ptr()) }, SsrStatus::Ok, "{}", last_error());
    unsafe { ssr_config_free(cfg) };

    let mut run: *mut SsrRun = ptr::null_mut();
    assert_eq!(unsafe { ssr_run_open(d.as_ptr(), &mut run) }, SsrStatus::Ok);

    let mode = cstr("flc");
    let mut scores = SsrScores::default();
    assert_eq!(unsafe { ssr_run_evaluate(run, mode.as_ptr(), 2, &mut scores) }, SsrStatus::Ok);
    assert_eq!(scores.items, 20);
    assert!(scores.cider.is_finite() && scores.cider >= 0.0);
    assert!(scores.bleu.iter().all(|b| (0.0..=1.0).contains(b)));
    assert!(scores.r_flc <= 0.0);

    let mut caption: *mut c_char = ptr::null_mut();
    let unknown = cstr("ssr");
    // ssr was not trained in this run.
    assert_eq!(unsafe { ssr_run_generate(run, unknown.as_ptr(), 0, 2, &mut caption) }, SsrStatus::NotFound);

    let bogus = cstr("best");
    assert_eq!(unsafe { ssr_run_generate(run, bogus.as_ptr(), 0, 2, &mut caption) }, SsrStatus::InvalidArgument);

    let base = cstr("baseline");
    let id = ssr_core::trainer::RunDir::new(dir.path()).load_corpus().unwrap().dataset.test[0].image.image_id;
    assert_eq!(unsafe { ssr_run_generate(run, base.as_ptr(), id, 3, &mut caption) }, SsrStatus::Ok);
    let text = take_string(caption);
    assert!(!text.is_empty() && !text.contains('\n'));
    assert_eq!(unsafe { ssr_run_generate(run, base.as_ptr(), u64::MAX, 3, &mut caption) }, SsrStatus::NotFound);
    unsafe { ssr_run_free(run) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ssr.h")).unwrap();
    for name in [
        "ssr_version",
        "ssr_last_error",
        "ssr_string_free",
        "ssr_config_preset",
        "ssr_config_from_toml",
        "ssr_config_load",
        "ssr_config_to_toml",
        "ssr_config_set_seed",
        "ssr_config_set_noise",
        "ssr_config_free",
        "ssr_make_dataset",
        "ssr_run_experiment",
        "ssr_run_open",
        "ssr_run_free",
        "ssr_run_generate",
        "ssr_run_evaluate",
        "ssr_gradcheck",
        "typedef struct SsrConfig SsrConfig",
        "typedef struct SsrRun SsrRun",
        "SSR_STATUS_NULL_POINTER = 1",
        "SSR_STATUS_PANIC = 6",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
