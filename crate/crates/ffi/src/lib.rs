//! C ABI over `ssr-core`.
//!
//! Handles are opaque pointers created by `*_new`/`*_open`-style functions
//! and released with the matching `*_free`. Every fallible function returns
//! an [`SsrStatus`]; on failure [`ssr_last_error`] describes the problem for
//! the calling thread. Strings returned through out-parameters are owned by
//! the caller and released with [`ssr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ssr_core::decoding::beam_search;
use ssr_core::gradsuite;
use ssr_core::trainer::{evaluate_corpus, make_dataset, run_experiment, Corpus, ExperimentConfig, Mode, RunDir};
use ssr_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Runtime = 5,
    Panic = 6,
}

/// Experiment configuration.
pub struct SsrConfig {
    inner: ExperimentConfig,
}

/// A run directory with its config and corpus loaded.
pub struct SsrRun {
    dir: RunDir,
    cfg: ExperimentConfig,
    corpus: Corpus,
}

/// Test-split scores of one captioner.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SsrScores {
    pub items: usize,
    pub bleu: [f64; 4],
    pub cider: f64,
    pub r_flc: f64,
    pub r_srlv: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> SsrStatus {
    match e {
        Error::Missing(_) => SsrStatus::NotFound,
        Error::Io { .. } | Error::Checkpoint { .. } => SsrStatus::Io,
        Error::Config(_)
        | Error::Invalid(_)
        | Error::Parse { .. }
        | Error::Empty(_)
        | Error::InvalidToken { .. }
        | Error::Dim { .. }
        | Error::Length { .. } => SsrStatus::InvalidArgument,
        Error::Autodiff(_) => SsrStatus::Runtime,
    }
}

struct Fail(SsrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SsrStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SsrStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid nul-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SsrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live value of `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `p` must be null or point to a live value of `T`.
unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// # Safety
/// `out` must be null or valid for a pointer write.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `out` must be null or valid for a pointer write.
unsafe fn emit_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|_| Fail(SsrStatus::Runtime, "string holds a nul byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn parse_mode(name: &str) -> Result<Mode, Fail> {
    name.parse::<Mode>().map_err(Fail::from)
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(v) => v,
    Err(_) => panic!("version has no interior nul"),
};

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ssr_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Message for the most recent failure on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ssr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Built-in configuration `"desk"` or `"published"`.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_preset(name: *const c_char, out: *mut *mut SsrConfig) -> SsrStatus {
    guard(|| {
        let inner = ExperimentConfig::preset(text(name, "name")?)?;
        emit(out, SsrConfig { inner })
    })
}

/// Configuration from TOML text.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_from_toml(toml: *const c_char, out: *mut *mut SsrConfig) -> SsrStatus {
    guard(|| {
        let inner = ExperimentConfig::from_toml(text(toml, "toml")?)?;
        inner.validate()?;
        emit(out, SsrConfig { inner })
    })
}

/// Configuration from a TOML file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_load(path: *const c_char, out: *mut *mut SsrConfig) -> SsrStatus {
    guard(|| {
        let p = PathBuf::from(text(path, "path")?);
        if !p.is_file() {
            return Err(Fail(SsrStatus::NotFound, format!("config file not found: {}", p.display())));
        }
        let inner = ExperimentConfig::load(&p)?;
        emit(out, SsrConfig { inner })
    })
}

/// The configuration as TOML; free the result with [`ssr_string_free`].
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_to_toml(cfg: *const SsrConfig, out: *mut *mut c_char) -> SsrStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        emit_string(out, c.inner.to_toml())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_set_seed(cfg: *mut SsrConfig, seed: u64) -> SsrStatus {
    guard(|| {
        handle_mut(cfg, "cfg")?.inner.seed = seed;
        Ok(())
    })
}

/// Noise rates of the pseudo-translator, each in `[0, 1]`.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_set_noise(cfg: *mut SsrConfig, disfluency: f64, irrelevancy: f64) -> SsrStatus {
    guard(|| {
        let c = handle_mut(cfg, "cfg")?;
        let mut next = c.inner.clone();
        next.disfluency_rate = disfluency;
        next.irrelevancy_rate = irrelevancy;
        next.validate()?;
        c.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssr_config_free(cfg: *mut SsrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generates the world, dataset and vocabularies into `dir`.
///
/// # Safety
/// `cfg` must be a live config handle; `dir` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ssr_make_dataset(cfg: *const SsrConfig, dir: *const c_char) -> SsrStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        c.inner.validate()?;
        make_dataset(&c.inner, &RunDir::new(text(dir, "dir")?))?;
        Ok(())
    })
}

/// Every training phase and mode of `cfg`, writing all artifacts into `dir`.
///
/// # Safety
/// `cfg` must be a live config handle; `dir` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ssr_run_experiment(cfg: *const SsrConfig, dir: *const c_char) -> SsrStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        run_experiment(&c.inner, &PathBuf::from(text(dir, "dir")?), &mut |_| {})?;
        Ok(())
    })
}

/// Opens a run directory holding at least a generated dataset.
///
/// # Safety
/// `dir` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_run_open(dir: *const c_char, out: *mut *mut SsrRun) -> SsrStatus {
    guard(|| {
        let dir = RunDir::new(text(dir, "dir")?);
        let cfg = dir
            .load_config()?
            .ok_or_else(|| Fail(SsrStatus::NotFound, format!("{}: no config.toml", dir.root.display())))?;
        let corpus = dir.load_corpus()?;
        emit(out, SsrRun { dir, cfg, corpus })
    })
}

/// # Safety
/// `run` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssr_run_free(run: *mut SsrRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Beam-decodes one image with the captioner trained under `mode`
/// (`"baseline"` is the pretrained one). Free the caption with
/// [`ssr_string_free`].
///
/// # Safety
/// `run` must be a live run handle, `mode` a nul-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_run_generate(
    run: *const SsrRun,
    mode: *const c_char,
    image_id: u64,
    beam: usize,
    out: *mut *mut c_char,
) -> SsrStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let mode = parse_mode(text(mode, "mode")?)?;
        let d = &r.corpus.dataset;
        let pair = d
            .train
            .iter()
            .chain(&d.val)
            .chain(&d.test)
            .find(|p| p.image.image_id == image_id)
            .ok_or_else(|| Fail(SsrStatus::NotFound, format!("no image with id {image_id}")))?;
        let model = r.dir.load_captioner(&r.dir.captioner_for(mode), &r.cfg, &r.corpus.vocab)?;
        let decoded = beam_search(&model, Some(&pair.image.features), beam, r.cfg.max_decode_len)?;
        emit_string(out, r.corpus.vocab.decode(decoded.caption.ids()).join(" "))
    })
}

/// Scores the `mode` captioner on the test split with beam size `beam`.
///
/// # Safety
/// `run` must be a live run handle, `mode` a nul-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_run_evaluate(
    run: *const SsrRun,
    mode: *const c_char,
    beam: usize,
    out: *mut SsrScores,
) -> SsrStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let mode = parse_mode(text(mode, "mode")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = r.dir.load_captioner(&r.dir.captioner_for(mode), &r.cfg, &r.corpus.vocab)?;
        let frozen = r.dir.load_frozen(&r.cfg, &r.corpus)?;
        let rewards = frozen.reward_models(&r.corpus, r.cfg.lambda)?;
        let rep = evaluate_corpus(
            &model,
            &r.corpus.dataset.test,
            &r.corpus.vocab,
            Some(&rewards),
            beam,
            r.cfg.max_decode_len,
        )?;
        *out = SsrScores {
            items: rep.items,
            bleu: rep.bleu,
            cider: rep.cider,
            r_flc: rep.r_flc,
            r_srlv: rep.r_srlv,
        };
        Ok(())
    })
}

/// Finite-difference check of every op and loss over `trials` random
/// instances. Writes the worst relative error; `*passed` is whether every
/// op stayed under the tolerance.
///
/// # Safety
/// `max_rel_err` and `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssr_gradcheck(seed: u64, trials: usize, max_rel_err: *mut f64, passed: *mut bool) -> SsrStatus {
    guard(|| {
        if max_rel_err.is_null() || passed.is_null() {
            return Err(null("out"));
        }
        let checks = gradsuite::run_suite(seed, trials)?;
        *max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        *passed = checks.iter().all(|c| c.passed());
        Ok(())
    })
}
