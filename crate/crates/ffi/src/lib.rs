//! C interface to the metric kernels, the calibration losses and the staged
//! pipeline.
//!
//! Every function returns a [`CalsetStatus`]. Results go through out-pointers,
//! which are left untouched on failure. After a non-zero status,
//! [`calset_last_error`] returns a message for the calling thread.
//! Strings handed out by the library must be released with
//! [`calset_string_free`], and run handles with [`calset_run_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use calset::config::Config;
use calset::losses::{self, ContrastiveOptions};
use calset::metrics;
use calset::model::PoolKind;
use calset::pipeline::Run;
use calset::selection::StrategyId;

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalsetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Failed = 4,
    Panic = 5,
}

/// A pipeline run bound to a working directory and a config.
pub struct CalsetRun {
    run: Run,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(CalsetStatus, String);

impl Fail {
    fn arg(msg: impl std::fmt::Display) -> Self {
        Fail(CalsetStatus::InvalidArgument, msg.to_string())
    }
    fn failed(msg: impl std::fmt::Display) -> Self {
        Fail(CalsetStatus::Failed, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CalsetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CalsetStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CalsetStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CalsetStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(CalsetStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(CalsetStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(CalsetStatus::NullPointer, format!("{name} is null")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|e| Fail::failed(format!("output contains a nul byte: {e}")))
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn calset_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn calset_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// ROUGE-n F1 of `hypothesis` against `reference`.
///
/// # Safety
/// Strings must be nul-terminated; `out_f1` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_rouge_n(
    hypothesis: *const c_char,
    reference: *const c_char,
    n: usize,
    out_f1: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let h = str_arg(hypothesis, "hypothesis")?;
        let r = str_arg(reference, "reference")?;
        let out = out_arg(out_f1, "out_f1")?;
        *out = metrics::rouge_n(h, r, n).map_err(Fail::arg)?.f1;
        Ok(())
    })
}

/// ROUGE-L F1 of `hypothesis` against `reference`.
///
/// # Safety
/// Strings must be nul-terminated; `out_f1` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_rouge_l(
    hypothesis: *const c_char,
    reference: *const c_char,
    out_f1: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let h = str_arg(hypothesis, "hypothesis")?;
        let r = str_arg(reference, "reference")?;
        *out_arg(out_f1, "out_f1")? = metrics::rouge_l(h, r).f1;
        Ok(())
    })
}

/// Extractive fragment coverage and density of `summary` against `source`.
///
/// # Safety
/// Strings must be nul-terminated; both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_fragments(
    source: *const c_char,
    summary: *const c_char,
    out_coverage: *mut f64,
    out_density: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let src = str_arg(source, "source")?;
        let sum = str_arg(summary, "summary")?;
        let cov = out_arg(out_coverage, "out_coverage")?;
        let den = out_arg(out_density, "out_density")?;
        let f = metrics::extractive_fragments(src, sum);
        *cov = f.coverage;
        *den = f.density;
        Ok(())
    })
}

/// Smoothed sentence BLEU of `candidate` against `reference`.
///
/// # Safety
/// Strings must be nul-terminated; `out_bleu` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_bleu(
    candidate: *const c_char,
    reference: *const c_char,
    out_bleu: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let c = str_arg(candidate, "candidate")?;
        let r = str_arg(reference, "reference")?;
        *out_arg(out_bleu, "out_bleu")? = calset::analysis::bleu(c, r);
        Ok(())
    })
}

/// Negative summed token log-probability.
///
/// # Safety
/// `token_logprobs` must point to `len` values; `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_mle_loss(token_logprobs: *const f64, len: usize, out_loss: *mut f64) -> CalsetStatus {
    guard(|| {
        let lp = slice_arg(token_logprobs, len, "token_logprobs")?;
        *out_arg(out_loss, "out_loss")? = losses::mle_loss(lp).map_err(Fail::arg)?;
        Ok(())
    })
}

/// Length-normalized sequence score `tau_scale * sum(lp) / len^alpha`.
///
/// # Safety
/// `token_logprobs` must point to `len` values; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_length_normalized_score(
    token_logprobs: *const f64,
    len: usize,
    tau_scale: f64,
    alpha: f64,
    out_score: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let lp = slice_arg(token_logprobs, len, "token_logprobs")?;
        *out_arg(out_score, "out_score")? = losses::length_normalized_score(lp, tau_scale, alpha).map_err(Fail::arg)?;
        Ok(())
    })
}

/// Pairwise margin rank loss over scores listed best first. When `out_grad`
/// is not null it receives `len` partial derivatives.
///
/// # Safety
/// `scores` must point to `len` values; `out_grad`, if given, to `len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn calset_margin_rank_loss(
    scores: *const f64,
    len: usize,
    lambda_margin: f64,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let s = slice_arg(scores, len, "scores")?;
        let out = out_arg(out_loss, "out_loss")?;
        if !lambda_margin.is_finite() || lambda_margin < 0.0 {
            return Err(Fail::arg(format!("lambda_margin must be finite and >= 0, got {lambda_margin}")));
        }
        *out = losses::margin_rank_loss(s, lambda_margin);
        if !out_grad.is_null() && len > 0 {
            std::slice::from_raw_parts_mut(out_grad, len).copy_from_slice(&losses::margin_rank_grad(s, lambda_margin));
        }
        Ok(())
    })
}

/// Latent-alignment contrastive loss. Vectors are row-major, `dim` values each.
///
/// # Safety
/// `positives` must hold `n_pos * dim` values and `negatives` `n_neg * dim`.
#[no_mangle]
pub unsafe extern "C" fn calset_contrastive_loss(
    positives: *const f64,
    n_pos: usize,
    negatives: *const f64,
    n_neg: usize,
    dim: usize,
    temperature: f64,
    out_loss: *mut f64,
) -> CalsetStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail::arg("dim must be >= 1"));
        }
        let total = |n: usize| n.checked_mul(dim).ok_or_else(|| Fail::arg("vector count overflows"));
        let pos = slice_arg(positives, total(n_pos)?, "positives")?;
        let neg = slice_arg(negatives, total(n_neg)?, "negatives")?;
        let out = out_arg(out_loss, "out_loss")?;
        let rows = |flat: &[f64]| flat.chunks(dim).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let opts = ContrastiveOptions { temperature, ..ContrastiveOptions::default() };
        *out = losses::contrastive_loss(&rows(pos), &rows(neg), &opts).map_err(Fail::arg)?.loss;
        Ok(())
    })
}

/// ConSeq loss over sequence log-likelihoods of positives and negatives.
///
/// # Safety
/// Inputs must point to `n_pos` and `n_neg` values; `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_conseq_loss(
    positive_ll: *const f64,
    n_pos: usize,
    negative_ll: *const f64,
    n_neg: usize,
    out_loss: *mut f64,
) -> CalsetStatus {
    guard(|| {
        let pos = slice_arg(positive_ll, n_pos, "positive_ll")?;
        let neg = slice_arg(negative_ll, n_neg, "negative_ll")?;
        *out_arg(out_loss, "out_loss")? = losses::conseq_loss(pos, neg).map_err(Fail::arg)?.loss;
        Ok(())
    })
}

/// Opens a run in `workdir`. `config_path` may be null for built-in defaults.
///
/// # Safety
/// Strings must be nul-terminated; `out_run` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calset_run_open(
    workdir: *const c_char,
    config_path: *const c_char,
    offline: bool,
    out_run: *mut *mut CalsetRun,
) -> CalsetStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(workdir, "workdir")?);
        let config = if config_path.is_null() {
            Config::default()
        } else {
            Config::load(str_arg(config_path, "config_path")?.as_ref()).map_err(Fail::arg)?
        };
        let out = out_arg(out_run, "out_run")?;
        *out = Box::into_raw(Box::new(CalsetRun { run: Run::new(dir, config, offline) }));
        Ok(())
    })
}

/// Releases a run handle. Null is ignored.
///
/// # Safety
/// `run` must come from [`calset_run_open`] and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn calset_run_free(run: *mut CalsetRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Hex SHA-256 of the run's config, as recorded in the manifest.
///
/// # Safety
/// `run` must be a live handle; release the string with [`calset_string_free`].
#[no_mangle]
pub unsafe extern "C" fn calset_run_config_hash(run: *const CalsetRun, out_hash: *mut *mut c_char) -> CalsetStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| Fail(CalsetStatus::NullPointer, "run is null".into()))?;
        *out_arg(out_hash, "out_hash")? = to_c_string(r.run.config.hash())?;
        Ok(())
    })
}

unsafe fn kind_arg(kind: *const c_char) -> Result<PoolKind, Fail> {
    str_arg(kind, "kind")?.parse::<PoolKind>().map_err(Fail::arg)
}

/// Runs every stage from entity indexing to the reports.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn calset_run_all(run: *const CalsetRun) -> CalsetStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| Fail(CalsetStatus::NullPointer, "run is null".into()))?;
        r.run.run_all().map_err(|e| Fail::failed(format!("{e:#}")))
    })
}

/// Selects sets for one strategy over an already normalized pool and writes
/// the number of sets to `out_sets`.
///
/// # Safety
/// `run` must be a live handle; strings must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn calset_run_select(
    run: *const CalsetRun,
    kind: *const c_char,
    strategy: *const c_char,
    out_sets: *mut usize,
) -> CalsetStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| Fail(CalsetStatus::NullPointer, "run is null".into()))?;
        let kind = kind_arg(kind)?;
        let strategy: StrategyId = str_arg(strategy, "strategy")?.parse().map_err(Fail::arg)?;
        let out = out_arg(out_sets, "out_sets")?;
        *out = r.run.select(kind, &[strategy]).map_err(|e| Fail::failed(format!("{e:#}")))?;
        Ok(())
    })
}

/// Renders the statistics and correlation report for a pool kind.
///
/// # Safety
/// `run` must be a live handle; release the string with [`calset_string_free`].
#[no_mangle]
pub unsafe extern "C" fn calset_run_report(
    run: *const CalsetRun,
    kind: *const c_char,
    out_report: *mut *mut c_char,
) -> CalsetStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| Fail(CalsetStatus::NullPointer, "run is null".into()))?;
        let kind = kind_arg(kind)?;
        let out = out_arg(out_report, "out_report")?;
        *out = to_c_string(r.run.report(kind, None).map_err(|e| Fail::failed(format!("{e:#}")))?)?;
        Ok(())
    })
}
