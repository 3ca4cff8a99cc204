//! C ABI for `periocular-eval`.
//!
//! Every fallible function returns a [`PeStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can be
//! read with [`pe_last_error_message`]. Template sets and fusion models are
//! exposed as opaque handles that must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::ptr;

use periocular_eval::divergence::{self, ProbabilityMap};
use periocular_eval::fusion::FusionModel;
use periocular_eval::metrics::{self, Metric};
use periocular_eval::{evaluation, protocol, DatasetManifest, Error, SampleKey, TemplateSet};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Dimension = 4,
    Duplicate = 5,
    Domain = 6,
    Usage = 7,
    Completeness = 8,
    Lookup = 9,
    Alignment = 10,
    Singular = 11,
    Scorer = 12,
    Degenerate = 13,
    Io = 14,
    Panic = 99,
}

/// Comparison metric selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeMetric {
    /// Cosine similarity.
    Cosine = 0,
    /// Chi-square distance, returned negated so that higher means more similar.
    Chi2 = 1,
}

/// Opaque set of embedding templates.
pub struct PeTemplateSet {
    inner: TemplateSet,
}

/// Opaque trained fusion model.
pub struct PeFusionModel {
    inner: FusionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(err: &Error) -> PeStatus {
    match err {
        Error::Parse { .. } => PeStatus::Parse,
        Error::Dimension { .. } => PeStatus::Dimension,
        Error::Duplicate(_) => PeStatus::Duplicate,
        Error::Domain(_) => PeStatus::Domain,
        Error::Usage(_) => PeStatus::Usage,
        Error::Completeness(_) => PeStatus::Completeness,
        Error::Lookup(_) => PeStatus::Lookup,
        Error::Alignment(_) => PeStatus::Alignment,
        Error::Singular(_) => PeStatus::Singular,
        Error::Scorer { .. } => PeStatus::Scorer,
        Error::Degenerate(_) => PeStatus::Degenerate,
        Error::Io { .. } => PeStatus::Io,
    }
}

struct Failure(PeStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PeStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error or panic, and maps it to a status code.
fn guard<F>(f: F) -> PeStatus
where
    F: FnOnce() -> Result<(), Failure> + UnwindSafe,
{
    match catch_unwind(f) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PeStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PeStatus::Panic
        }
    }
}

unsafe fn slice<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn string<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(PeStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn pe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `x` and `y` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_cosine_similarity(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        let value = metrics::cosine_similarity(slice(x, len, "x")?, slice(y, len, "y")?)?;
        write(out, value, "out")
    })
}

/// Chi-square distance of two non-negative vectors of length `len`.
///
/// # Safety
/// `x` and `y` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_chi2_distance(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        let value = metrics::chi2_distance(slice(x, len, "x")?, slice(y, len, "y")?)?;
        write(out, value, "out")
    })
}

/// Equal error rate (a fraction in [0, 1]) and the threshold where it occurs.
///
/// # Safety
/// `genuine` and `impostor` must point to the given number of readable
/// doubles; both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_compute_eer(
    genuine: *const f64,
    n_genuine: usize,
    impostor: *const f64,
    n_impostor: usize,
    out_eer: *mut f64,
    out_threshold: *mut f64,
) -> PeStatus {
    guard(|| {
        let result = evaluation::compute_eer(
            slice(genuine, n_genuine, "genuine")?,
            slice(impostor, n_impostor, "impostor")?,
        )?;
        write(out_eer, result.eer, "out_eer")?;
        write(out_threshold, result.eer_threshold, "out_threshold")
    })
}

/// Percent change of a fused EER relative to the best individual EER.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_relative_change(
    fused_eer: f64,
    best_individual_eer: f64,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        write(
            out,
            evaluation::relative_change(fused_eer, best_individual_eer)?,
            "out",
        )
    })
}

/// Jensen–Shannon divergence (natural log) of two non-negative maps of
/// `len` cells. Each map is normalised to unit mass first.
///
/// # Safety
/// `p` and `q` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_jsd(
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        let p = to_distribution(slice(p, len, "p")?)?;
        let q = to_distribution(slice(q, len, "q")?)?;
        write(out, divergence::jsd(&p, &q)?, "out")
    })
}

fn to_distribution(values: &[f64]) -> Result<ProbabilityMap, Failure> {
    let h = periocular_eval::Heatmap::new(values.len(), 1, values.to_vec())?;
    Ok(divergence::normalize(&h)?)
}

/// Genuine and impostor pair counts of the full protocol for `subjects`
/// subjects and `distances` acquisition distances.
///
/// # Safety
/// Both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_protocol_counts(
    subjects: usize,
    distances: usize,
    out_genuine: *mut u64,
    out_impostor: *mut u64,
) -> PeStatus {
    guard(|| {
        let (g, i) = protocol::expected_counts(subjects, distances);
        write(out_genuine, g as u64, "out_genuine")?;
        write(out_impostor, i as u64, "out_impostor")
    })
}

/// Parses a template CSV against a manifest. On success `*out` owns a new
/// handle.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_templates_parse(
    manifest_text: *const c_char,
    csv_text: *const c_char,
    out: *mut *mut PeTemplateSet,
) -> PeStatus {
    guard(|| {
        let manifest = DatasetManifest::parse(string(manifest_text, "manifest_text")?)?;
        let inner =
            periocular_eval::model::parse_templates(string(csv_text, "csv_text")?, &manifest)?;
        write(out, Box::into_raw(Box::new(PeTemplateSet { inner })), "out")
    })
}

/// Number of templates in the set.
///
/// # Safety
/// `set` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn pe_templates_len(set: *const PeTemplateSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// Compares two templates named by file stem (`subject_s1_L_d3`).
///
/// # Safety
/// `set` must be a live handle; the stems must be NUL-terminated; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_templates_compare(
    set: *const PeTemplateSet,
    probe: *const c_char,
    gallery: *const c_char,
    metric: PeMetric,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let lookup = |stem: &str| -> Result<&[f64], Failure> {
            let key = SampleKey::from_file_stem(stem)
                .ok_or_else(|| Failure(PeStatus::Parse, format!("bad sample key {stem:?}")))?;
            let t = set
                .inner
                .get(&key)
                .ok_or_else(|| Error::Lookup(stem.to_string()))?;
            Ok(&t.vector)
        };
        let x = lookup(string(probe, "probe")?)?;
        let y = lookup(string(gallery, "gallery")?)?;
        let metric = match metric {
            PeMetric::Cosine => Metric::Cosine,
            PeMetric::Chi2 => Metric::Chi2,
        };
        write(out, metrics::similarity(metric, x, y, false)?, "out")
    })
}

/// Releases a template set. NULL is ignored.
///
/// # Safety
/// `set` must come from [`pe_templates_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pe_templates_free(set: *mut PeTemplateSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Parses a fusion model in the text format written by `fuse train`.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_fusion_model_parse(
    text: *const c_char,
    out: *mut *mut PeFusionModel,
) -> PeStatus {
    guard(|| {
        let inner = FusionModel::parse(string(text, "text")?)?;
        write(out, Box::into_raw(Box::new(PeFusionModel { inner })), "out")
    })
}

/// Builds a fusion model from a bias and `n` weights. Systems are named
/// `s1`, `s2`, and so on.
///
/// # Safety
/// `weights` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pe_fusion_model_new(
    bias: f64,
    weights: *const f64,
    n: usize,
    out: *mut *mut PeFusionModel,
) -> PeStatus {
    guard(|| {
        let weights = slice(weights, n, "weights")?.to_vec();
        let names = (1..=n).map(|i| format!("s{i}")).collect();
        let inner = FusionModel::new(bias, weights, names)?;
        write(out, Box::into_raw(Box::new(PeFusionModel { inner })), "out")
    })
}

/// Number of systems the model expects.
///
/// # Safety
/// `model` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn pe_fusion_model_systems(model: *const PeFusionModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.weights.len())
}

/// Fuses `n_trials` rows of `n_systems` scores (row-major) into `out`.
///
/// # Safety
/// `model` must be a live handle; `scores` must hold `n_trials * n_systems`
/// doubles and `out` room for `n_trials`.
#[no_mangle]
pub unsafe extern "C" fn pe_fusion_model_apply(
    model: *const PeFusionModel,
    scores: *const f64,
    n_trials: usize,
    n_systems: usize,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if n_systems != model.inner.weights.len() {
            return Err(Error::Usage(format!(
                "model expects {} systems, got {n_systems}",
                model.inner.weights.len()
            ))
            .into());
        }
        let total = n_trials
            .checked_mul(n_systems)
            .ok_or_else(|| Failure(PeStatus::Usage, "size overflow".into()))?;
        let scores = slice(scores, total, "scores")?;
        if n_trials > 0 && out.is_null() {
            return Err(null("out"));
        }
        for (t, row) in scores
            .chunks_exact(n_systems.max(1))
            .take(n_trials)
            .enumerate()
        {
            out.add(t).write(model.inner.fuse(row));
        }
        Ok(())
    })
}

/// Releases a fusion model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pe_fusion_model_free(model: *mut PeFusionModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
