//! C ABI for the personalization core.
//!
//! Handles are opaque pointers owned by this library; every `*_load`,
//! `*_extract`, `*_merge`, or `*_train` result must be released with the
//! matching `*_free`. Functions return [`TaskmixStatus`]; on failure a
//! thread-local message is retrievable via [`taskmix_last_error`]. Distinct
//! handles are independent and safe to use from different threads; a single
//! handle must not be used concurrently.

#![allow(clippy::too_many_arguments)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use taskmix::arch::ModelParams;
use taskmix::checkpoint;
use taskmix::error::Error;
use taskmix::loss::LossKind;
use taskmix::metrics;
use taskmix::net;
use taskmix::personalize::{self, CoefficientMatrix, PersonalizationConfig, Temperature};
use taskmix::sample::SampleSet;
use taskmix::taskvec::{self, TaskVector};
use taskmix::tensor::Tensor;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").expect("empty"));
}

/// Result codes mirroring the library's error kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskmixStatus {
    Ok = 0,
    NullArgument = 1,
    ConfigError = 2,
    DependencyError = 3,
    NumericalError = 4,
    ShapeError = 5,
    DegenerateInput = 6,
    Unpersonalizable = 7,
    StateError = 8,
    FormatError = 9,
    IoError = 10,
    Utf8Error = 11,
}

/// An owned model handle.
pub struct TaskmixModel {
    inner: ModelParams,
}

/// An owned task-vector handle.
pub struct TaskmixTaskVector {
    inner: TaskVector,
}

/// An owned coefficient-matrix handle.
pub struct TaskmixCoefficients {
    inner: CoefficientMatrix,
}

/// Personalization hyperparameters.
///
/// `temperature > 0` selects the softmax initialization, `0` the argmax
/// limit, and any negative value the uniform limit. `loss` is 0 for the
/// pairwise rank loss, 1 for mean squared error.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TaskmixTrainConfig {
    pub temperature: f64,
    pub start_lr: f64,
    pub end_lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub loss: i32,
    pub seed: u64,
}

fn set_error(err: &Error) -> TaskmixStatus {
    let status = match err {
        Error::Config(_) => TaskmixStatus::ConfigError,
        Error::Dependency(_) => TaskmixStatus::DependencyError,
        Error::Numerical(_) => TaskmixStatus::NumericalError,
        Error::ShapeMismatch { .. } | Error::DescriptorMismatch(_) => TaskmixStatus::ShapeError,
        Error::DegenerateInput(_) => TaskmixStatus::DegenerateInput,
        Error::Unpersonalizable(_) => TaskmixStatus::Unpersonalizable,
        Error::State(_) => TaskmixStatus::StateError,
        Error::Format(_) => TaskmixStatus::FormatError,
        Error::Io(_) => TaskmixStatus::IoError,
    };
    let msg =
        CString::new(err.to_string()).unwrap_or_else(|_| CString::new("error").expect("static"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
    status
}

fn fail(status: TaskmixStatus, msg: &str) -> TaskmixStatus {
    let msg = CString::new(msg).unwrap_or_else(|_| CString::new("error").expect("static"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
    status
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn taskmix_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn taskmix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn path_from(ptr: *const c_char) -> Result<std::path::PathBuf, TaskmixStatus> {
    if ptr.is_null() {
        return Err(fail(TaskmixStatus::NullArgument, "null path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => Err(fail(TaskmixStatus::Utf8Error, "path is not valid utf-8")),
    }
}

unsafe fn str_from<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, TaskmixStatus> {
    if ptr.is_null() {
        return Err(fail(TaskmixStatus::NullArgument, &format!("null {what}")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            TaskmixStatus::Utf8Error,
            &format!("{what} is not valid utf-8"),
        )
    })
}

unsafe fn sample_set(
    features: *const f64,
    scores: *const f64,
    count: usize,
    dim: usize,
) -> Result<SampleSet, TaskmixStatus> {
    if features.is_null() || scores.is_null() {
        return Err(fail(TaskmixStatus::NullArgument, "null sample buffer"));
    }
    let feats = std::slice::from_raw_parts(features, count * dim);
    let svals = std::slice::from_raw_parts(scores, count);
    let features = Tensor::matrix(count, dim, feats.to_vec()).map_err(|e| set_error(&e))?;
    let scores = Tensor::vector(svals.to_vec()).map_err(|e| set_error(&e))?;
    SampleSet::new(features, scores).map_err(|e| set_error(&e))
}

fn train_config(
    cfg: &TaskmixTrainConfig,
    shots: usize,
) -> Result<PersonalizationConfig, TaskmixStatus> {
    let temperature = if cfg.temperature > 0.0 {
        Temperature::Finite(cfg.temperature)
    } else if cfg.temperature == 0.0 {
        Temperature::BestFit
    } else {
        Temperature::Uniform
    };
    let loss_kind = match cfg.loss {
        0 => LossKind::Rank,
        1 => LossKind::Mse,
        other => {
            return Err(fail(
                TaskmixStatus::ConfigError,
                &format!("unknown loss code {other}"),
            ))
        }
    };
    let out = PersonalizationConfig {
        temperature,
        start_lr: cfg.start_lr,
        end_lr: cfg.end_lr,
        batch_size: cfg.batch_size,
        steps: cfg.steps,
        loss_kind,
        shots: shots.max(2),
    };
    out.validate().map_err(|e| set_error(&e))?;
    Ok(out)
}

macro_rules! try_ffi {
    ($expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

// ---- models -----------------------------------------------------------

/// Load a params checkpoint. On success `*out` owns the model.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_load(
    path: *const c_char,
    out: *mut *mut TaskmixModel,
) -> TaskmixStatus {
    if out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null output handle");
    }
    let path = try_ffi!(path_from(path));
    match checkpoint::load_params(&path) {
        Ok((_, inner)) => {
            *out = Box::into_raw(Box::new(TaskmixModel { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Write a params checkpoint under the given record id.
///
/// # Safety
/// `model` must be a live handle; `id` and `path` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_save(
    model: *const TaskmixModel,
    id: *const c_char,
    path: *const c_char,
) -> TaskmixStatus {
    if model.is_null() {
        return fail(TaskmixStatus::NullArgument, "null model");
    }
    let id = try_ffi!(str_from(id, "id"));
    let path = try_ffi!(path_from(path));
    match checkpoint::save_params(&(*model).inner, id, &path) {
        Ok(()) => TaskmixStatus::Ok,
        Err(e) => set_error(&e),
    }
}

/// Number of layer blocks, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_layer_count(model: *const TaskmixModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.layer_count()
}

/// Total parameter count, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_param_count(model: *const TaskmixModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.total_params()
}

/// Input feature width, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_input_dim(model: *const TaskmixModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.descriptor().input_dim
}

/// Eval-mode scores for a row-major `[count, dim]` feature batch, written
/// into `out_scores` (length `count`).
///
/// # Safety
/// Buffers must match the stated sizes; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_predict(
    model: *const TaskmixModel,
    features: *const f64,
    count: usize,
    dim: usize,
    out_scores: *mut f64,
) -> TaskmixStatus {
    if model.is_null() || features.is_null() || out_scores.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let feats = std::slice::from_raw_parts(features, count * dim);
    let x = match Tensor::matrix(count, dim, feats.to_vec()) {
        Ok(t) => t,
        Err(e) => return set_error(&e),
    };
    match net::predict(&(*model).inner, &x) {
        Ok(scores) => {
            std::ptr::copy_nonoverlapping(scores.as_ptr(), out_scores, count);
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// # Safety
/// `model` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_free(model: *mut TaskmixModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- task vectors -------------------------------------------------------

/// Extract the layer-wise delta between a base and a fine-tuned model.
///
/// # Safety
/// Handles must be live; `task_id` a valid string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_task_vector_extract(
    base: *const TaskmixModel,
    fine_tuned: *const TaskmixModel,
    task_id: *const c_char,
    out: *mut *mut TaskmixTaskVector,
) -> TaskmixStatus {
    if base.is_null() || fine_tuned.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let id = try_ffi!(str_from(task_id, "task id"));
    match taskvec::extract(&(*base).inner, &(*fine_tuned).inner, id) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TaskmixTaskVector { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Rewrite a fine-tuned model so delta extraction round-trips bit-exactly
/// against this base.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_model_canonicalize(
    base: *const TaskmixModel,
    fine_tuned: *const TaskmixModel,
    out: *mut *mut TaskmixModel,
) -> TaskmixStatus {
    if base.is_null() || fine_tuned.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    match taskvec::canonicalize(&(*base).inner, &(*fine_tuned).inner) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TaskmixModel { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Load a delta checkpoint.
///
/// # Safety
/// `path` must be a valid string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_task_vector_load(
    path: *const c_char,
    out: *mut *mut TaskmixTaskVector,
) -> TaskmixStatus {
    if out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null output handle");
    }
    let path = try_ffi!(path_from(path));
    match checkpoint::load_task_vector(&path) {
        Ok((_, inner)) => {
            *out = Box::into_raw(Box::new(TaskmixTaskVector { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Write a delta checkpoint; the base provides the stored architecture.
///
/// # Safety
/// Handles must be live; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn taskmix_task_vector_save(
    tv: *const TaskmixTaskVector,
    base: *const TaskmixModel,
    path: *const c_char,
) -> TaskmixStatus {
    if tv.is_null() || base.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let path = try_ffi!(path_from(path));
    match checkpoint::save_task_vector(&(*tv).inner, (*base).inner.descriptor(), &path) {
        Ok(()) => TaskmixStatus::Ok,
        Err(e) => set_error(&e),
    }
}

/// # Safety
/// `tv` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn taskmix_task_vector_free(tv: *mut TaskmixTaskVector) {
    if !tv.is_null() {
        drop(Box::from_raw(tv));
    }
}

// ---- merging and personalization ---------------------------------------

unsafe fn collect_task_vectors(
    tvs: *const *const TaskmixTaskVector,
    n_tvs: usize,
) -> Result<Vec<TaskVector>, TaskmixStatus> {
    if tvs.is_null() || n_tvs == 0 {
        return Err(fail(TaskmixStatus::NullArgument, "empty task vector list"));
    }
    let handles = std::slice::from_raw_parts(tvs, n_tvs);
    let mut vectors = Vec::with_capacity(n_tvs);
    for &h in handles {
        if h.is_null() {
            return Err(fail(
                TaskmixStatus::NullArgument,
                "null task vector in list",
            ));
        }
        vectors.push((*h).inner.clone());
    }
    Ok(vectors)
}

/// Merge `base + sum_i coeffs[i][l] * tvs[i][l]`. `coeffs` is row-major
/// with one row per task vector and one column per layer.
///
/// # Safety
/// `tvs` must point to `n_tvs` live handles, `coeffs` to
/// `n_tvs * layer_count` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_merge(
    base: *const TaskmixModel,
    tvs: *const *const TaskmixTaskVector,
    n_tvs: usize,
    coeffs: *const f64,
    out: *mut *mut TaskmixModel,
) -> TaskmixStatus {
    if base.is_null() || coeffs.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let base_ref = &(*base).inner;
    let vectors = try_ffi!(collect_task_vectors(tvs, n_tvs));
    let layer_count = base_ref.layer_count();
    let values = std::slice::from_raw_parts(coeffs, n_tvs * layer_count);
    let ids: Vec<String> = vectors.iter().map(|tv| tv.task_id.clone()).collect();
    let matrix = match CoefficientMatrix::from_values(ids, layer_count, values.to_vec()) {
        Ok(m) => m,
        Err(e) => return set_error(&e),
    };
    match personalize::merge(base_ref, &vectors, &matrix) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TaskmixModel { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Zero-shot rank correlation of each reconstructed source model on the
/// support samples; `out_profile` receives `n_tvs` values.
///
/// # Safety
/// Buffers must match the stated sizes; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn taskmix_zero_shot_profile(
    base: *const TaskmixModel,
    tvs: *const *const TaskmixTaskVector,
    n_tvs: usize,
    features: *const f64,
    scores: *const f64,
    count: usize,
    dim: usize,
    out_profile: *mut f64,
) -> TaskmixStatus {
    if base.is_null() || out_profile.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let vectors = try_ffi!(collect_task_vectors(tvs, n_tvs));
    let support = try_ffi!(sample_set(features, scores, count, dim));
    let models = match personalize::reconstruct_models(&(*base).inner, &vectors) {
        Ok(m) => m,
        Err(e) => return set_error(&e),
    };
    match personalize::zero_shot_srocc_profile(&support, &models) {
        Ok(profile) => {
            std::ptr::copy_nonoverlapping(profile.as_ptr(), out_profile, n_tvs);
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Train the merge coefficients on a support set and return the trained
/// matrix as a handle.
///
/// # Safety
/// Buffers must match the stated sizes; handles must be live; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_train_coefficients(
    base: *const TaskmixModel,
    tvs: *const *const TaskmixTaskVector,
    n_tvs: usize,
    features: *const f64,
    scores: *const f64,
    count: usize,
    dim: usize,
    cfg: *const TaskmixTrainConfig,
    out: *mut *mut TaskmixCoefficients,
) -> TaskmixStatus {
    if base.is_null() || cfg.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let vectors = try_ffi!(collect_task_vectors(tvs, n_tvs));
    let support = try_ffi!(sample_set(features, scores, count, dim));
    let config = try_ffi!(train_config(&*cfg, count));
    match personalize::train_coefficients(&(*base).inner, &vectors, &support, &config, (*cfg).seed)
    {
        Ok((inner, _)) => {
            *out = Box::into_raw(Box::new(TaskmixCoefficients { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Copy the coefficient values (row-major, one row per task) into
/// `out_values` of length `len`; `len` must equal rows x columns.
///
/// # Safety
/// `cm` must be a live handle and `out_values` sized as stated.
#[no_mangle]
pub unsafe extern "C" fn taskmix_coefficients_values(
    cm: *const TaskmixCoefficients,
    out_values: *mut f64,
    len: usize,
) -> TaskmixStatus {
    if cm.is_null() || out_values.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let values = (*cm).inner.values();
    if values.len() != len {
        return fail(
            TaskmixStatus::ShapeError,
            &format!("coefficient buffer holds {len}, need {}", values.len()),
        );
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out_values, values.len());
    TaskmixStatus::Ok
}

/// Rows (tasks) of a coefficient matrix, or 0 for null.
///
/// # Safety
/// `cm` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn taskmix_coefficients_task_count(cm: *const TaskmixCoefficients) -> usize {
    if cm.is_null() {
        return 0;
    }
    (*cm).inner.task_count()
}

/// Columns (layers) of a coefficient matrix, or 0 for null.
///
/// # Safety
/// `cm` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn taskmix_coefficients_layer_count(cm: *const TaskmixCoefficients) -> usize {
    if cm.is_null() {
        return 0;
    }
    (*cm).inner.layer_count()
}

/// Merge using a trained coefficient handle.
///
/// # Safety
/// Handles must be live and mutually consistent; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taskmix_merge_with_coefficients(
    base: *const TaskmixModel,
    tvs: *const *const TaskmixTaskVector,
    n_tvs: usize,
    cm: *const TaskmixCoefficients,
    out: *mut *mut TaskmixModel,
) -> TaskmixStatus {
    if base.is_null() || cm.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let vectors = try_ffi!(collect_task_vectors(tvs, n_tvs));
    let full = (*cm).inner.broadcast((*base).inner.layer_count());
    let matrix = if (*cm).inner.layer_count() == (*base).inner.layer_count() {
        (*cm).inner.clone()
    } else {
        full
    };
    match personalize::merge(&(*base).inner, &vectors, &matrix) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TaskmixModel { inner }));
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// # Safety
/// `cm` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn taskmix_coefficients_free(cm: *mut TaskmixCoefficients) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

// ---- metrics ------------------------------------------------------------

/// Spearman rank correlation; writes the value and returns the degeneracy
/// convention (0 with `Ok`) for constant inputs.
///
/// # Safety
/// `truth` and `preds` must hold `count` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn taskmix_srocc(
    truth: *const f64,
    preds: *const f64,
    count: usize,
    out: *mut f64,
) -> TaskmixStatus {
    if truth.is_null() || preds.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let t = std::slice::from_raw_parts(truth, count);
    let p = std::slice::from_raw_parts(preds, count);
    match metrics::srocc(t, p) {
        Ok(r) => {
            *out = r.value;
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Pearson linear correlation with the same conventions as
/// [`taskmix_srocc`].
///
/// # Safety
/// `truth` and `preds` must hold `count` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn taskmix_plcc(
    truth: *const f64,
    preds: *const f64,
    count: usize,
    out: *mut f64,
) -> TaskmixStatus {
    if truth.is_null() || preds.is_null() || out.is_null() {
        return fail(TaskmixStatus::NullArgument, "null argument");
    }
    let t = std::slice::from_raw_parts(truth, count);
    let p = std::slice::from_raw_parts(preds, count);
    match metrics::plcc(t, p) {
        Ok(r) => {
            *out = r.value;
            TaskmixStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}
