//! C ABI surface. Handles are opaque pointers owned by the library;
//! every fallible call returns a status code and stashes a per-thread
//! error message retrievable with `sgmp_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use sgmp::checkpoint::{self, Checkpoint};
use sgmp::data::{load_dataset, save_dataset, synth_generate, DatasetFile, SynthConfig};
use sgmp::error::Error;
use sgmp::eval::{evaluate, EvalConfig, Task};
use sgmp::gradcheck::grad_check_model;
use sgmp::model::{ModelDims, PoolingMode};
use sgmp::train::{fit, TrainConfig};

/// Mirrors the process exit-code contract.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgmpStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Io = 3,
    Numeric = 4,
    Verification = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let safe = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(safe).unwrap());
}

fn status_of(err: &Error) -> SgmpStatus {
    match err.exit_code() {
        3 => SgmpStatus::Io,
        4 => SgmpStatus::Numeric,
        5 => SgmpStatus::Verification,
        _ => SgmpStatus::Config,
    }
}

fn fail(err: Error) -> SgmpStatus {
    let s = status_of(&err);
    set_error(&err.to_string());
    s
}

fn invalid(msg: &str) -> SgmpStatus {
    set_error(msg);
    SgmpStatus::InvalidArgument
}

/// Message for the most recent failure on this thread. Borrowed;
/// valid until the next failing call.
#[no_mangle]
pub extern "C" fn sgmp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, SgmpStatus> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(invalid("path is not valid UTF-8")),
    }
}

fn pooling_arg(mode: u32) -> Result<PoolingMode, SgmpStatus> {
    match mode {
        0 => Ok(PoolingMode::Weighted),
        1 => Ok(PoolingMode::Avg),
        2 => Ok(PoolingMode::Max),
        _ => Err(invalid("pooling mode must be 0 (weighted), 1 (avg), or 2 (max)")),
    }
}

fn task_arg(task: u32) -> Result<Task, SgmpStatus> {
    match task {
        0 => Ok(Task::PredCls),
        1 => Ok(Task::SgCls),
        2 => Ok(Task::SgGen),
        _ => Err(invalid("task must be 0 (predcls), 1 (sgcls), or 2 (sggen)")),
    }
}

/// Opaque dataset handle.
pub struct SgmpDataset(DatasetFile);

/// Opaque trained-model handle.
pub struct SgmpModel(Checkpoint);

/// Generates a synthetic dataset. `ambiguity` is the fraction of class
/// pairs whose predicate depends on context; `image_offset` selects a
/// disjoint slice of the seed's image stream.
#[no_mangle]
pub unsafe extern "C" fn sgmp_dataset_synth(
    num_images: usize,
    seed: u64,
    image_offset: usize,
    ambiguity: f64,
    out: *mut *mut SgmpDataset,
) -> SgmpStatus {
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let cfg = SynthConfig {
        num_images,
        seed,
        image_offset,
        context_ambiguity: ambiguity,
        ..SynthConfig::default()
    };
    match synth_generate(&cfg) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(SgmpDataset(d)));
            SgmpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_dataset_load(
    path: *const c_char,
    out: *mut *mut SgmpDataset,
) -> SgmpStatus {
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_dataset(&path) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(SgmpDataset(d)));
            SgmpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_dataset_save(
    dataset: *const SgmpDataset,
    path: *const c_char,
) -> SgmpStatus {
    let Some(ds) = dataset.as_ref() else {
        return invalid("dataset handle is null");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match save_dataset(&ds.0, &path) {
        Ok(()) => SgmpStatus::Ok,
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_dataset_num_images(dataset: *const SgmpDataset) -> usize {
    dataset.as_ref().map(|d| d.0.samples.len()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_dataset_free(dataset: *mut SgmpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a model on a dataset with the given hyperparameters.
/// `pooling`: 0 weighted, 1 avg, 2 max.
#[no_mangle]
pub unsafe extern "C" fn sgmp_train(
    dataset: *const SgmpDataset,
    epochs: usize,
    iterations: usize,
    pooling: u32,
    learning_rate: f64,
    seed: u64,
    out: *mut *mut SgmpModel,
) -> SgmpStatus {
    let Some(ds) = dataset.as_ref() else {
        return invalid("dataset handle is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let mode = match pooling_arg(pooling) {
        Ok(m) => m,
        Err(s) => return s,
    };
    let cfg = TrainConfig {
        epochs,
        iterations,
        pooling_mode: mode,
        learning_rate,
        seed,
        ..TrainConfig::default()
    };
    let mut dims = ModelDims::default();
    dims.feature_dim = ds.0.feature_dim;
    dims.num_classes = ds.0.vocab.num_classes();
    dims.num_predicates = ds.0.vocab.num_predicates();
    match fit(&ds.0.samples, dims, &cfg) {
        Ok((params, _)) => {
            *out = Box::into_raw(Box::new(SgmpModel(Checkpoint {
                seed,
                dims,
                vocab: ds.0.vocab.clone(),
                params,
            })));
            SgmpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_model_load(
    path: *const c_char,
    out: *mut *mut SgmpModel,
) -> SgmpStatus {
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint::load(&path) {
        Ok(ck) => {
            *out = Box::into_raw(Box::new(SgmpModel(ck)));
            SgmpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_model_save(
    model: *const SgmpModel,
    path: *const c_char,
) -> SgmpStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model handle is null");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint::save(&m.0, &path) {
        Ok(()) => SgmpStatus::Ok,
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_model_num_params(model: *const SgmpModel) -> usize {
    model.as_ref().map(|m| m.0.params.num_params()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_model_free(model: *mut SgmpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scalar evaluation summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmpEvalResult {
    pub r_at_50: f64,
    pub r_at_100: f64,
    pub images_evaluated: usize,
    pub images_skipped: usize,
}

/// Evaluates a model. `task`: 0 predcls, 1 sgcls, 2 sggen.
#[no_mangle]
pub unsafe extern "C" fn sgmp_evaluate(
    model: *const SgmpModel,
    dataset: *const SgmpDataset,
    task: u32,
    iterations: usize,
    pooling: u32,
    out: *mut SgmpEvalResult,
) -> SgmpStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model handle is null");
    };
    let Some(ds) = dataset.as_ref() else {
        return invalid("dataset handle is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let task = match task_arg(task) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let mode = match pooling_arg(pooling) {
        Ok(p) => p,
        Err(s) => return s,
    };
    if m.0.vocab != ds.0.vocab {
        return fail(Error::Config(
            "model vocabulary does not match dataset".to_string(),
        ));
    }
    let cfg = EvalConfig {
        iterations,
        pooling_mode: mode,
    };
    match evaluate(&ds.0.samples, &ds.0.vocab, &m.0.params, &cfg, task) {
        Ok(r) => {
            *out = SgmpEvalResult {
                r_at_50: r.r_at_50,
                r_at_100: r.r_at_100,
                images_evaluated: r.images_evaluated,
                images_skipped: r.images_skipped,
            };
            SgmpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Full text report; free with `sgmp_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sgmp_evaluate_report(
    model: *const SgmpModel,
    dataset: *const SgmpDataset,
    task: u32,
    iterations: usize,
    pooling: u32,
    out: *mut *mut c_char,
) -> SgmpStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model handle is null");
    };
    let Some(ds) = dataset.as_ref() else {
        return invalid("dataset handle is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let task = match task_arg(task) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let mode = match pooling_arg(pooling) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let cfg = EvalConfig {
        iterations,
        pooling_mode: mode,
    };
    match evaluate(&ds.0.samples, &ds.0.vocab, &m.0.params, &cfg, task) {
        Ok(r) => {
            let text = CString::new(r.to_text().replace('\0', " ")).unwrap();
            *out = text.into_raw();
            SgmpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sgmp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Verifies analytic gradients against central differences on a small
/// seeded model. Writes the max relative error and returns
/// `Verification` if it exceeds 1e-4.
#[no_mangle]
pub unsafe extern "C" fn sgmp_grad_check(
    iterations: usize,
    pooling: u32,
    seed: u64,
    max_rel_error: *mut f64,
) -> SgmpStatus {
    let mode = match pooling_arg(pooling) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let dims = ModelDims {
        feature_dim: 6,
        hidden: 8,
        num_classes: 4,
        num_predicates: 4,
    };
    match grad_check_model(dims, seed, iterations, mode, 1e-5) {
        Ok((err, worst)) => {
            if !max_rel_error.is_null() {
                *max_rel_error = err;
            }
            if err > 1e-4 {
                set_error(&format!("gradient check failed at {worst}: {err:.3e}"));
                SgmpStatus::Verification
            } else {
                SgmpStatus::Ok
            }
        }
        Err(e) => fail(e),
    }
}
