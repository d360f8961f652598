//! C ABI over the fusefl simulator.
//!
//! Conventions: every fallible call returns a [`FuseflStatus`]; outputs go
//! through out-pointers; strings are UTF-8 and NUL-terminated; any `char*`
//! returned by this library must be released with [`fusefl_string_free`];
//! opaque handles are released with their matching `_free` function. The
//! last error message per thread is available via
//! [`fusefl_last_error_message`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use libc::{c_char, size_t};

use fusefl::cli::{apply_env_seed, checkpoint_load, CheckpointModel, RunConfig};
use fusefl::data::load_idx;
use fusefl::error::Error;
use fusefl::federation::{comm_cost, evaluate, storage_cost, Algorithm, CostModel, Predictor};
use fusefl::model::{scale_width, ScalingPolicy, StagedModel};
use fusefl::nn::Tensor;

/// Status codes mirroring the CLI exit-code convention (0 ok, 1 runtime,
/// 2 configuration) plus FFI-specific argument failures.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseflStatus {
    Ok = 0,
    RuntimeError = 1,
    ConfigError = 2,
    NullArgument = 3,
    InvalidUtf8 = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FuseflStatus {
    match err.exit_code() {
        2 => FuseflStatus::ConfigError,
        _ => FuseflStatus::RuntimeError,
    }
}

fn guard<F: FnOnce() -> FuseflStatus>(f: F) -> FuseflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            FuseflStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, FuseflStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is NULL"));
        return Err(FuseflStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        FuseflStatus::InvalidUtf8
    })
}

fn export_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "?"))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Library version as a static string (do not free).
#[no_mangle]
pub extern "C" fn fusefl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The last error message raised on this thread, or NULL. The caller owns
/// the returned string and must free it with `fusefl_string_free`.
#[no_mangle]
pub extern "C" fn fusefl_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| export_string(c.to_string_lossy().into_owned()))
            .unwrap_or(std::ptr::null_mut())
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by a fusefl function.
#[no_mangle]
pub unsafe extern "C" fn fusefl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Scaled hidden width: round(base / sqrt(clients)), at least 1. Returns 0
/// on invalid arguments.
#[no_mangle]
pub extern "C" fn fusefl_scale_width(base_width: u32, clients: u32) -> u32 {
    if base_width == 0 || clients == 0 {
        return 0;
    }
    scale_width(base_width as usize, clients as usize, &ScalingPolicy::SqrtM) as u32
}

fn parse_algorithm(name: &str) -> Result<Algorithm, FuseflStatus> {
    Algorithm::parse(name).map_err(|e| {
        set_error(e.to_string());
        FuseflStatus::ConfigError
    })
}

/// Total uplink communication bytes for an algorithm.
///
/// # Safety
/// `algorithm` must be a valid NUL-terminated string; `out` must be a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn fusefl_comm_cost(
    algorithm: *const c_char,
    model_bytes: u64,
    rounds: u64,
    clients: u64,
    out: *mut u64,
) -> FuseflStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return FuseflStatus::NullArgument;
        }
        let name = match cstr(algorithm, "algorithm") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let algorithm = match parse_algorithm(name) {
            Ok(a) => a,
            Err(st) => return st,
        };
        *out = comm_cost(&CostModel {
            algorithm,
            model_bytes,
            rounds,
            clients,
        });
        FuseflStatus::Ok
    })
}

/// Bytes needed to store the deployable result of an algorithm.
///
/// # Safety
/// Same contract as [`fusefl_comm_cost`].
#[no_mangle]
pub unsafe extern "C" fn fusefl_storage_cost(
    algorithm: *const c_char,
    model_bytes: u64,
    rounds: u64,
    clients: u64,
    out: *mut u64,
) -> FuseflStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return FuseflStatus::NullArgument;
        }
        let name = match cstr(algorithm, "algorithm") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let algorithm = match parse_algorithm(name) {
            Ok(a) => a,
            Err(st) => return st,
        };
        *out = storage_cost(&CostModel {
            algorithm,
            model_bytes,
            rounds,
            clients,
        });
        FuseflStatus::Ok
    })
}

/// Run an experiment from config text. Outputs (metrics.csv, summary.json,
/// checkpoints) are written into `output_dir` when non-NULL, else into the
/// config's `run.output_dir`. On success, `summary_json_out` (when non-NULL)
/// receives the summary JSON; free it with `fusefl_string_free`.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated string; `output_dir` NULL or
/// likewise; `summary_json_out` NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fusefl_run_config(
    config_text: *const c_char,
    output_dir: *const c_char,
    summary_json_out: *mut *mut c_char,
) -> FuseflStatus {
    guard(|| {
        let text = match cstr(config_text, "config_text") {
            Ok(s) => s.to_string(),
            Err(st) => return st,
        };
        let dir_override = if output_dir.is_null() {
            None
        } else {
            match cstr(output_dir, "output_dir") {
                Ok(s) => Some(s.to_string()),
                Err(st) => return st,
            }
        };
        let run = (|| -> fusefl::Result<PathBuf> {
            let mut cfg = RunConfig::parse(&text)?;
            apply_env_seed(&mut cfg)?;
            if let Some(dir) = &dir_override {
                cfg.override_output_dir(dir);
            }
            let dir = PathBuf::from(&cfg.output_dir);
            let tmp = tempfile_config(&cfg)?;
            fusefl::cli::cmd_run(&tmp, None)?;
            let _ = std::fs::remove_file(&tmp);
            Ok(dir)
        })();
        match run {
            Ok(dir) => {
                if !summary_json_out.is_null() {
                    match std::fs::read_to_string(dir.join("summary.json")) {
                        Ok(json) => *summary_json_out = export_string(json),
                        Err(e) => {
                            set_error(format!("summary unreadable: {e}"));
                            return FuseflStatus::RuntimeError;
                        }
                    }
                }
                FuseflStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

// cmd_run consumes a config path; round-trip the resolved config through a
// temporary file so the run uses exactly the overridden values.
fn tempfile_config(cfg: &RunConfig) -> fusefl::Result<PathBuf> {
    let mut body = String::new();
    for (k, v) in cfg.resolved_map() {
        if v.is_empty() {
            continue;
        }
        body.push_str(&format!("{k} = {v}\n"));
    }
    let path = std::env::temp_dir().join(format!(
        "fusefl-ffi-{}-{:x}.cfg",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::write(&path, body)?;
    Ok(path)
}

/// Opaque handle to a loaded model checkpoint.
pub struct FuseflModel {
    inner: CheckpointModel,
}

/// Load a checkpoint file into an opaque model handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_load(
    path: *const c_char,
    out: *mut *mut FuseflModel,
) -> FuseflStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return FuseflStatus::NullArgument;
        }
        let path = match cstr(path, "path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match checkpoint_load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FuseflModel { inner }));
                FuseflStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a model handle.
///
/// # Safety
/// `model` must be NULL or a pointer from `fusefl_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_free(model: *mut FuseflModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *const FuseflModel) -> Result<&'a FuseflModel, FuseflStatus> {
    if model.is_null() {
        set_error("model is NULL".into());
        return Err(FuseflStatus::NullArgument);
    }
    Ok(&*model)
}

/// Exact scalar parameter count of the model.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_param_count(
    model: *const FuseflModel,
    out: *mut u64,
) -> FuseflStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is NULL".into());
            return FuseflStatus::NullArgument;
        }
        *out = m.inner.param_count() as u64;
        FuseflStatus::Ok
    })
}

/// Number of stages (blocks) the model exposes.
///
/// # Safety
/// Same contract as [`fusefl_model_param_count`].
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_num_stages(
    model: *const FuseflModel,
    out: *mut u32,
) -> FuseflStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is NULL".into());
            return FuseflStatus::NullArgument;
        }
        *out = m.inner.num_stages() as u32;
        FuseflStatus::Ok
    })
}

/// Per-sample input length (flattened) and class count.
///
/// # Safety
/// Same contract as [`fusefl_model_param_count`]; out-pointers may be NULL
/// to skip.
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_io_dims(
    model: *const FuseflModel,
    input_len_out: *mut u64,
    num_classes_out: *mut u64,
) -> FuseflStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(st) => return st,
        };
        if !input_len_out.is_null() {
            *input_len_out = m.inner.input_shape().flat_len() as u64;
        }
        if !num_classes_out.is_null() {
            *num_classes_out = match &m.inner {
                CheckpointModel::Single(s) => s.spec.num_classes as u64,
                CheckpointModel::Fused(f) => f.num_classes as u64,
            };
        }
        FuseflStatus::Ok
    })
}

/// Class logits for a batch of flattened inputs. `input_len` must be
/// `batch * input_len_per_sample`; `logits` receives `batch * num_classes`
/// values.
///
/// # Safety
/// `model` must be a live handle; `input` must point to `input_len` doubles;
/// `logits` must point to `logits_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_predict(
    model: *const FuseflModel,
    input: *const f64,
    input_len: size_t,
    batch: size_t,
    logits: *mut f64,
    logits_len: size_t,
) -> FuseflStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(st) => return st,
        };
        if input.is_null() || logits.is_null() {
            set_error("input or logits is NULL".into());
            return FuseflStatus::NullArgument;
        }
        let per_sample = m.inner.input_shape().flat_len();
        if batch == 0 || input_len != batch * per_sample {
            set_error(format!(
                "input_len {input_len} does not match batch {batch} x {per_sample}"
            ));
            return FuseflStatus::ConfigError;
        }
        let values = std::slice::from_raw_parts(input, input_len).to_vec();
        let mut shape = vec![batch];
        match m.inner.input_shape() {
            fusefl::nn::FeatureShape::Flat(d) => shape.push(*d),
            fusefl::nn::FeatureShape::Spatial {
                channels,
                height,
                width,
            } => shape.extend_from_slice(&[*channels, *height, *width]),
        }
        let x = match Tensor::new(shape, values) {
            Ok(t) => t,
            Err(e) => {
                set_error(e.to_string());
                return FuseflStatus::RuntimeError;
            }
        };
        match m.inner.predict_logits(&x) {
            Ok(out) => {
                if logits_len != out.scalar_count() {
                    set_error(format!(
                        "logits buffer holds {logits_len}, model produces {}",
                        out.scalar_count()
                    ));
                    return FuseflStatus::BufferTooSmall;
                }
                std::ptr::copy_nonoverlapping(out.values().as_ptr(), logits, logits_len);
                FuseflStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Accuracy of the model on an IDX image/label pair.
///
/// # Safety
/// `model` must be a live handle; paths valid NUL-terminated strings; `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fusefl_model_evaluate_idx(
    model: *const FuseflModel,
    images_path: *const c_char,
    labels_path: *const c_char,
    out: *mut f64,
) -> FuseflStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is NULL".into());
            return FuseflStatus::NullArgument;
        }
        let images = match cstr(images_path, "images_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let labels = match cstr(labels_path, "labels_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let run = (|| -> fusefl::Result<f64> {
            let test = load_idx(Path::new(images), Path::new(labels))?;
            evaluate(&m.inner, &test, 256)
        })();
        match run {
            Ok(acc) => {
                *out = acc;
                FuseflStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}
