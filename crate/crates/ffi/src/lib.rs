//! C ABI for the resboost library.
//!
//! Models travel as opaque [`RbModel`] handles; every fallible call
//! returns an [`RbStatus`] code and records a message retrievable with
//! [`rb_last_error`]. Strings returned by this library are freed with
//! [`rb_string_free`], models with [`rb_model_free`].
//!
//! The header `include/resboost.h` is generated by cbindgen at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_int, size_t};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use resboost::checks::{run_all, CheckOptions};
use resboost::data::{
    scan_manifest, DatasetStream, LabelColumn, ManifestOptions, Preprocessing, Split,
};
use resboost::resnet::{BoostedResNet, Mode, NetworkConfig, Shortcut};
use resboost::tree::{NeuralDecisionTree, TreeImportSpec};
use resboost::{CompositeLoss, Matrix};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    Io = 3,
    /// A document (checkpoint, tree spec, config) failed to parse.
    Parse = 4,
    /// Buffer or feature-width mismatch.
    Shape = 5,
    /// Any other runtime failure; see `rb_last_error`.
    Runtime = 6,
    /// The library caught a panic at the boundary.
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message.into());
}

fn fail(status: RbStatus, message: impl Into<String>) -> RbStatus {
    set_error(message);
    status
}

fn error_status(e: &resboost::Error) -> RbStatus {
    use resboost::Error::*;
    match e {
        ShapeMismatch { .. } | LengthMismatch { .. } => RbStatus::Shape,
        Io(_) => RbStatus::Io,
        Serialization(_) => RbStatus::Parse,
        _ => RbStatus::Runtime,
    }
}

fn guarded(f: impl FnOnce() -> RbStatus) -> RbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(RbStatus::Panic, "panic caught at the FFI boundary"),
    }
}

/// Opaque model handle: a boosted residual network plus the preprocessing
/// context it was trained with.
pub struct RbModel {
    net: BoostedResNet,
    preprocessing: Option<Preprocessing>,
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, RbStatus> {
    if ptr.is_null() {
        return Err(RbStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| RbStatus::InvalidUtf8)
}

/// Copies the message of the most recent failure on this thread into
/// `buffer` (truncated, always NUL-terminated when `capacity > 0`) and
/// returns the full message length in bytes.
#[no_mangle]
pub unsafe extern "C" fn rb_last_error(buffer: *mut c_char, capacity: size_t) -> size_t {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buffer as *mut u8, n);
            *buffer.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint written by the library or CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
/// On success `*out` owns a model that must be released with
/// [`rb_model_free`].
#[no_mangle]
pub unsafe extern "C" fn rb_model_load(path: *const c_char, out: *mut *mut RbModel) -> RbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RbStatus::NullArgument, "out pointer is null");
        }
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return fail(status, "invalid path argument"),
        };
        match BoostedResNet::load_checkpoint(Path::new(path)) {
            Ok((net, preprocessing)) => {
                *out = Box::into_raw(Box::new(RbModel { net, preprocessing }));
                RbStatus::Ok
            }
            Err(e) => fail(error_status(&e), e.to_string()),
        }
    })
}

/// Writes the model as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rb_model_save(model: *const RbModel, path: *const c_char) -> RbStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(RbStatus::NullArgument, "model is null");
        };
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return fail(status, "invalid path argument"),
        };
        match model
            .net
            .save_checkpoint(Path::new(path), model.preprocessing.as_ref())
        {
            Ok(()) => RbStatus::Ok,
            Err(e) => fail(error_status(&e), e.to_string()),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn rb_model_free(model: *mut RbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features the model expects; 0 for null.
///
/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rb_model_input_width(model: *const RbModel) -> size_t {
    model.as_ref().map_or(0, |m| m.net.input_width())
}

/// Number of classes the model predicts; 0 for null.
///
/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rb_model_class_count(model: *const RbModel) -> size_t {
    model.as_ref().map_or(0, |m| m.net.loss().class_count())
}

/// Number of residual modules; 0 for null.
///
/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rb_model_module_count(model: *const RbModel) -> size_t {
    model.as_ref().map_or(0, |m| m.net.module_count())
}

/// Predicts one raw (unnormalized) feature row. The stored preprocessing
/// is applied when present. `probabilities` may be null; otherwise it
/// receives `rb_model_class_count` entries. `class_out` may be null.
///
/// # Safety
/// `features` must point to `features_len` doubles; `probabilities`, when
/// non-null, to at least `rb_model_class_count(model)` doubles.
#[no_mangle]
pub unsafe extern "C" fn rb_model_predict(
    model: *const RbModel,
    features: *const f64,
    features_len: size_t,
    probabilities: *mut f64,
    class_out: *mut size_t,
) -> RbStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(RbStatus::NullArgument, "model is null");
        };
        if features.is_null() {
            return fail(RbStatus::NullArgument, "features is null");
        }
        if features_len != model.net.input_width() {
            return fail(
                RbStatus::Shape,
                format!(
                    "expected {} features, got {features_len}",
                    model.net.input_width()
                ),
            );
        }
        let raw = std::slice::from_raw_parts(features, features_len);
        let row = match &model.preprocessing {
            Some(p) => match p.normalize_row(raw) {
                Ok(row) => row,
                Err(e) => return fail(error_status(&e), e.to_string()),
            },
            None => raw.to_vec(),
        };
        match model.net.forward(&row) {
            Ok(output) => {
                if !probabilities.is_null() {
                    let probs = output.head_probabilities.last().unwrap();
                    std::ptr::copy_nonoverlapping(probs.as_ptr(), probabilities, probs.len());
                }
                if !class_out.is_null() {
                    *class_out = output.prediction;
                }
                RbStatus::Ok
            }
            Err(e) => fail(error_status(&e), e.to_string()),
        }
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainDoc {
    data: String,
    #[serde(default = "default_label")]
    label_column: String,
    #[serde(default = "default_trees")]
    trees: usize,
    #[serde(default = "default_depth")]
    depth: usize,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default = "default_eta")]
    eta: f64,
    #[serde(default = "default_epochs")]
    epochs: usize,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_lr")]
    learning_rate: f64,
    #[serde(default = "default_theta_lr")]
    theta_learning_rate: f64,
    #[serde(default = "default_max_norm")]
    max_norm: f64,
    #[serde(default = "default_temperature")]
    temperature: f64,
    #[serde(default = "default_shuffle")]
    shuffle_buffer: usize,
}

fn default_label() -> String {
    "class".into()
}
fn default_trees() -> usize {
    15
}
fn default_depth() -> usize {
    5
}
fn default_mode() -> String {
    "shrinkage".into()
}
fn default_eta() -> f64 {
    0.2
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    32
}
fn default_seed() -> u64 {
    1
}
fn default_lr() -> f64 {
    0.5
}
fn default_theta_lr() -> f64 {
    0.01
}
fn default_max_norm() -> f64 {
    5.0
}
fn default_temperature() -> f64 {
    1.0
}
fn default_shuffle() -> usize {
    32
}

/// Trains a model from a JSON configuration document, e.g.
/// `{"data": "glass.csv", "trees": 15, "depth": 5, "mode": "shrinkage"}`.
/// Unset fields take the CLI defaults.
///
/// # Safety
/// `config_json` must be NUL-terminated; `out` must be valid. On success
/// `*out` owns a model.
#[no_mangle]
pub unsafe extern "C" fn rb_train_csv(
    config_json: *const c_char,
    out: *mut *mut RbModel,
) -> RbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RbStatus::NullArgument, "out pointer is null");
        }
        let config = match str_arg(config_json) {
            Ok(s) => s,
            Err(status) => return fail(status, "invalid config argument"),
        };
        let doc: TrainDoc = match serde_json::from_str(config) {
            Ok(doc) => doc,
            Err(e) => return fail(RbStatus::Parse, format!("config: {e}")),
        };
        let mode = match doc.mode.as_str() {
            "vanilla" => Mode::Vanilla,
            "shrinkage" => Mode::Shrinkage,
            "shared" => Mode::Shared,
            other => return fail(RbStatus::Parse, format!("unknown mode {other:?}")),
        };
        let label_column = match doc.label_column.parse::<usize>() {
            Ok(index) => LabelColumn::Index(index),
            Err(_) => LabelColumn::Name(doc.label_column.clone()),
        };
        let options = ManifestOptions {
            label_column,
            split_seed: doc.seed,
            ..ManifestOptions::default()
        };
        let result = (|| -> resboost::Result<RbModel> {
            let manifest = scan_manifest(&doc.data, &options)?;
            let config = NetworkConfig {
                mode,
                modules: doc.trees,
                tree_depth: doc.depth,
                input_width: manifest.n_features(),
                loss: if manifest.n_classes() == 2 {
                    CompositeLoss::Logistic
                } else {
                    CompositeLoss::SoftmaxCrossEntropy {
                        classes: manifest.n_classes(),
                    }
                },
                eta: doc.eta,
                theta_learning_rate: doc.theta_learning_rate,
                max_norm: doc.max_norm,
                routing_temperature: doc.temperature,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(doc.seed);
            let mut net = BoostedResNet::with_tree_modules(&config, &mut rng)?;
            let mut stream = DatasetStream::new(
                &manifest,
                Split::Train,
                doc.batch_size,
                doc.seed,
                Some(doc.shuffle_buffer.max(1) * doc.batch_size),
            )?;
            net.train_stream(&mut stream, doc.epochs, doc.learning_rate)?;
            Ok(RbModel {
                net,
                preprocessing: Some(manifest.to_preprocessing()),
            })
        })();
        match result {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                RbStatus::Ok
            }
            Err(e) => fail(error_status(&e), e.to_string()),
        }
    })
}

/// Split selector for [`rb_evaluate_csv`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbSplit {
    Train = 0,
    Test = 1,
    All = 2,
}

/// Evaluates the model on a CSV file using the checkpoint's stored
/// normalization, label encoding, and split seed. Writes accuracy to
/// `accuracy_out`.
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated; `accuracy_out`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn rb_evaluate_csv(
    model: *const RbModel,
    path: *const c_char,
    split: RbSplit,
    accuracy_out: *mut f64,
) -> RbStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(RbStatus::NullArgument, "model is null");
        };
        if accuracy_out.is_null() {
            return fail(RbStatus::NullArgument, "accuracy_out is null");
        }
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return fail(status, "invalid path argument"),
        };
        let Some(preprocessing) = &model.preprocessing else {
            return fail(RbStatus::Runtime, "checkpoint carries no preprocessing context");
        };
        let result = (|| -> resboost::Result<f64> {
            let manifest = preprocessing.eval_manifest(path, None)?;
            let splits: &[Split] = match split {
                RbSplit::Train => &[Split::Train],
                RbSplit::Test => &[Split::Test],
                RbSplit::All => &[Split::Train, Split::Test],
            };
            let mut correct = 0u64;
            let mut total = 0u64;
            for &s in splits {
                let mut stream = DatasetStream::new(&manifest, s, 256, 0, None)?;
                let stats = model.net.evaluate(&mut stream)?;
                let classes = stats.confusion.len();
                correct += (0..classes).map(|c| stats.confusion[c][c]).sum::<u64>();
                total += stats.examples;
            }
            Ok(correct as f64 / total as f64)
        })();
        match result {
            Ok(accuracy) => {
                *accuracy_out = accuracy;
                RbStatus::Ok
            }
            Err(e) => fail(error_status(&e), e.to_string()),
        }
    })
}

/// Converts a classical tree document (JSON: `{n_features, nodes,
/// leaves}`) into a single-module model.
///
/// # Safety
/// `spec_json` must be NUL-terminated; `out` must be valid. On success
/// `*out` owns a model.
#[no_mangle]
pub unsafe extern "C" fn rb_convert_tree_json(
    spec_json: *const c_char,
    out: *mut *mut RbModel,
) -> RbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RbStatus::NullArgument, "out pointer is null");
        }
        let raw = match str_arg(spec_json) {
            Ok(s) => s,
            Err(status) => return fail(status, "invalid spec argument"),
        };
        let spec: TreeImportSpec = match serde_json::from_str(raw) {
            Ok(spec) => spec,
            Err(e) => return fail(RbStatus::Parse, format!("tree document: {e}")),
        };
        let result = (|| -> resboost::Result<RbModel> {
            let tree = NeuralDecisionTree::import(&spec)?;
            let width = tree.output_width();
            let n_features = tree.n_features();
            let shortcut = if width == n_features {
                Shortcut::Identity
            } else {
                Shortcut::Projection(Matrix::zeros(width, n_features))
            };
            let net = BoostedResNet::from_parts(
                vec![resboost::ResidualModule::Tree {
                    tree,
                    passthrough: None,
                }],
                vec![shortcut],
                Matrix::identity(width),
                CompositeLoss::SoftmaxCrossEntropy { classes: width },
                Mode::Vanilla,
                1.0,
                0.01,
                1e12,
            )?;
            Ok(RbModel {
                net,
                preprocessing: None,
            })
        })();
        match result {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                RbStatus::Ok
            }
            Err(e) => fail(error_status(&e), e.to_string()),
        }
    })
}

/// Runs the property-check suite and returns the JSON report as a newly
/// allocated string (free with [`rb_string_free`]). Returns `Ok` when
/// every check passed, `Runtime` otherwise (the report is still written).
///
/// # Safety
/// `json_out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_run_checks(seed: u64, json_out: *mut *mut c_char) -> RbStatus {
    guarded(|| {
        if json_out.is_null() {
            return fail(RbStatus::NullArgument, "json_out is null");
        }
        let reports = run_all(&CheckOptions {
            seed,
            only: None,
            force_fail: false,
        });
        let json = match serde_json::to_string_pretty(&reports) {
            Ok(json) => json,
            Err(e) => return fail(RbStatus::Runtime, e.to_string()),
        };
        let all_passed = reports.iter().all(|r| r.passed);
        match CString::new(json) {
            Ok(cstring) => {
                *json_out = cstring.into_raw();
                if all_passed {
                    RbStatus::Ok
                } else {
                    fail(RbStatus::Runtime, "one or more checks failed")
                }
            }
            Err(_) => fail(RbStatus::Runtime, "report contained a NUL byte"),
        }
    })
}

/// Frees a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn rb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// ABI version of this header/library pair.
#[no_mangle]
pub extern "C" fn rb_abi_version() -> c_int {
    1
}
