//! C ABI over the dialact tagger. Models are opaque handles created from
//! checkpoint files; every fallible call returns a status code and stores a
//! thread-local message retrievable via `dialact_last_error_message`.
//!
//! Ownership rules: every `*mut c_char` returned by this library must be
//! released with `dialact_string_free`; models with `dialact_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dialact::corpus::{make_windows, Conversation, Utterance};
use dialact::error::Error;
use dialact::trainer::Checkpoint;

/// Status codes mirroring the process exit classes of the CLI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialactStatus {
    Ok = 0,
    UsageError = 1,
    DataError = 2,
    NumericalError = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Opaque handle to a loaded model checkpoint.
pub struct DialactModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> DialactStatus {
    match err.exit_code() {
        1 => DialactStatus::UsageError,
        3 => DialactStatus::NumericalError,
        _ => DialactStatus::DataError,
    }
}

fn guard(f: impl FnOnce() -> DialactStatus) -> DialactStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DialactStatus::Panic
        }
    }
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn dialact_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error on this thread, or NULL if none.
/// The caller owns the returned string.
#[no_mangle]
pub extern "C" fn dialact_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Release a string returned by this library. NULL is a no-op.
#[no_mangle]
pub extern "C" fn dialact_string_free(s: *mut c_char) {
    if !s.is_null() {
        // Safety: s came from CString::into_raw in this library.
        unsafe {
            drop(CString::from_raw(s));
        }
    }
}

/// Load a checkpoint file. On success writes a new handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dialact_checkpoint_load(
    path: *const c_char,
    out: *mut *mut DialactModel,
) -> DialactStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument");
            return DialactStatus::NullPointer;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid utf-8");
                return DialactStatus::UsageError;
            }
        };
        match Checkpoint::load(Path::new(path)) {
            Ok(inner) => {
                clear_error();
                unsafe {
                    *out = Box::into_raw(Box::new(DialactModel { inner }));
                }
                DialactStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must have come from `dialact_checkpoint_load` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn dialact_model_free(model: *mut DialactModel) {
    if !model.is_null() {
        unsafe {
            drop(Box::from_raw(model));
        }
    }
}

/// Context size n of the model, or -1 on NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dialact_model_context(model: *const DialactModel) -> i64 {
    match unsafe { model.as_ref() } {
        Some(m) => m.inner.model.shape.context as i64,
        None => -1,
    }
}

/// Number of labels, or -1 on NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dialact_model_num_labels(model: *const DialactModel) -> i64 {
    match unsafe { model.as_ref() } {
        Some(m) => m.inner.model.num_labels() as i64,
        None => -1,
    }
}

/// Name of label `index`, or NULL when out of range. Caller owns the string.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dialact_model_label_name(
    model: *const DialactModel,
    index: u64,
) -> *mut c_char {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return std::ptr::null_mut();
    };
    let labels = &m.inner.model.labels;
    if index as usize >= labels.len() {
        return std::ptr::null_mut();
    }
    CString::new(labels.name(index as usize))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Label one conversation. `utterances` is an array of `count` NUL-terminated
/// strings, one utterance each, oldest first; tokens are whitespace-split and
/// lowercased like the default ingestion path. Writes `count` label indices
/// to `out_labels`.
///
/// # Safety
/// All pointers must be valid for `count` elements; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dialact_model_predict(
    model: *const DialactModel,
    utterances: *const *const c_char,
    count: u64,
    out_labels: *mut u64,
) -> DialactStatus {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            set_error("null model handle");
            return DialactStatus::NullPointer;
        };
        if count == 0 {
            clear_error();
            return DialactStatus::Ok;
        }
        if utterances.is_null() || out_labels.is_null() {
            set_error("null pointer argument");
            return DialactStatus::NullPointer;
        }
        let mut conv = Conversation {
            id: "ffi".to_string(),
            utterances: Vec::with_capacity(count as usize),
        };
        for i in 0..count as usize {
            let ptr = unsafe { *utterances.add(i) };
            if ptr.is_null() {
                set_error(&format!("utterance {i} is null"));
                return DialactStatus::NullPointer;
            }
            let text = match unsafe { CStr::from_ptr(ptr) }.to_str() {
                Ok(s) => s,
                Err(_) => {
                    set_error(&format!("utterance {i} is not valid utf-8"));
                    return DialactStatus::UsageError;
                }
            };
            let tokens: Vec<String> = text
                .split_whitespace()
                .map(|t| t.to_lowercase())
                .collect();
            conv.utterances.push(Utterance {
                speaker: String::new(),
                tokens,
                label: None,
                raw_text: text.to_string(),
            });
        }
        let inner = &m.inner.model;
        let windows = make_windows(
            &conv,
            inner.shape.context,
            &inner.vocab,
            inner.shape.max_len,
            None,
        );
        for (i, w) in windows.iter().enumerate() {
            match inner.predict_label(w) {
                Ok(label) => unsafe {
                    *out_labels.add(i) = label as u64;
                },
                Err(e) => {
                    set_error(&e.to_string());
                    return status_of(&e);
                }
            }
        }
        clear_error();
        DialactStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dialact::corpus::{CorpusSplit, LabelSet};
    use dialact::model::HeadKind;
    use dialact::trainer::{fit, OptKind, TrainConfig};

    fn toy_checkpoint(dir: &Path) -> std::path::PathBuf {
        let utt = |tokens: &[&str], label: &str| Utterance {
            speaker: "s".into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            label: Some(label.to_string()),
            raw_text: tokens.join(" "),
        };
        let mut convs = Vec::new();
        for ci in 0..8 {
            let utterances = (0..5)
                .map(|t| {
                    if (ci + t) % 2 == 0 {
                        utt(&["aye", "indeed"], "A")
                    } else {
                        utt(&["nay", "never"], "B")
                    }
                })
                .collect();
            convs.push(Conversation {
                id: format!("c{ci}"),
                utterances,
            });
        }
        let valid = convs.split_off(6);
        let split = CorpusSplit {
            train: convs,
            valid,
            test: Vec::new(),
            labels: LabelSet::from_names(["A", "B"]),
        };
        let config = TrainConfig {
            context: 1,
            rate: 0.05,
            optimizer: OptKind::Sgd,
            batch: 8,
            dropout: 0.0,
            widths: vec![2],
            filters_per_width: 3,
            dim: 6,
            max_epochs: 30,
            patience: 5,
            seeds: vec![7],
            max_len: 4,
            min_freq: 1,
            head: HeadKind::Crf,
            average: false,
        };
        let result = fit(&split, &config, None).unwrap();
        let path = dir.join("model.ckpt");
        result.best().checkpoint.save(&path).unwrap();
        path
    }

    #[test]
    fn version_is_nul_terminated_static() {
        let v = dialact_version();
        assert!(!v.is_null());
        let s = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
        assert_eq!(s, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn load_predict_free_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt_path = toy_checkpoint(dir.path());
        let c_path = CString::new(ckpt_path.to_str().unwrap()).unwrap();
        let mut handle: *mut DialactModel = std::ptr::null_mut();
        let status = unsafe { dialact_checkpoint_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, DialactStatus::Ok);
        assert!(!handle.is_null());

        assert_eq!(unsafe { dialact_model_context(handle) }, 1);
        assert_eq!(unsafe { dialact_model_num_labels(handle) }, 2);

        let name0 = unsafe { dialact_model_label_name(handle, 0) };
        assert_eq!(unsafe { CStr::from_ptr(name0) }.to_str().unwrap(), "A");
        dialact_string_free(name0);
        assert!(unsafe { dialact_model_label_name(handle, 99) }.is_null());

        let utts = [
            CString::new("aye indeed").unwrap(),
            CString::new("nay never").unwrap(),
            CString::new("aye indeed").unwrap(),
        ];
        let ptrs: Vec<*const c_char> = utts.iter().map(|c| c.as_ptr()).collect();
        let mut out = [u64::MAX; 3];
        let status =
            unsafe { dialact_model_predict(handle, ptrs.as_ptr(), 3, out.as_mut_ptr()) };
        assert_eq!(status, DialactStatus::Ok);

        // must agree with the pure-Rust path
        let ckpt = Checkpoint::load(&ckpt_path).unwrap();
        let conv = Conversation {
            id: "probe".into(),
            utterances: utts
                .iter()
                .map(|c| {
                    let text = c.to_str().unwrap();
                    Utterance {
                        speaker: String::new(),
                        tokens: text.split_whitespace().map(|t| t.to_lowercase()).collect(),
                        label: None,
                        raw_text: text.into(),
                    }
                })
                .collect(),
        };
        let windows = make_windows(
            &conv,
            ckpt.model.shape.context,
            &ckpt.model.vocab,
            ckpt.model.shape.max_len,
            None,
        );
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(out[i], ckpt.model.predict_label(w).unwrap() as u64);
        }

        unsafe { dialact_model_free(handle) };
    }

    #[test]
    fn missing_file_sets_error_message() {
        let c_path = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut handle: *mut DialactModel = std::ptr::null_mut();
        let status = unsafe { dialact_checkpoint_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, DialactStatus::DataError);
        assert!(handle.is_null());
        let msg = dialact_last_error_message();
        assert!(!msg.is_null());
        let text = unsafe { CStr::from_ptr(msg) }.to_str().unwrap().to_string();
        assert!(text.contains("model.ckpt"), "{text}");
        dialact_string_free(msg);
    }

    #[test]
    fn null_arguments_are_rejected_not_crashed() {
        let mut handle: *mut DialactModel = std::ptr::null_mut();
        let status = unsafe { dialact_checkpoint_load(std::ptr::null(), &mut handle) };
        assert_eq!(status, DialactStatus::NullPointer);
        assert_eq!(unsafe { dialact_model_context(std::ptr::null()) }, -1);
        assert_eq!(unsafe { dialact_model_num_labels(std::ptr::null()) }, -1);
        let mut out = [0u64; 1];
        let status = unsafe {
            dialact_model_predict(std::ptr::null(), std::ptr::null(), 1, out.as_mut_ptr())
        };
        assert_eq!(status, DialactStatus::NullPointer);
        dialact_string_free(std::ptr::null_mut());
        unsafe { dialact_model_free(std::ptr::null_mut()) };
    }

    #[test]
    fn generated_header_has_the_full_surface() {
        let header = include_str!(concat!(env!("OUT_DIR"), "/dialact.h"));
        for symbol in [
            "dialact_version",
            "dialact_last_error_message",
            "dialact_string_free",
            "dialact_checkpoint_load",
            "dialact_model_free",
            "dialact_model_context",
            "dialact_model_num_labels",
            "dialact_model_label_name",
            "dialact_model_predict",
            "DialactStatus",
            "DialactModel",
        ] {
            assert!(header.contains(symbol), "header missing {symbol}");
        }
    }
}
