//! C ABI over `dsgrl`.
//!
//! Objects are opaque handles created by `dsgrl_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`DsgrlStatus`];
//! on failure [`dsgrl_last_error`] describes the problem for the calling
//! thread. Configs cross the boundary as JSON strings with the same schema
//! as the library's `TrainConfig` / `SbmConfig`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dsgrl::autodiff::Tensor;
use dsgrl::eval::{run_protocol, ProbeConfig};
use dsgrl::graph::io::{load_graph, LoadOptions};
use dsgrl::graph::{generate_sbm, make_stratified_splits, Graph, SbmConfig, DEFAULT_SPLIT_RATIOS};
use dsgrl::trainer::{embed, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};
use dsgrl::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsgrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Shape = 3,
    Numeric = 4,
    Lifecycle = 5,
    Parse = 6,
    Range = 7,
    Consistency = 8,
    Config = 9,
    Format = 10,
    Protocol = 11,
    Io = 12,
    Panic = 13,
}

/// A loaded or generated graph.
pub struct DsgrlGraph(Graph);

/// A trained (or loaded) model checkpoint.
pub struct DsgrlModel(Checkpoint);

/// A dense row-major `f64` matrix.
pub struct DsgrlTensor(Tensor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DsgrlStatus {
    match e.category() {
        "shape" => DsgrlStatus::Shape,
        "numeric" => DsgrlStatus::Numeric,
        "lifecycle" => DsgrlStatus::Lifecycle,
        "parse" => DsgrlStatus::Parse,
        "range" => DsgrlStatus::Range,
        "consistency" => DsgrlStatus::Consistency,
        "config" => DsgrlStatus::Config,
        "format" => DsgrlStatus::Format,
        "protocol" => DsgrlStatus::Protocol,
        _ => DsgrlStatus::Io,
    }
}

enum Fail {
    Status(DsgrlStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsgrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DsgrlStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DsgrlStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(DsgrlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(DsgrlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> Result<T, Fail> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| Fail::Status(DsgrlStatus::Config, format!("config: {e}"))),
    }
}

/// Message for the last failed call on this thread, or NULL after a
/// successful one. Valid until the next `dsgrl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn dsgrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a graph from an edge list and a feature file (CSV or DSGF).
/// `labels` may be NULL.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_graph_load(
    edges: *const c_char,
    features: *const c_char,
    labels: *const c_char,
    directed: bool,
    header: bool,
    out: *mut *mut DsgrlGraph,
) -> DsgrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let edges = str_arg(edges, "edges")?;
        let features = str_arg(features, "features")?;
        let labels = opt_str_arg(labels, "labels")?;
        let opts = LoadOptions {
            directed,
            header,
            row_normalize: false,
        };
        let g = load_graph(Path::new(edges), Path::new(features), labels.map(Path::new), opts)?;
        put(out, DsgrlGraph(g));
        Ok(())
    })
}

/// Generates a labeled stochastic block model graph. `config_json` may be
/// NULL for the defaults (3 blocks of 50, p_in 0.1, p_out 0.01, noise 0.5).
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_graph_sbm(config_json: *const c_char, out: *mut *mut DsgrlGraph) -> DsgrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: SbmConfig = parse_json(opt_str_arg(config_json, "config_json")?)?;
        put(out, DsgrlGraph(generate_sbm(&cfg)?));
        Ok(())
    })
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_graph_num_nodes(g: *const DsgrlGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.n())
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_graph_num_features(g: *const DsgrlGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.f())
}

/// Copies node labels into `buf` (length `len` must equal the node count);
/// unlabeled nodes get -1.
///
/// # Safety
/// `buf` must point to `len` writable `int64_t`.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_graph_labels(g: *const DsgrlGraph, buf: *mut i64, len: usize) -> DsgrlStatus {
    guard(|| {
        let g = ref_arg(g, "graph")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let labels = g
            .0
            .labels()
            .ok_or_else(|| Fail::Status(DsgrlStatus::Consistency, "graph has no labels".into()))?;
        if len != labels.len() {
            return Err(Fail::Status(
                DsgrlStatus::Shape,
                format!("buffer holds {len}, graph has {} nodes", labels.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, l) in dst.iter_mut().zip(labels) {
            *d = l.map_or(-1, |v| v as i64);
        }
        Ok(())
    })
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_graph_free(g: *mut DsgrlGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Trains on `g`. `config_json` may be NULL for defaults. `out_embeddings`
/// may be NULL; otherwise it receives the final `[Z₁ | Z₂]`.
///
/// # Safety
/// Handles must be live; out pointers writable when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_train(
    g: *const DsgrlGraph,
    config_json: *const c_char,
    out_model: *mut *mut DsgrlModel,
    out_embeddings: *mut *mut DsgrlTensor,
) -> DsgrlStatus {
    guard(|| {
        let g = ref_arg(g, "graph")?;
        if out_model.is_null() {
            return Err(null("out_model"));
        }
        let cfg: TrainConfig = parse_json(opt_str_arg(config_json, "config_json")?)?;
        let outcome = train(&g.0, &cfg)?;
        put(out_model, DsgrlModel(outcome.checkpoint));
        if !out_embeddings.is_null() {
            put(out_embeddings, DsgrlTensor(outcome.embeddings));
        }
        Ok(())
    })
}

/// Node embeddings of `g` under a model.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_embed(
    m: *const DsgrlModel,
    g: *const DsgrlGraph,
    out: *mut *mut DsgrlTensor,
) -> DsgrlStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let g = ref_arg(g, "graph")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, DsgrlTensor(embed(&g.0, &m.0)?));
        Ok(())
    })
}

/// # Safety
/// `m` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_model_save(m: *const DsgrlModel, path: *const c_char) -> DsgrlStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        save_checkpoint(Path::new(str_arg(path, "path")?), &m.0)?;
        Ok(())
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_model_load(path: *const c_char, out: *mut *mut DsgrlModel) -> DsgrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        put(out, DsgrlModel(ckpt));
        Ok(())
    })
}

/// Epochs the model was trained for.
///
/// # Safety
/// `m` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_model_epochs(m: *const DsgrlModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.epoch)
}

/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_model_free(m: *mut DsgrlModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Linear-probe accuracy over `n_splits` stratified 5/15/80 splits with
/// seeds `seed, seed+1, ...`, using the graph's labels.
///
/// # Safety
/// Handles must be live; `out_mean`/`out_std` writable (either may be NULL).
#[no_mangle]
pub unsafe extern "C" fn dsgrl_evaluate(
    z: *const DsgrlTensor,
    g: *const DsgrlGraph,
    n_splits: usize,
    seed: u64,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> DsgrlStatus {
    guard(|| {
        let z = ref_arg(z, "embeddings")?;
        let g = ref_arg(g, "graph")?;
        let labels = g
            .0
            .labels()
            .ok_or_else(|| Fail::Status(DsgrlStatus::Consistency, "graph has no labels".into()))?;
        let splits = (0..n_splits as u64)
            .map(|k| make_stratified_splits(labels, DEFAULT_SPLIT_RATIOS, seed.wrapping_add(k)))
            .collect::<Result<Vec<_>, _>>()?;
        let report = run_protocol(&z.0, labels, &splits, &ProbeConfig::default())?;
        if !out_mean.is_null() {
            *out_mean = report.accuracy.mean;
        }
        if !out_std.is_null() {
            *out_std = report.accuracy.std;
        }
        Ok(())
    })
}

/// # Safety
/// `t` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_tensor_rows(t: *const DsgrlTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.rows())
}

/// # Safety
/// `t` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_tensor_cols(t: *const DsgrlTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.cols())
}

/// Row-major data, `rows * cols` doubles owned by the tensor.
///
/// # Safety
/// `t` must be NULL or live; the pointer dies with the tensor.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_tensor_data(t: *const DsgrlTensor) -> *const f64 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `t` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsgrl_tensor_free(t: *mut DsgrlTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
