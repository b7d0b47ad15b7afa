//! C ABI over the causalwatch library.
//!
//! Every fallible function returns a [`CwStatus`]. On failure the message is
//! available from [`cw_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `*_free` function; strings returned
//! through `char **` out-parameters are released with [`cw_string_free`].
//! Panics never cross the boundary; they surface as `CW_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use causalwatch::config::Config;
use causalwatch::discovery::{acyclicity_value, fit_window, CausalGraph, DiscoveryConfig};
use causalwatch::gcn::{featurize, GcnModel};
use causalwatch::pipeline::{run_pipeline, write_artifacts, PipelineInput};
use causalwatch::stream::{load_csv, PriorKnowledge};
use causalwatch::trigger::{similarity, TriggerConfig};
use causalwatch::Error;
use nalgebra::DMatrix;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Training = 6,
    Panic = 7,
}

/// Weighted temporal causal graph.
pub struct CwGraph(CausalGraph);

/// Trained graph classifier.
pub struct CwModel(GcnModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CwStatus {
    match err {
        Error::Io { .. } => CwStatus::Io,
        Error::Csv(_) | Error::Json(_) | Error::Config(_) => CwStatus::Parse,
        Error::Shape { .. } | Error::BinMismatch | Error::NodeMismatch(_) => CwStatus::Shape,
        Error::Training(_) => CwStatus::Training,
        Error::Stage { source, .. } => status_of(source),
        _ => CwStatus::InvalidInput,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CwStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CwStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CwStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn string_arg(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Lib(Error::InvalidInput(format!("{what} is not valid UTF-8"))))
}

unsafe fn optional_string(p: *const c_char, what: &'static str) -> Result<Option<String>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        string_arg(p, what).map(Some)
    }
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fit a causal graph to a row-major `rows x cols` window. Nodes are named
/// `x0, x1, ...`.
///
/// # Safety
/// `data` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_fit(
    data: *const f64,
    rows: usize,
    cols: usize,
    max_lag: usize,
    lambda: f64,
    edge_threshold: f64,
    out: *mut *mut CwGraph,
) -> CwStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| Error::InvalidInput("rows * cols overflows".into()))?;
        if n == 0 {
            return Err(Error::InvalidInput("empty window".into()).into());
        }
        let window = DMatrix::from_row_slice(rows, cols, std::slice::from_raw_parts(data, n));
        let ids: Vec<String> = (0..cols).map(|i| format!("x{i}")).collect();
        let config = DiscoveryConfig {
            lambda_intra: lambda,
            lambda_lag: lambda,
            edge_threshold,
            max_lag,
            ..DiscoveryConfig::default()
        };
        config.validate()?;
        let g = fit_window(&window, &ids, &config)?;
        put(out, Box::into_raw(Box::new(CwGraph(g))), "out")
    })
}

/// Parse a graph from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_from_json(json: *const c_char, out: *mut *mut CwGraph) -> CwStatus {
    guard(|| {
        let g = CausalGraph::from_json(&string_arg(json, "json")?)?;
        put(out, Box::into_raw(Box::new(CwGraph(g))), "out")
    })
}

/// Serialize a graph to JSON. Free the result with `cw_string_free`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_to_json(graph: *const CwGraph, out: *mut *mut c_char) -> CwStatus {
    guard(|| {
        let g = non_null(graph, "graph")?;
        let text = g.0.to_json()?;
        put(out, c_string(text), "out")
    })
}

/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_node_count(graph: *const CwGraph, out: *mut usize) -> CwStatus {
    guard(|| put(out, non_null(graph, "graph")?.0.node_count(), "out"))
}

/// Number of nonzero entries across the intra and lag blocks.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_edge_count(graph: *const CwGraph, out: *mut usize) -> CwStatus {
    guard(|| put(out, non_null(graph, "graph")?.0.edge_count(), "out"))
}

/// Acyclicity surrogate `tr(exp(W∘W)) - M` of the intra block; 0 for a DAG.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_acyclicity(graph: *const CwGraph, out: *mut f64) -> CwStatus {
    guard(|| put(out, acyclicity_value(&non_null(graph, "graph")?.0.intra), "out"))
}

/// Release a graph. NULL is ignored.
///
/// # Safety
/// `graph` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_free(graph: *mut CwGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// `1 - JS` between the edge-weight histograms of two graphs (`bins` bins over
/// `[0, weight_max]`).
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_graph_similarity(
    a: *const CwGraph,
    b: *const CwGraph,
    bins: usize,
    weight_max: f64,
    out: *mut f64,
) -> CwStatus {
    guard(|| {
        let config = TriggerConfig {
            bins,
            weight_max,
            ..TriggerConfig::default()
        };
        config.validate()?;
        let s = similarity(&non_null(a, "a")?.0, &non_null(b, "b")?.0, &config)?;
        put(out, s, "out")
    })
}

/// Load a model dump.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_model_from_json(json: *const c_char, out: *mut *mut CwModel) -> CwStatus {
    guard(|| {
        let m = GcnModel::from_json(&string_arg(json, "json")?)?;
        put(out, Box::into_raw(Box::new(CwModel(m))), "out")
    })
}

/// Attack probability of `graph`, with attack/impact nodes given as prior
/// knowledge JSON (`{"attack_nodes": [...], "impact_nodes": [...]}`).
///
/// # Safety
/// Handles must be live; `prior_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_model_predict(
    model: *const CwModel,
    graph: *const CwGraph,
    prior_json: *const c_char,
    out: *mut f64,
) -> CwStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let graph = non_null(graph, "graph")?;
        let prior: PriorKnowledge = serde_json::from_str(&string_arg(prior_json, "prior_json")?).map_err(Error::from)?;
        let sample = featurize(&graph.0, &prior, 0)?;
        put(out, model.0.forward(&sample)?, "out")
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cw_model_free(model: *mut CwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run the full pipeline on a labeled CSV file. `config_toml` and `out_dir`
/// may be NULL (defaults, no artifacts). The report JSON is returned through
/// `report_json`; free it with `cw_string_free`.
///
/// # Safety
/// String arguments must be NUL-terminated or NULL where allowed; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_run_pipeline(
    config_toml: *const c_char,
    data_csv_path: *const c_char,
    prior_json: *const c_char,
    out_dir: *const c_char,
    report_json: *mut *mut c_char,
) -> CwStatus {
    guard(|| {
        let config = match optional_string(config_toml, "config_toml")? {
            Some(text) => Config::from_toml(&text)?,
            None => Config::default(),
        };
        let path = string_arg(data_csv_path, "data_csv_path")?;
        let prior: PriorKnowledge = serde_json::from_str(&string_arg(prior_json, "prior_json")?).map_err(Error::from)?;
        let out_dir = optional_string(out_dir, "out_dir")?;
        if report_json.is_null() {
            return Err(Failure::Null("report_json"));
        }
        let series = load_csv(Path::new(&path), None, &config.stream.label_column)?.series;
        let output = run_pipeline(&config, &PipelineInput { series, prior })?;
        if let Some(dir) = out_dir {
            write_artifacts(&output, dir)?;
        }
        put(report_json, c_string(output.report.to_json()?), "report_json")
    })
}
