use std::ffi::{CStr, CString};
use std::ptr;

use causalwatch::gcn::GcnModel;
use causalwatch_ffi::*;

fn last_error() -> String {
    let p = cw_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn chain_window(rows: usize) -> Vec<f64> {
    // x1 = 0.9 x0 + noise, with a cheap deterministic noise source.
    let mut state = 12345u64;
    let mut noise = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let mut out = Vec::with_capacity(rows * 2);
    for _ in 0..rows {
        let x0 = noise() * 2.0;
        let x1 = 0.9 * x0 + 0.3 * noise();
        out.extend([x0, x1]);
    }
    out
}

fn fit(data: &[f64], rows: usize, cols: usize) -> *mut CwGraph {
    let mut g = ptr::null_mut();
    let st = unsafe { cw_graph_fit(data.as_ptr(), rows, cols, 0, 0.05, 0.3, &mut g) };
    assert_eq!(st, CwStatus::Ok, "{}", last_error_or_empty());
    assert!(!g.is_null());
    g
}

fn last_error_or_empty() -> String {
    let p = cw_last_error_message();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cw_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn fit_counts_and_json_round_trip() {
    let data = chain_window(400);
    let g = fit(&data, 400, 2);
    unsafe {
        let mut n = 0usize;
        assert_eq!(cw_graph_node_count(g, &mut n), CwStatus::Ok);
        assert_eq!(n, 2);
        let mut e = 0usize;
        assert_eq!(cw_graph_edge_count(g, &mut e), CwStatus::Ok);
        assert!(e >= 1);
        let mut h = f64::NAN;
        assert_eq!(cw_graph_acyclicity(g, &mut h), CwStatus::Ok);
        assert!(h.abs() < 1e-9);

        let mut json = ptr::null_mut();
        assert_eq!(cw_graph_to_json(g, &mut json), CwStatus::Ok);
        let mut g2 = ptr::null_mut();
        assert_eq!(cw_graph_from_json(json, &mut g2), CwStatus::Ok);
        let mut json2 = ptr::null_mut();
        assert_eq!(cw_graph_to_json(g2, &mut json2), CwStatus::Ok);
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(json2));

        let mut s = f64::NAN;
        assert_eq!(cw_graph_similarity(g, g2, 20, 2.0, &mut s), CwStatus::Ok);
        assert!((s - 1.0).abs() < 1e-12);

        cw_string_free(json);
        cw_string_free(json2);
        cw_graph_free(g);
        cw_graph_free(g2);
    }
}

#[test]
fn null_arguments_report_null_pointer() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(cw_graph_fit(ptr::null(), 10, 2, 0, 0.1, 0.3, &mut g), CwStatus::NullPointer);
        assert!(last_error().contains("data"));
        assert_eq!(cw_graph_from_json(ptr::null(), &mut g), CwStatus::NullPointer);
        let mut n = 0usize;
        assert_eq!(cw_graph_node_count(ptr::null(), &mut n), CwStatus::NullPointer);
        let data = chain_window(50);
        assert_eq!(cw_graph_fit(data.as_ptr(), 50, 2, 0, 0.1, 0.3, ptr::null_mut()), CwStatus::NullPointer);
        // Freeing NULL is a no-op.
        cw_graph_free(ptr::null_mut());
        cw_model_free(ptr::null_mut());
        cw_string_free(ptr::null_mut());
    }
}

#[test]
fn error_codes_and_message_reset() {
    unsafe {
        let bad = CString::new("{not json").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(cw_graph_from_json(bad.as_ptr(), &mut g), CwStatus::Parse);
        assert!(!last_error().is_empty());
        assert!(g.is_null());

        let data = [1.0f64; 4];
        assert_eq!(cw_graph_fit(data.as_ptr(), 0, 4, 0, 0.1, 0.3, &mut g), CwStatus::InvalidInput);

        let bad_toml = CString::new("[gcn]\nnonsense = 1\n").unwrap();
        let csv = CString::new("/nonexistent.csv").unwrap();
        let prior = CString::new(r#"{"attack_nodes":[],"impact_nodes":[]}"#).unwrap();
        let mut report = ptr::null_mut();
        assert_eq!(
            cw_run_pipeline(bad_toml.as_ptr(), csv.as_ptr(), prior.as_ptr(), ptr::null(), &mut report),
            CwStatus::Parse
        );
        assert_eq!(
            cw_run_pipeline(ptr::null(), csv.as_ptr(), prior.as_ptr(), ptr::null(), &mut report),
            CwStatus::Io
        );

        // A successful call clears the message.
        let mut v = 0usize;
        let good = fit(&chain_window(100), 100, 2);
        assert_eq!(cw_graph_node_count(good, &mut v), CwStatus::Ok);
        assert!(cw_last_error_message().is_null());
        cw_graph_free(good);
    }
}

#[test]
fn model_predict_matches_library() {
    let model = GcnModel::init(3, 4, 0.0, 7).unwrap();
    let dump = CString::new(model.to_json().unwrap()).unwrap();
    let prior = CString::new(r#"{"attack_nodes":["x0"],"impact_nodes":["x1"]}"#).unwrap();
    let g = fit(&chain_window(300), 300, 2);
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cw_model_from_json(dump.as_ptr(), &mut m), CwStatus::Ok);
        let mut p = f64::NAN;
        assert_eq!(cw_model_predict(m, g, prior.as_ptr(), &mut p), CwStatus::Ok);
        assert!((0.0..=1.0).contains(&p));

        let mut json = ptr::null_mut();
        assert_eq!(cw_graph_to_json(g, &mut json), CwStatus::Ok);
        let graph = causalwatch::discovery::CausalGraph::from_json(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        let pr: causalwatch::stream::PriorKnowledge = serde_json::from_str(prior.to_str().unwrap()).unwrap();
        let sample = causalwatch::gcn::featurize(&graph, &pr, 0).unwrap();
        assert_eq!(p.to_bits(), model.forward(&sample).unwrap().to_bits());

        cw_string_free(json);
        cw_model_free(m);
        cw_graph_free(g);
    }
}

#[test]
fn header_declares_every_symbol() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/causalwatch.h")).unwrap();
    for sym in [
        "cw_version",
        "cw_last_error_message",
        "cw_string_free",
        "cw_graph_fit",
        "cw_graph_from_json",
        "cw_graph_to_json",
        "cw_graph_node_count",
        "cw_graph_edge_count",
        "cw_graph_acyclicity",
        "cw_graph_free",
        "cw_graph_similarity",
        "cw_model_from_json",
        "cw_model_predict",
        "cw_model_free",
        "cw_run_pipeline",
        "typedef struct CwGraph CwGraph",
        "typedef struct CwModel CwModel",
        "CW_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c_when_cc_available() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/causalwatch.h");
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).output() else {
        eprintln!("cc not found, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
