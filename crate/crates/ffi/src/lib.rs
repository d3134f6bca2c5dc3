//! C interface to the teleportation engine.
//!
//! Graphs and reports are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`CvtqtStatus`]; on failure the
//! message is available from [`cvtqt_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cvtqt::analysis::{optimize_weight, protocol_error_probability, ErrorProfile, SqueezingLevel};
use cvtqt::graph::{ClusterGraph, GraphKind};
use cvtqt::protocol::{run_protocol, Scenario, TeleportationReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvtqtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGraph = 3,
    ProtocolFailed = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Weighted cluster graph.
pub struct CvtqtGraph(ClusterGraph);

/// Result of a symbolic protocol run.
pub struct CvtqtReport(TeleportationReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (CvtqtStatus, String)>) -> CvtqtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CvtqtStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CvtqtStatus::Panic
        }
    }
}

fn null(what: &str) -> (CvtqtStatus, String) {
    (CvtqtStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cvtqt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn emit_graph(graph: ClusterGraph, out: *mut *mut CvtqtGraph) -> Result<(), (CvtqtStatus, String)> {
    // SAFETY: caller guarantees `out` is null or valid for writes.
    let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
    *slot = Box::into_raw(Box::new(CvtqtGraph(graph)));
    Ok(())
}

/// Canonical twelve-node graph.
#[no_mangle]
pub extern "C" fn cvtqt_graph_twelve(out: *mut *mut CvtqtGraph) -> CvtqtStatus {
    guard(|| emit_graph(ClusterGraph::canonical(GraphKind::Twelve), out))
}

/// Two-node graph with unit weight.
#[no_mangle]
pub extern "C" fn cvtqt_graph_two(out: *mut *mut CvtqtGraph) -> CvtqtStatus {
    guard(|| emit_graph(ClusterGraph::canonical(GraphKind::Two), out))
}

/// Weighted three-node graph.
#[no_mangle]
pub extern "C" fn cvtqt_graph_three(g12: f64, g13: f64, g23: f64, out: *mut *mut CvtqtGraph) -> CvtqtStatus {
    guard(|| {
        let rows = vec![vec![0.0, g12, g13], vec![g12, 0.0, g23], vec![g13, g23, 0.0]];
        let graph = ClusterGraph::from_rows(&rows).map_err(|e| (CvtqtStatus::InvalidGraph, e.to_string()))?;
        emit_graph(graph, out)
    })
}

/// Graph from a row-major `n × n` weight matrix.
///
/// # Safety
/// `weights` must point to `n * n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_graph_from_weights(
    weights: *const f64,
    n: usize,
    out: *mut *mut CvtqtGraph,
) -> CvtqtStatus {
    guard(|| {
        if weights.is_null() {
            return Err(null("weights"));
        }
        let len = n
            .checked_mul(n)
            .ok_or((CvtqtStatus::InvalidArgument, "n too large".to_string()))?;
        // SAFETY: caller guarantees `n * n` readable doubles.
        let flat = unsafe { std::slice::from_raw_parts(weights, len) };
        let rows: Vec<Vec<f64>> = flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        let graph = ClusterGraph::from_rows(&rows).map_err(|e| (CvtqtStatus::InvalidGraph, e.to_string()))?;
        emit_graph(graph, out)
    })
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_graph_node_count(graph: *const CvtqtGraph, out: *mut usize) -> CvtqtStatus {
    guard(|| {
        // SAFETY: caller guarantees validity.
        let g = unsafe { graph.as_ref() }.ok_or_else(|| null("graph"))?;
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *slot = g.0.node_count();
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_graph_free(graph: *mut CvtqtGraph) {
    if !graph.is_null() {
        // SAFETY: handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(graph) });
    }
}

/// Runs a scenario (`bca`, `cab`, `pairwise:ab`, `merge`, `single-hop:a2`,
/// `single-hop:a3`, `one-directional`) with its standard schedule.
///
/// # Safety
/// `graph` must be a live handle and `scenario` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_run_protocol(
    graph: *const CvtqtGraph,
    scenario: *const c_char,
    out: *mut *mut CvtqtReport,
) -> CvtqtStatus {
    guard(|| {
        // SAFETY: caller guarantees validity.
        let g = unsafe { graph.as_ref() }.ok_or_else(|| null("graph"))?;
        if scenario.is_null() {
            return Err(null("scenario"));
        }
        let name = unsafe { CStr::from_ptr(scenario) }
            .to_str()
            .map_err(|_| (CvtqtStatus::InvalidArgument, "scenario is not UTF-8".to_string()))?;
        let scenario: Scenario = name
            .parse()
            .map_err(|e: cvtqt::protocol::ProtocolError| (CvtqtStatus::InvalidArgument, e.to_string()))?;
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let report = run_protocol(&g.0, scenario).map_err(|e| (CvtqtStatus::ProtocolFailed, e.to_string()))?;
        *slot = Box::into_raw(Box::new(CvtqtReport(report)));
        Ok(())
    })
}

/// Number of output quadratures (X rows, then Y rows).
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_report_len(report: *const CvtqtReport, out: *mut usize) -> CvtqtStatus {
    guard(|| {
        // SAFETY: caller guarantees validity.
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *slot = r.0.variances.len();
        Ok(())
    })
}

/// Copies the variance coefficients into `buf`, which must hold at least
/// `cvtqt_report_len` values.
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_report_variances(report: *const CvtqtReport, buf: *mut f64, len: usize) -> CvtqtStatus {
    guard(|| {
        // SAFETY: caller guarantees validity.
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = &r.0.variances;
        if len < v.len() {
            return Err((
                CvtqtStatus::BufferTooSmall,
                format!("need {} values, got {len}", v.len()),
            ));
        }
        // SAFETY: `buf` holds at least `v.len()` doubles.
        unsafe { ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len()) };
        Ok(())
    })
}

/// Report as a JSON document. Release with [`cvtqt_string_free`].
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_report_json(report: *const CvtqtReport, out: *mut *mut c_char) -> CvtqtStatus {
    guard(|| {
        // SAFETY: caller guarantees validity.
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let text = serde_json::to_string(&r.0).map_err(|e| (CvtqtStatus::Panic, e.to_string()))?;
        *slot = CString::new(text)
            .map_err(|e| (CvtqtStatus::Panic, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: pointer came from CString::into_raw.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_report_free(report: *mut CvtqtReport) {
    if !report.is_null() {
        // SAFETY: handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Failure probability for `pairs` error pairs `(x[k], y[k])` at `s_db`.
///
/// # Safety
/// `x` and `y` must each hold `pairs` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_error_probability(
    x: *const f64,
    y: *const f64,
    pairs: usize,
    s_db: f64,
    out: *mut f64,
) -> CvtqtStatus {
    guard(|| {
        if x.is_null() || y.is_null() {
            return Err(null("coefficients"));
        }
        // SAFETY: caller guarantees `pairs` readable doubles in each.
        let (xs, ys) = unsafe {
            (
                std::slice::from_raw_parts(x, pairs),
                std::slice::from_raw_parts(y, pairs),
            )
        };
        let invalid = |e: cvtqt::analysis::AnalysisError| (CvtqtStatus::InvalidArgument, e.to_string());
        let profile = ErrorProfile::new(xs.iter().copied().zip(ys.iter().copied()).collect()).map_err(invalid)?;
        let level = SqueezingLevel::from_db(s_db).map_err(invalid)?;
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *slot = protocol_error_probability(&profile, level);
        Ok(())
    })
}

/// Optimal three-node weight and its failure probability at `s_db`.
///
/// # Safety
/// `g` and `probability` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvtqt_optimize_weight(s_db: f64, g: *mut f64, probability: *mut f64) -> CvtqtStatus {
    guard(|| {
        // SAFETY: caller guarantees validity.
        let g_slot = unsafe { g.as_mut() }.ok_or_else(|| null("g"))?;
        let p_slot = unsafe { probability.as_mut() }.ok_or_else(|| null("probability"))?;
        let opt = optimize_weight(s_db).map_err(|e| (CvtqtStatus::InvalidArgument, e.to_string()))?;
        *g_slot = opt.g;
        *p_slot = opt.probability;
        Ok(())
    })
}
