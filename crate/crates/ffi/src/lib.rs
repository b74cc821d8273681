//! C ABI over `groundnet`.
//!
//! Graphs and models are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns a
//! [`GnStatus`]; on failure [`gn_last_error`] holds a message for the
//! calling thread. Strings handed out by the library are released with
//! [`gn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use groundnet::compiler::{export_graph, generate_computation_graph, ComputationGraph, GraphFormat, Lexicon, NodeKind};
use groundnet::grounding::{self, GroundNet};
use groundnet::scene::scene_from_line;
use groundnet::training::{compile_scene, Checkpoint};
use groundnet::treebank::read_ptb;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Compile = 4,
    Io = 5,
    Checkpoint = 6,
    Scene = 7,
    Grounding = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnNodeKind {
    Locate = 0,
    Relate = 1,
    Intersect = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnFormat {
    Dot = 0,
    Json = 1,
}

/// Compiled computation graph.
pub struct GnGraph {
    graph: ComputationGraph,
}

/// Trained model loaded from a checkpoint.
pub struct GnModel {
    model: GroundNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GnStatus, String);

fn fail(status: GnStatus, e: impl std::fmt::Display) -> Failure {
    Failure(status, e.to_string())
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GnStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside groundnet".into());
            GnStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(GnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(GnStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(GnStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

unsafe fn graph_ref<'a>(g: *const GnGraph) -> Result<&'a ComputationGraph, Failure> {
    g.as_ref().map(|g| &g.graph).ok_or_else(|| fail(GnStatus::NullPointer, "graph is null"))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Compiles a bracketed parse into a graph.
///
/// # Safety
/// `ptb` must be a nul-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_compile(ptb: *const c_char, out: *mut *mut GnGraph) -> GnStatus {
    guard(|| {
        let text = read_str(ptb, "ptb")?;
        let tree = read_ptb(text).map_err(|e| fail(GnStatus::Parse, e))?;
        let graph = generate_computation_graph(&tree, &Lexicon::default()).map_err(|e| fail(GnStatus::Compile, e))?;
        write_out(out, Box::into_raw(Box::new(GnGraph { graph })), "out")
    })
}

/// # Safety
/// `graph` must come from [`gn_graph_compile`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_free(graph: *mut GnGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of nodes; 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_node_count(graph: *const GnGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.len())
}

/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_root(graph: *const GnGraph, out: *mut usize) -> GnStatus {
    guard(|| write_out(out, graph_ref(graph)?.root, "out"))
}

/// Kind of node `id`.
///
/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_node_kind(graph: *const GnGraph, id: usize, out: *mut GnNodeKind) -> GnStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let node = g.nodes.get(id).ok_or_else(|| fail(GnStatus::OutOfRange, format!("no node {id}")))?;
        let kind = match node.kind {
            NodeKind::Locate => GnNodeKind::Locate,
            NodeKind::Relate => GnNodeKind::Relate,
            NodeKind::Intersect => GnNodeKind::Intersect,
        };
        write_out(out, kind, "out")
    })
}

/// Space-separated phrase of node `id`; free with [`gn_string_free`].
///
/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_node_phrase(graph: *const GnGraph, id: usize, out: *mut *mut c_char) -> GnStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let node = g.nodes.get(id).ok_or_else(|| fail(GnStatus::OutOfRange, format!("no node {id}")))?;
        write_out(out, to_c_string(node.phrase.join(" ")), "out")
    })
}

/// DOT or JSON rendering; free with [`gn_string_free`].
///
/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gn_graph_export(graph: *const GnGraph, format: GnFormat, out: *mut *mut c_char) -> GnStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let format = match format {
            GnFormat::Dot => GraphFormat::Dot,
            GnFormat::Json => GraphFormat::Json,
        };
        write_out(out, to_c_string(export_graph(g, format)), "out")
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gn_model_load(path: *const c_char, out: *mut *mut GnModel) -> GnStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| fail(GnStatus::Io, format!("{path}: {e}")))?;
        let checkpoint = Checkpoint::from_text(&text).map_err(|e| fail(GnStatus::Checkpoint, e))?;
        let model = checkpoint.to_model().map_err(|e| fail(GnStatus::Checkpoint, e))?;
        write_out(out, Box::into_raw(Box::new(GnModel { model })), "out")
    })
}

/// # Safety
/// `model` must come from [`gn_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gn_model_free(model: *mut GnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Grounds a scene given as one dataset record (JSON). With a NULL
/// `graph` the scene's own parse is compiled. Writes the per-node report
/// as JSON to `report` and, when `prediction` is not NULL, the id of the
/// predicted box.
///
/// # Safety
/// `model` must be a live handle, `graph` NULL or live, `scene_json`
/// nul-terminated and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn gn_ground(
    model: *const GnModel,
    graph: *const GnGraph,
    scene_json: *const c_char,
    report: *mut *mut c_char,
    prediction: *mut u32,
) -> GnStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| fail(GnStatus::NullPointer, "model is null"))?.model;
        let scene = scene_from_line(read_str(scene_json, "scene_json")?, 0).map_err(|e| fail(GnStatus::Scene, e))?;
        let compiled;
        let graph = match graph.as_ref() {
            Some(g) => &g.graph,
            None => {
                compiled = compile_scene(&scene, &Lexicon::default()).map_err(|e| fail(GnStatus::Compile, e))?;
                &compiled
            }
        };
        let result = grounding::execute(model, graph, &scene).map_err(|e| fail(GnStatus::Grounding, e))?;
        let json = serde_json::to_string(&result.to_report(graph, &scene)).expect("report serialises");
        if !prediction.is_null() {
            prediction.write(scene.boxes[result.prediction()].id);
        }
        write_out(report, to_c_string(json), "report")
    })
}
