use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use groundnet::compiler::Lexicon;
use groundnet::scene::{save_dataset, scene_to_line};
use groundnet::synth::{gen_dataset_scene, generate_dataset, SplitCounts, WorldSpec};
use groundnet::training::{compile_scene, train, TrainConfig};
use groundnet_ffi::*;

const SANDWICH: &str = groundnet::compiler::SANDWICH_TREE;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gn_last_error()).to_str().unwrap().to_string() }
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p).to_str().unwrap().to_string() };
    unsafe { gn_string_free(p) };
    s
}

fn compile(text: &str) -> *mut GnGraph {
    let c = CString::new(text).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { gn_graph_compile(c.as_ptr(), &mut g) }, GnStatus::Ok);
    g
}

#[test]
fn compile_and_inspect() {
    let g = compile(SANDWICH);
    unsafe {
        assert_eq!(gn_graph_node_count(g), 7);
        let mut root = 0;
        assert_eq!(gn_graph_root(g, &mut root), GnStatus::Ok);
        let mut kind = GnNodeKind::Locate;
        assert_eq!(gn_graph_node_kind(g, root, &mut kind), GnStatus::Ok);
        assert_eq!(kind, GnNodeKind::Intersect);
        let mut kinds = Vec::new();
        for id in 0..7 {
            assert_eq!(gn_graph_node_kind(g, id, &mut kind), GnStatus::Ok);
            kinds.push(kind);
        }
        assert_eq!(kinds.iter().filter(|k| **k == GnNodeKind::Locate).count(), 3);
        let mut phrase = ptr::null_mut();
        assert_eq!(gn_graph_node_phrase(g, 0, &mut phrase), GnStatus::Ok);
        assert_eq!(take_string(phrase), "half sandwich");
        let mut dot = ptr::null_mut();
        assert_eq!(gn_graph_export(g, GnFormat::Dot, &mut dot), GnStatus::Ok);
        assert!(take_string(dot).starts_with("digraph"));
        let mut json = ptr::null_mut();
        assert_eq!(gn_graph_export(g, GnFormat::Json, &mut json), GnStatus::Ok);
        let back = groundnet::compiler::ComputationGraph::from_json(&take_string(json)).unwrap();
        assert_eq!(back.len(), 7);
        assert_eq!(gn_graph_node_kind(g, 7, &mut kind), GnStatus::OutOfRange);
        assert!(last_error().contains('7'));
        gn_graph_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(gn_graph_compile(ptr::null(), &mut g), GnStatus::NullPointer);
        let bad = CString::new("(NP (NN ball)").unwrap();
        assert_eq!(gn_graph_compile(bad.as_ptr(), &mut g), GnStatus::Parse);
        assert!(!last_error().is_empty());
        assert!(g.is_null());
        let ok = CString::new("(NP (NN ball))").unwrap();
        assert_eq!(gn_graph_compile(ok.as_ptr(), ptr::null_mut()), GnStatus::NullPointer);
        let empty = CString::new("(NP (DT the))").unwrap();
        assert_eq!(gn_graph_compile(empty.as_ptr(), &mut g), GnStatus::Compile);
        assert_eq!(gn_graph_node_count(ptr::null()), 0);
        let missing = CString::new("/nonexistent/ckpt.json").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(gn_model_load(missing.as_ptr(), &mut m), GnStatus::Io);
        assert!(last_error().contains("nonexistent"));
        gn_graph_free(ptr::null_mut());
        gn_model_free(ptr::null_mut());
        gn_string_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(gn_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

fn tiny_checkpoint(dir: &std::path::Path) -> PathBuf {
    let spec = WorldSpec { split: SplitCounts { train: 6, val: 0, test: 2 }, ..WorldSpec::default() };
    let scenes = generate_dataset(&spec).unwrap();
    let config = TrainConfig { epochs: 1, hidden: 4, embed: 4, ..TrainConfig::default() };
    let path = dir.join("ckpt.json");
    train(&scenes, &config, |_| {}).unwrap().save(&path).unwrap();
    save_dataset(&scenes, dir.join("data.jsonl")).unwrap();
    path
}

#[test]
fn ground_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = CString::new(tiny_checkpoint(dir.path()).to_str().unwrap()).unwrap();
    let scene = gen_dataset_scene(&WorldSpec::default(), 3).unwrap().scene;
    let line = CString::new(scene_to_line(&scene)).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(gn_model_load(ckpt.as_ptr(), &mut m), GnStatus::Ok);
        let mut report = ptr::null_mut();
        let mut predicted = 0u32;
        assert_eq!(gn_ground(m, ptr::null(), line.as_ptr(), &mut report, &mut predicted), GnStatus::Ok);
        let parsed: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
        assert!(scene.boxes.iter().any(|b| b.id == predicted));
        let nodes = parsed["nodes"].as_array().unwrap();
        let graph = compile_scene(&scene, &Lexicon::default()).unwrap();
        assert_eq!(nodes.len(), graph.len());
        let root = parsed["root"].as_u64().unwrap() as usize;
        assert_eq!(nodes[root]["argmax_box"].as_u64().unwrap() as u32, predicted);

        let g = compile("(NP (JJ red) (NN ball))");
        assert_eq!(gn_ground(m, g, line.as_ptr(), &mut report, ptr::null_mut()), GnStatus::Ok);
        let single: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
        assert_eq!(single["nodes"].as_array().unwrap().len(), 1);

        let broken = CString::new("{\"version\": 1}").unwrap();
        assert_eq!(gn_ground(m, g, broken.as_ptr(), &mut report, ptr::null_mut()), GnStatus::Scene);
        assert_eq!(gn_ground(ptr::null(), g, line.as_ptr(), &mut report, ptr::null_mut()), GnStatus::NullPointer);
        gn_graph_free(g);
        gn_model_free(m);
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "groundnet.h"

int main(void) {
    GnGraph *g = NULL;
    if (gn_graph_compile("(NP (NP (JJ red) (NN ball)) (PP (JJ left) (IN of) (NP (NN cube))))", &g) != GN_STATUS_OK) {
        return 1;
    }
    size_t root = 99;
    enum GnNodeKind kind;
    if (gn_graph_root(g, &root) != GN_STATUS_OK || gn_graph_node_kind(g, root, &kind) != GN_STATUS_OK) return 2;
    char *dot = NULL;
    if (gn_graph_export(g, GN_FORMAT_DOT, &dot) != GN_STATUS_OK) return 3;
    printf("%zu %d %d\n", gn_graph_node_count(g), (int)kind, strncmp(dot, "digraph", 7) == 0);
    gn_string_free(dot);
    gn_graph_free(g);
    if (gn_graph_compile("(NP", &g) != GN_STATUS_PARSE || gn_last_error() == NULL) return 4;
    return 0;
}
"#;

#[test]
fn header_links_from_c() {
    let lib = target_dir().join("libgroundnet_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "4 2 1\n");
}
