use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use tesh_core::config::Config;
use tesh_core::data::{planted_dataset, PlantedConfig};
use tesh_core::pipeline::{train_dir, Session};
use tesh_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let g = planted_dataset(&PlantedConfig { nodes: 40, group_size: 10, ..Default::default() }).unwrap();
    g.save(&data).unwrap();
    let mut cfg = Config::default();
    cfg.apply_overrides(&["D=4", "L=2", "epochs=1", "batch_size=8"]).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    train_dir(&data, &cfg).unwrap().save(&ckpt).unwrap();
    Fixture { _dir: dir, data, ckpt }
}

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { tesh_string_free(s) };
    out
}

fn last_error() -> String {
    let p = tesh_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn open(f: &Fixture) -> *mut TeshSession {
    let mut s = ptr::null_mut();
    let ckpt = c(&f.ckpt);
    assert_eq!(unsafe { tesh_session_open(ckpt.as_ptr(), ptr::null(), &mut s) }, TeshStatus::Ok);
    assert!(!s.is_null());
    s
}

#[test]
fn predict_matches_the_rust_session() {
    let f = fixture();
    let s = open(&f);
    let reference = Session::open(&f.ckpt, None).unwrap();
    unsafe {
        assert_eq!(tesh_session_num_nodes(s), 40);
        let k = tesh_session_num_edge_types(s);
        assert_eq!(k, reference.model.edge_types.len());
        let mut name = ptr::null_mut();
        assert_eq!(tesh_session_edge_type(s, 0, &mut name), TeshStatus::Ok);
        assert_eq!(take(name), reference.model.edge_types[0]);

        let (mut z, mut y) = (0.0, vec![0.0; k]);
        assert_eq!(tesh_session_predict(s, 3, 7, &mut z, y.as_mut_ptr(), k), TeshStatus::Ok);
        let p = reference.predict(3, 7).unwrap();
        assert_eq!(z.to_bits(), p.z_prob.to_bits());
        assert_eq!(y, p.y);
        tesh_session_free(s);
    }
}

#[test]
fn json_entry_points() {
    let f = fixture();
    let s = open(&f);
    let (i, j) = (CString::new("0").unwrap(), CString::new("1").unwrap());
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(tesh_session_predict_json(s, i.as_ptr(), j.as_ptr(), &mut out), TeshStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert!(v["z_prob"].is_number());

        assert_eq!(tesh_session_explain_json(s, i.as_ptr(), j.as_ptr(), 1, &mut out), TeshStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert!(v["paths"].is_array());

        let split = CString::new("test").unwrap();
        assert_eq!(tesh_session_evaluate_json(s, split.as_ptr(), &mut out), TeshStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert!(v["auc"].is_number());
        tesh_session_free(s);

        let data = c(&f.data);
        assert_eq!(tesh_metrics_json(data.as_ptr(), 100, 0, &mut out), TeshStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["nodes"], 40);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    let f = fixture();
    unsafe {
        let mut s = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(tesh_session_open(missing.as_ptr(), ptr::null(), &mut s), TeshStatus::Checkpoint);
        assert!(s.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(tesh_session_open(ptr::null(), ptr::null(), &mut s), TeshStatus::NullPointer);

        let s = open(&f);
        assert!(tesh_last_error().is_null());
        let (mut z, mut y) = (0.0, [0.0; 1]);
        assert_eq!(tesh_session_predict(s, 0, 1, &mut z, y.as_mut_ptr(), 0), TeshStatus::BufferTooSmall);
        let mut y = vec![0.0; tesh_session_num_edge_types(s)];
        assert_eq!(tesh_session_predict(s, 0, 400, &mut z, y.as_mut_ptr(), y.len()), TeshStatus::UnknownNode);
        assert!(last_error().contains("400"));

        let (bad, ok) = (CString::new("nope").unwrap(), CString::new("1").unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(tesh_session_predict_json(s, bad.as_ptr(), ok.as_ptr(), &mut out), TeshStatus::UnknownNode);
        let split = CString::new("bogus").unwrap();
        assert_eq!(tesh_session_evaluate_json(s, split.as_ptr(), &mut out), TeshStatus::InvalidArgument);
        assert_eq!(tesh_session_edge_type(s, 99, &mut out), TeshStatus::InvalidArgument);
        assert_eq!(tesh_session_predict_json(ptr::null(), ok.as_ptr(), ok.as_ptr(), &mut out), TeshStatus::NullPointer);
        tesh_session_free(s);
        tesh_session_free(ptr::null_mut());
        tesh_string_free(ptr::null_mut());
        assert_eq!(tesh_session_num_nodes(ptr::null()), 0);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tesh_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/tesh.h")).unwrap();
    let source = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in source.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg("-I")
        .arg(dir.join("include"))
        .stdin(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(b"#include \"tesh.h\"\nint main(void){return (int)TESH_STATUS_OK;}\n")?;
            child.wait()
        })
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(status.success());
}
