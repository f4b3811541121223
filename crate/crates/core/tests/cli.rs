use std::path::Path;
use std::process::{Command, Output};

use tesh_core::data::{planted_dataset, PlantedConfig};

fn tesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tesh")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let out = tesh(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Raw edge list and node file of a small planted graph.
fn raw_files(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let g = planted_dataset(&PlantedConfig { nodes: 40, group_size: 10, ..Default::default() }).unwrap();
    let (edges, nodes) = (dir.join("edges.txt"), dir.join("nodes.txt"));
    let mut e = String::from("# src\tdst\ttype\n");
    for edge in g.all_edges() {
        e += &format!("{}\t{}\t{}\n", g.node_id(edge.src as usize), g.node_id(edge.dst as usize), g.edge_types()[edge.edge_type]);
    }
    let n: String = (0..g.num_nodes()).map(|v| format!("{}\t{}\n", g.node_id(v), g.text(v))).collect();
    std::fs::write(&edges, e).unwrap();
    std::fs::write(&nodes, n).unwrap();
    (edges, nodes)
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(tesh(&[]).status.code(), Some(2));
    assert_eq!(tesh(&["train", "--data", "x"]).status.code(), Some(2));
    assert_eq!(tesh(&["eval", "--data", "x", "--ckpt", "y", "--split", "train"]).status.code(), Some(2));
    let out = tesh(&["metrics", "--data", "/nonexistent/dir"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn ingest_rejects_unknown_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, nodes) = (dir.path().join("e"), dir.path().join("n"));
    std::fs::write(&nodes, "a\tred\nb\tblue\n").unwrap();
    std::fs::write(&edges, "a\tb\tx\na\tc\tx\n").unwrap();
    let out = tesh(&["ingest", "--edges", s(&edges), "--nodes", s(&nodes), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (edges, nodes) = raw_files(p);
    let data = p.join("data");

    let v = ok_json(&["ingest", "--edges", s(&edges), "--nodes", s(&nodes), "--out", s(&data)]);
    assert_eq!(v["nodes"], 40);

    let v = ok_json(&["metrics", "--data", s(&data), "--samples", "500"]);
    assert_eq!(v["nodes"], 40);
    assert!(v["sparsity_percent"].is_string());

    let cfg = p.join("run.cfg");
    std::fs::write(&cfg, "D = 4\nL = 2\nepochs = 2\nbatch_size = 8\n").unwrap();
    let ckpt = p.join("model.ckpt");
    let v = ok_json(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--set", "lr=0.01"]);
    assert_eq!(v["epochs"].as_array().unwrap().len(), 2);
    assert!(p.join("model.ckpt.history.json").exists());

    let v = ok_json(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--split", "test"]);
    assert!((0.0..=1.0).contains(&v["auc"].as_f64().unwrap()));

    let v = ok_json(&["predict", "--ckpt", s(&ckpt), "--pair", "0", "1"]);
    let y = v["y"].as_object().unwrap();
    assert_eq!(y.len(), 2);
    let total: f64 = y.values().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - v["z_prob"].as_f64().unwrap()).abs() < 1e-12);

    let v = ok_json(&["explain", "--ckpt", s(&ckpt), "--pair", "0", "1"]);
    assert_eq!(v["paths"].as_array().unwrap().len(), 2);
    let text = tesh(&["explain", "--ckpt", s(&ckpt), "--pair", "0", "1", "--text"]);
    assert!(text.status.success());
    assert!(!text.stdout.is_empty());
    assert_eq!(tesh(&["predict", "--ckpt", s(&ckpt), "--pair", "0", "nobody"]).status.code(), Some(1));

    let noisy = p.join("noisy");
    let v = ok_json(&[
        "perturb", "--data", s(&data), "--node-drop", "20", "--text-replace", "10", "--seed", "3", "--out", s(&noisy),
    ]);
    assert_eq!(v["nodes"], 32);
    assert_eq!(ok_json(&["metrics", "--data", s(&noisy), "--samples", "100"])["nodes"], 32);
}

#[test]
fn zero_epochs_keeps_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let data = p.join("data");
    planted_dataset(&PlantedConfig { nodes: 40, group_size: 10, ..Default::default() }).unwrap().save(&data).unwrap();
    let cfg = p.join("run.cfg");
    std::fs::write(&cfg, "D = 4\nL = 2\nepochs = 0\n").unwrap();
    let (a, b) = (p.join("a.ckpt"), p.join("b.ckpt"));
    ok_json(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&a)]);
    ok_json(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let init = tesh_core::model::Model::new(
        tesh_core::config::Config::parse("D = 4\nL = 2\n", "x").unwrap().model_config(2).unwrap(),
        tesh_core::data::HeteroGraph::load_dir(&data).unwrap().edge_types().to_vec(),
    )
    .unwrap();
    let loaded = tesh_core::model::checkpoint::load_model(&a).unwrap().model;
    assert_eq!(loaded, init);
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = tesh(&["bench", "--grid", "V=64;nnz=200,400;reps=1", "--out", s(&out)]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv, String::from_utf8(o.stdout).unwrap());
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("nodes,nnz,dim,reps,seconds,output_nnz\n64,200,"));
}
