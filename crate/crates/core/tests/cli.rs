use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::{json, Value};

const OUTPUTS: [&str; 3] = ["config.json", "posterior.json", "metrics.csv"];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graffl"))
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn small_trimodal() -> Value {
    json!({
        "scenario": "trimodal",
        "seed": 5,
        "sites": [{"n": 30}, {"n": 30}, {"n": 30}],
        "abc": {"n_proposals": 3000, "n_accept": 20, "k": 3}
    })
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_ok(config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(file).display()))
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_trimodal());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&cfg, &a, &[]);
    run_ok(&cfg, &b, &[]);
    for f in OUTPUTS {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    let manifest: Value = serde_json::from_slice(&read(&a, "manifest.json")).unwrap();
    assert!(manifest["version"].as_str().unwrap().starts_with('v'));
    assert!(manifest["timings"]["total_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 4);

    let c = tmp.path().join("c");
    run_ok(&cfg, &c, &["--seed", "6"]);
    assert_ne!(read(&a, "posterior.json"), read(&c, "posterior.json"));
}

#[test]
fn loopback_socket_matches_inprocess() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_trimodal());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&cfg, &a, &["--transport", "inprocess"]);
    run_ok(&cfg, &b, &["--transport", "socket"]);
    for f in ["posterior.json", "metrics.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn(args: &[&str]) -> Child {
    bin().args(args).stderr(Stdio::null()).spawn().unwrap()
}

#[test]
fn separate_processes_match_inprocess() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_trimodal());
    let cfg_s = cfg.to_str().unwrap();
    let single = tmp.path().join("single");
    run_ok(&cfg, &single, &[]);

    let addr = format!("127.0.0.1:{}", free_port());
    let multi = tmp.path().join("multi");
    let mut coord = spawn(&[
        "run", "--config", cfg_s, "--out", multi.to_str().unwrap(), "--transport", "socket", "--listen", &addr,
    ]);
    let sites: Vec<Child> = ["2", "0", "1"]
        .iter()
        .map(|k| spawn(&["run", "--config", cfg_s, "--transport", "socket", "--connect", &addr, "--site-id", k]))
        .collect();
    for mut s in sites {
        assert!(s.wait().unwrap().success());
    }
    assert!(coord.wait().unwrap().success());
    assert_eq!(read(&single, "posterior.json"), read(&multi, "posterior.json"));
}

#[test]
fn custom_scenario_reads_csv_sites() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sites = Vec::new();
    for j in 0..2 {
        let p = tmp.path().join(format!("site{j}.csv"));
        let mut text = String::from("a,b,c,outcome\n");
        for i in 0..24 {
            let y = (i % 4 == 0) as u8;
            let v = (i as f64 + j as f64) * 0.1;
            text.push_str(&format!("{},{},{},{y}\n", v, -v + f64::from(y), v * v));
        }
        fs::write(&p, text).unwrap();
        sites.push(json!({"path": p, "label_column": "outcome"}));
    }
    let cfg = json!({
        "scenario": "custom",
        "seed": 1,
        "sites": sites,
        "abc": {"n_proposals": 500, "n_accept": 10, "k": 2},
        "suffiae": {"epochs": 3}
    });
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("out");
    run_ok(&cfg, &out, &[]);
    let post: Value = serde_json::from_slice(&read(&out, "posterior.json")).unwrap();
    assert_eq!(post["accepted"].as_array().unwrap().len(), 10);
    assert!(post["epsilon"].as_f64().unwrap() > 0.0);
}

fn exit_code(config: &Value) -> i32 {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", config);
    run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()])
        .status
        .code()
        .unwrap()
}

#[test]
fn configuration_errors_exit_with_one() {
    assert_eq!(run(&["run", "--config", "/nonexistent/graffl.json"]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(exit_code(&json!({"scenario": "trimodal", "bogus": 1})), 1);
    let mut bad = small_trimodal();
    bad["abc"]["n_accept"] = json!(5000);
    assert_eq!(exit_code(&bad), 1);
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.csv");
    fs::write(&p, "x,y\n1.0,0\n2.0,2\n").unwrap();
    let cfg = json!({
        "scenario": "custom",
        "sites": [{"path": p, "label_column": "y"}]
    });
    assert_eq!(exit_code(&cfg), 2);
    // Four rows at 6:1 leave a single minority row.
    assert_eq!(exit_code(&json!({"scenario": "imbalance", "sites": [{"n": 4}]})), 2);
}
