use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kornlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kornlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn kornlab")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn scaling_predict_prints_exponents() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "p.json", r#"{"p":2,"a":0,"b":2,"sigma":2,"tau":1}"#);
    let out = kornlab(t.path(), &["scaling", "predict", "--params", "p.json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["room_Du"], 2.0);
    assert_eq!(v["corridor_eps"], 5.0);
    assert_eq!(v["room_u"], 4.0);
}

#[test]
fn empty_rooms_spec_gives_unit_square() {
    let t = tempfile::tempdir().unwrap();
    let out = kornlab(t.path(), &["gallery", "rooms", "--sigma", "2", "--tau", "1", "--rooms", "0", "--out", "dom.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = korn_lab::io::read_domain(t.path().join("dom.json")).unwrap();
    assert_eq!(d.rects(), korn_lab::gallery::square(1.0).unwrap().rects());
    let w = kornlab(t.path(), &["geom", "whitney", "--domain", "dom.json", "--min-level", "4", "--out", "c.csv"]);
    assert!(w.status.success());
    let csv = std::fs::read_to_string(t.path().join("c.csv")).unwrap();
    assert!(csv.starts_with("level,ix,iy,dist_to_boundary\n"));
}

#[test]
fn emitted_domain_and_placement_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let out = kornlab(t.path(), &["gallery", "rooms", "--sigma", "2", "--tau", "1", "--rooms", "3", "--out", "r.json"]);
    assert!(out.status.success());
    let spec = korn_lab::gallery::RoomsSpec::geometric(2.0, 1.0, 4.0, 3);
    let (d, table) = korn_lab::gallery::rooms_and_corridors(&spec).unwrap();
    assert_eq!(korn_lab::io::read_domain(t.path().join("r.json")).unwrap(), d);
    let back: korn_lab::gallery::PlacementTable = korn_lab::io::read_json(t.path().join("r.placement.json")).unwrap();
    assert_eq!(back, table);
}

#[test]
fn reruns_give_identical_results() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "sq.json", r#"{"name":"square","rects":[["0","0","1","1"]]}"#);
    let args = |dir: &str| {
        vec![
            "constants", "estimate", "--domain", "sq.json", "--kind", "poincare", "--p", "3", "--h", "1/16",
            "--budget", "30", "--seed", "5", "--out-dir", dir,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    let run = |dir: &str| {
        let a = args(dir);
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = kornlab(t.path(), &a);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (out.stdout, json(t.path(), &format!("{dir}/constants-estimate.report.json")))
    };
    let (sa, ra) = run("a");
    let (sb, rb) = run("b");
    assert_eq!(sa, sb);
    assert_eq!(ra["results"], rb["results"]);
    assert_eq!(ra["seed"], 5);
    assert_eq!(ra["results"]["seed"], 5);
}

#[test]
fn config_file_matches_command_line() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "p.json", r#"{"p":2,"b":2,"sigma":2}"#);
    write(t.path(), "spec.json", r#"{"sigma":2,"tau":1,"room_sides":[0.25,0.0625,0.015625,0.00390625]}"#);
    write(
        t.path(),
        "cfg.json",
        r#"{"command":["constants","blowup"],"options":{"spec":"spec.json","params":"p.json","rooms":"1..4","out":"seq.csv"},"expect":"fails"}"#,
    );
    let out = kornlab(t.path(), &["--config", "cfg.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_cfg = std::fs::read_to_string(t.path().join("seq.csv")).unwrap();
    let out = kornlab(t.path(), &["constants", "blowup", "--spec", "spec.json", "--params", "p.json", "--rooms", "1..4"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), from_cfg);
    assert!(from_cfg.starts_with("i,r_i,quotient,predicted_exponent\n"));
}

#[test]
fn schema_violations_exit_one() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "bad.json", r#"{"p":2,"bogus":1}"#);
    assert_eq!(kornlab(t.path(), &["scaling", "predict", "--params", "bad.json"]).status.code(), Some(1));
    write(t.path(), "cfg.json", r#"{"command":["scaling","predict"],"extra":true}"#);
    assert_eq!(kornlab(t.path(), &["--config", "cfg.json"]).status.code(), Some(1));
    write(t.path(), "cfg2.json", r#"{"command":["scaling","predict"],"options":{"nope":"x"}}"#);
    assert_eq!(kornlab(t.path(), &["--config", "cfg2.json"]).status.code(), Some(1));
}

#[test]
fn disagreeing_expectation_exits_two() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "p.json", r#"{"p":2,"b":2,"sigma":2}"#);
    let base = ["scaling", "predict", "--params", "p.json", "--expect"];
    let run = |e: &str| {
        let mut a = base.to_vec();
        a.push(e);
        kornlab(t.path(), &a).status.code()
    };
    assert_eq!(run("fails"), Some(0));
    assert_eq!(run("holds"), Some(2));
}

#[test]
fn scaling_measure_writes_plot_data() {
    let t = tempfile::tempdir().unwrap();
    assert!(kornlab(t.path(), &["gallery", "rooms", "--sigma", "2", "--tau", "1", "--rooms", "4", "--out", "r.json"]).status.success());
    write(t.path(), "p.json", r#"{"p":2,"b":2,"sigma":2}"#);
    let out = kornlab(
        t.path(),
        &[
            "scaling", "measure", "--domain", "r.json", "--placement", "r.placement.json", "--params", "p.json",
            "--quantity", "corridor_eps", "--out", "rep.json", "--plot", "plot.csv", "--expect", "holds",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(t.path(), "rep.json");
    assert!((r["fitted_slope"].as_f64().unwrap() - 5.0).abs() < 0.1);
    let plot = std::fs::read_to_string(t.path().join("plot.csv")).unwrap();
    assert!(plot.starts_with("r_i,integral,predicted\n"));
    assert_eq!(plot.lines().count(), 5);
}
