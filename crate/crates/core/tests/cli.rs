use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dswmpc::geometry::export;
use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"))
}

fn dswmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dswmpc"))
        .args(args)
        .env_remove("DSWMPC_TOLERANCE_PROFILE")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Example 1 with one edit applied to its text.
fn edited_example1(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(config("example1")).unwrap();
    assert!(text.contains(from), "{from}");
    let path = dir.join("edited.toml");
    fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path
}

#[test]
fn run_writes_a_trace_with_the_documented_columns() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let res = dswmpc(&["run", s(&config("example1")), "--strategy", "dswmpc", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let mut reader = csv::Reader::from_path(out.join("trace.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let expected = [
        "t", "subsystem", "mode", "delta", "x[1]", "x[2]", "u[1]", "xhat[1]", "xhat[2]", "feasible", "cost", "solve_ms",
    ];
    assert_eq!(header, expected);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    // 15 steps of 4 subsystems plus the final state
    assert_eq!(rows.len(), 16 * 4);
    assert_eq!(rows[0].iter().take(4).collect::<Vec<_>>(), ["0", "1", "1", "3"]);
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), -0.55);
    assert_eq!(rows[63].iter().take(2).collect::<Vec<_>>(), ["15", "4"]);

    let audit = json(&out.join("audit.json"));
    assert_eq!(audit["report"]["passed"], true);
    let sse = json(&out.join("sse.json"));
    assert!(sse["total"].as_f64().unwrap() > 0.0);
    assert_eq!(sse["per_subsystem"].as_array().unwrap().len(), 4);
    let status = json(&out.join("status.json"));
    assert_eq!(status["exit_code"], 0);
    assert_eq!(status["status"], "ok");
}

#[test]
fn refusal_and_infeasibility_have_their_own_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("refused");
    let res = dswmpc(&["run", s(&config("example2")), "--strategy", "cswmpc", "--out", s(&out)]);
    assert_eq!(code(&res), 4);
    assert_eq!(json(&out.join("status.json"))["cause"], "modes not enumerable");

    let out = dir.path().join("infeasible");
    let res = dswmpc(&["run", s(&config("example3")), "--strategy", "deswmpc", "--out", s(&out)]);
    assert_eq!(code(&res), 5);
    let status = json(&out.join("status.json"));
    assert_eq!(status["cause"], "runtime infeasibility");
    assert_eq!(status["details"]["t"], 0);
    assert!(out.join("trace.csv").exists());
}

#[test]
fn oversized_tube_reports_an_empty_tightened_state_set() {
    let dir = TempDir::new().unwrap();
    let cfg = edited_example1(dir.path(), "tube_state = 0.1", "tube_state = 10.0");
    let out = dir.path().join("sets");
    let res = dswmpc(&["sets", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 3);
    let status = json(&out.join("status.json"));
    assert_eq!(status["details"]["empty_set"], "Xhat");
    assert_eq!(status["details"]["subsystem"], 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("Xhat is empty"));

    let res = dswmpc(&["run", s(&cfg), "--strategy", "dswmpc", "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&res), 3);
}

#[test]
fn sets_exports_every_family_with_passing_certificates() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sets");
    let res = dswmpc(&["sets", s(&config("example1")), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for i in 1..=4 {
        for m in 1..=3 {
            for set in ["W", "Z", "Xhat", "Uhat", "T", "C"] {
                let path = out.join(format!("sub{i}_mode{m}_{set}.txt"));
                let p = export::from_text(&fs::read_to_string(&path).unwrap()).unwrap();
                assert_eq!(p.dim(), if set == "Uhat" { 1 } else { 2 }, "{path:?}");
            }
            assert!(out.join(format!("sub{i}_mode{m}_Z.vertices.csv")).exists());
        }
    }
    let certs = json(&out.join("certificates.json"));
    assert_eq!(certs["passed"], true);
    assert_eq!(certs["controllers"].as_array().unwrap().len(), 4);
}

#[test]
fn decoupled_network_has_a_point_tube() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(config("example1")).unwrap();
    let mut decoupled = String::new();
    let mut skip = false;
    for line in text.lines() {
        if line.starts_with("[[subsystem.coupling]]") {
            skip = true;
            continue;
        }
        if skip && (line.starts_with("neighbor") || line.starts_with("a =")) {
            continue;
        }
        skip = false;
        if line.starts_with("neighbors =") {
            decoupled.push_str("neighbors = [[], [], [], []]\n");
        } else {
            decoupled.push_str(line);
            decoupled.push('\n');
        }
    }
    let cfg = dir.path().join("decoupled.toml");
    fs::write(&cfg, decoupled).unwrap();
    let out = dir.path().join("sets");
    let res = dswmpc(&["sets", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let z = export::from_text(&fs::read_to_string(out.join("sub2_mode1_Z.txt")).unwrap()).unwrap();
    let (lo, hi) = z.bounding_box().unwrap();
    assert!(lo.amax() <= 1e-12 && hi.amax() <= 1e-12);
}

#[test]
fn compare_renders_dashes_for_refused_and_failed_runs() {
    let dir = TempDir::new().unwrap();
    let expected = [("example1", ["num", "num", "num"]), ("example2", ["-", "num", "num"]), ("example3", ["-", "-", "num"])];
    for (name, cells) in expected {
        let out = dir.path().join(name);
        let res = dswmpc(&["compare", s(&config(name)), "--strategies", "cswmpc,deswmpc,dswmpc", "--out", s(&out)]);
        assert_eq!(code(&res), 0);
        let mut reader = csv::Reader::from_path(out.join("compare.csv")).unwrap();
        let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3);
        for (row, cell) in rows.iter().zip(cells) {
            if cell == "-" {
                assert_eq!(&row[1], "-", "{name} {}", &row[0]);
            } else {
                assert!(row[1].parse::<f64>().is_ok(), "{name} {}", &row[0]);
            }
        }
        let table = json(&out.join("compare.json"));
        assert_eq!(table["rows"][2]["feasible"], true);
    }
}

#[test]
fn validate_reports_dwell_and_shape_errors() {
    let dir = TempDir::new().unwrap();
    let res = dswmpc(&["validate", s(&config("example1"))]);
    assert_eq!(code(&res), 0);
    assert!(String::from_utf8_lossy(&res.stdout).contains("4 subsystem(s), 3 mode(s), horizon 5"));

    let cfg = edited_example1(dir.path(), "dwell = 3", "dwell = 0");
    let res = dswmpc(&["validate", s(&cfg)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("signal.dwell"));

    let cfg = edited_example1(
        dir.path(),
        "neighbor = 2\na = [[0.08, 0.0], [0.0, 0.08]]",
        "neighbor = 2\na = [[0.08, 0.0, 0.0], [0.0, 0.08, 0.0]]",
    );
    let res = dswmpc(&["validate", s(&cfg)]);
    assert_eq!(code(&res), 2);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("subsystems 1 and 2"), "{err}");

    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "[run]\nt_sim = [\n").unwrap();
    let res = dswmpc(&["validate", s(&broken)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line"));
}

#[test]
fn canonical_dump_validates_again() {
    let dir = TempDir::new().unwrap();
    let res = dswmpc(&["validate", s(&config("example2")), "--dump"]);
    assert_eq!(code(&res), 0);
    let dumped = dir.path().join("dumped.toml");
    fs::write(&dumped, &res.stdout).unwrap();
    let again = dswmpc(&["validate", s(&dumped), "--dump"]);
    assert_eq!(code(&again), 0);
    assert_eq!(res.stdout, again.stdout);
}

#[test]
fn tolerance_profile_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("strict");
    let res = Command::new(env!("CARGO_BIN_EXE_dswmpc"))
        .args(["run", s(&config("example1")), "--strategy", "dswmpc", "--out", s(&out)])
        .env("DSWMPC_TOLERANCE_PROFILE", "strict")
        .output()
        .unwrap();
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let audit = json(&out.join("audit.json"));
    assert_eq!(audit["tolerance_profile"], "strict");
    assert_eq!(audit["tolerance"], 1e-8);

    let res = Command::new(env!("CARGO_BIN_EXE_dswmpc"))
        .args(["validate", s(&config("example1"))])
        .env("DSWMPC_TOLERANCE_PROFILE", "sloppy")
        .output()
        .unwrap();
    assert_eq!(code(&res), 2);
}
