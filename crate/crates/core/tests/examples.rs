//! Runs every example binary; `cargo test` builds them next to the tests.

use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: [(&str, &str); 9] = [
    ("set_algebra", "difference: (0.750, -0.750)"),
    ("mrpi", "Z = [-2.0000, 2.0000]"),
    ("switch_rci", "certificate passed: true"),
    ("qp", "x = (0.666667, 1.333333)"),
    ("tube_ocp", "applied u"),
    ("run_example", "sum of square errors"),
    ("compare_strategies", "example 3"),
    ("dwell_signal", "admissible: true"),
    ("export_sets", "x,y"),
];

fn examples_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples")
}

#[test]
fn examples_run_and_print_their_results() {
    for (name, expected) in EXAMPLES {
        let path = examples_dir().join(name);
        let out = Command::new(&path).output().unwrap_or_else(|e| panic!("{path:?}: {e}"));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout.contains(expected), "{name} printed:\n{stdout}");
    }
}

#[test]
fn every_example_is_exercised() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/examples");
    let mut found: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok()?.path().file_stem()?.to_str().map(String::from))
        .collect();
    found.sort();
    let mut listed: Vec<String> = EXAMPLES.iter().map(|(n, _)| n.to_string()).collect();
    listed.sort();
    assert_eq!(found, listed);
}
