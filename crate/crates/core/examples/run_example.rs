//! Closed-loop run of a bundled configuration with the distributed
//! controller; prints the state norms and the audit.
//!
//! `cargo run --example run_example -- [1|2|3]`

use std::error::Error;

use dswmpc::config::load_config;
use dswmpc::orchestrator::{audit_trace, run, sse_report, Strategy};

fn main() -> Result<(), Box<dyn Error>> {
    let n: usize = std::env::args().nth(1).map_or(Ok(1), |a| a.parse())?;
    let path = format!("{}/configs/example{n}.toml", env!("CARGO_MANIFEST_DIR"));
    let spec = load_config(path)?.to_spec()?;
    let trace = run(&spec, Strategy::Dswmpc)?;
    for (t, snapshot) in trace.states.iter().enumerate() {
        let norms: Vec<String> = snapshot.iter().map(|x| format!("{:.4}", x.amax())).collect();
        let mode = trace.steps.get(t).map_or(String::from("-"), |s| (s.mode + 1).to_string());
        println!("t={t:>2} mode {mode} |x_i| = [{}]", norms.join(", "));
    }
    let audit = audit_trace(&trace, &spec);
    for check in &audit.checks {
        println!("{:<20} {}", check.name, if check.passed { "ok" } else { "FAILED" });
    }
    println!("sum of square errors {:.4}", sse_report(&trace).total);
    Ok(())
}
