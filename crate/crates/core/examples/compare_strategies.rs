//! Sum of square errors of the three strategies on the bundled examples.

use std::error::Error;

use dswmpc::config::load_config;
use dswmpc::orchestrator::{run, sse_report, Strategy};

fn main() -> Result<(), Box<dyn Error>> {
    println!("{:<10} {:>10} {:>10} {:>10}", "", "cswmpc", "deswmpc", "dswmpc");
    for n in 1..=3 {
        let path = format!("{}/configs/example{n}.toml", env!("CARGO_MANIFEST_DIR"));
        let spec = load_config(path)?.to_spec()?;
        let cells: Vec<String> = Strategy::ALL
            .iter()
            .map(|&s| match run(&spec, s) {
                Ok(t) if t.feasible() => format!("{:.4}", sse_report(&t).total),
                _ => "-".to_string(),
            })
            .collect();
        println!("example {n:<2} {:>10} {:>10} {:>10}", cells[0], cells[1], cells[2]);
    }
    Ok(())
}
