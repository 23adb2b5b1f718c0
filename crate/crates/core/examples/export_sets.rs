//! Writes the tube, tightened and terminal sets of one subsystem in the
//! text format and as closed vertex loops.

use std::error::Error;

use dswmpc::config::load_config;
use dswmpc::geometry::export;
use dswmpc::orchestrator::{prepare, Strategy};

fn main() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example1.toml");
    let spec = load_config(path)?.to_spec()?;
    let prepared = prepare(&spec, Strategy::Dswmpc)?;
    let bundle = prepared.controllers[1].design.bundle(1);
    for (name, set) in [("Z", &bundle.sets.z), ("Xhat", &bundle.sets.xhat), ("T", &bundle.terminal)] {
        println!("# subsystem 2, mode 2, {name}");
        print!("{}", export::to_text(set));
        print!("{}", export::vertex_loop_csv(set)?);
    }
    Ok(())
}
