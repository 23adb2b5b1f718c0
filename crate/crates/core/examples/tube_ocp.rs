//! Designs the local controllers of example 1 and solves one tube OCP for
//! subsystem 1 from its initial state, without references.

use std::collections::BTreeMap;
use std::error::Error;

use dswmpc::config::load_config;
use dswmpc::controller::{control_input, solve_local_ocp};
use dswmpc::orchestrator::{prepare, Strategy};

fn main() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example1.toml");
    let spec = load_config(path)?.to_spec()?;
    let prepared = prepare(&spec, Strategy::Dswmpc)?;
    let design = &prepared.controllers[0].design;
    let bundle = design.bundle(0);
    println!("K = {}", bundle.k);

    let x0 = &spec.initial_states[0];
    let sol = solve_local_ocp(design, x0, None, &BTreeMap::new(), 0, 3)?;
    println!("cost {:.6} after {} QP iterations", sol.cost, sol.qp_iterations);
    for (k, (x, u)) in sol.states.iter().zip(&sol.inputs).enumerate() {
        println!("  k={k}: x̂ = ({:+.4}, {:+.4}), û = {:+.4}", x[0], x[1], u[0]);
    }
    let u = control_input(x0, &sol, &bundle.k);
    println!("applied u = {:+.6}", u[0]);
    Ok(())
}
