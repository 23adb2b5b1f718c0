//! Switch-robust control invariant family for two scalar modes,
//! `x+ = x + u` and `x+ = 2x + u`, with `|x| <= 1`, `|u| <= 0.5`.

use dswmpc::geometry::Polytope;
use dswmpc::invariants::{certify_switch_rci, switch_rci, InvariantError, ModeDynamics, SwitchGraph, SwitchRciOptions};
use nalgebra::DMatrix;

fn scalar(a: f64) -> Result<ModeDynamics, InvariantError> {
    ModeDynamics::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, 1.0),
        Polytope::bounds(&[-1.0], &[1.0])?,
        Polytope::bounds(&[-0.5], &[0.5])?,
    )
}

fn main() -> Result<(), InvariantError> {
    let modes = vec![scalar(1.0)?, scalar(2.0)?];
    for dwell in [1, 3] {
        let graph = SwitchGraph::complete(2, dwell)?;
        let seeds: Vec<Polytope> = modes.iter().map(|d| d.state_set.clone()).collect();
        let opts = SwitchRciOptions {
            keep_history: true,
            ..Default::default()
        };
        let family = switch_rci(&modes, &graph, &seeds, opts)?;
        println!("dwell {dwell}: converged {} after {} iterations", family.converged, family.iterations);
        for (i, set) in family.sets.iter().enumerate() {
            let (lo, hi) = set.bounding_box()?;
            println!("  C{} = [{:.4}, {:.4}]", i + 1, lo[0], hi[0]);
        }
        let cert = certify_switch_rci(&family.sets, &modes, &graph, 1e-6)?;
        println!("  certificate passed: {}", cert.passed());
    }
    Ok(())
}
