//! Random admissible switching signals and the remaining dwell-time counter.

use dswmpc::invariants::{InvariantError, SwitchGraph};
use dswmpc::model::{remaining_dwell_update, validate_signal, DwellState, SwitchingSignal};

fn main() -> Result<(), InvariantError> {
    let graph = SwitchGraph::new(vec![3, 2, 4], [(0, 1), (1, 2), (2, 0), (1, 0)])?;
    let changes = SwitchingSignal::random_schedule(&graph, 0, 30, 0.5, 7);
    println!("switches (t, mode): {:?}", changes.iter().map(|&(t, m)| (t, m + 1)).collect::<Vec<_>>());

    let mut seq = vec![];
    for t in 0..30 {
        let mode = changes.iter().rev().find(|&&(s, _)| s <= t).map_or(0, |&(_, m)| m);
        seq.push(mode);
    }
    println!("admissible: {}", validate_signal(&seq, &graph).is_ok());

    let mut state = DwellState::entering(seq[0], &graph);
    let mut line = vec![format!("{}", state.delta)];
    for &mode in &seq[1..] {
        state = remaining_dwell_update(state, mode, graph.dwell_times());
        line.push(format!("{}", state.delta));
    }
    println!("remaining dwell: {}", line.join(" "));

    // switching out of mode 1 after one step breaks its dwell time
    let mut bad = seq.clone();
    bad[1] = 1;
    if let Err(v) = validate_signal(&bad, &graph) {
        println!("mutated signal rejected: {v}");
    }
    Ok(())
}
