use dswmpc::config::{load_config, parse_config};
use dswmpc::orchestrator::{
    audit_trace, run, sse_from_states, sse_report, ExperimentSpec, SimulationTrace, Strategy,
    REFUSAL_MODES_NOT_ENUMERABLE,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn example(n: usize) -> ExperimentSpec {
    let path = format!("{}/configs/example{n}.toml", env!("CARGO_MANIFEST_DIR"));
    load_config(path).unwrap().to_spec().unwrap()
}

const DECOUPLED: &str = r#"
[run]
t_sim = 10
[controller]
horizon = 5
tube_state = 0.1
tube_input = 0.05
[signal]
dwell = 2
graph = "cycle"
schedule = [[0, 1], [4, 2]]
visibility = "times_and_modes_known"
[[subsystem]]
a = [[1.0, 1.0], [0.0, 1.0]]
b = [[0.5], [1.0]]
x_min = [-1.2, -1.2]
x_max = [1.0, 1.0]
u_min = [-0.5]
u_max = [0.5]
x0 = [-0.55, 0.9]
[[subsystem]]
a = [[1.2, 0.51], [0.1, 1.0]]
b = [[0.5], [1.0]]
x_min = [-1.3, -1.3]
x_max = [1.3, 1.3]
u_min = [-1.1]
u_max = [1.1]
x0 = [-0.8, -0.6]
[[topology]]
neighbors = [[], []]
[[topology]]
neighbors = [[], []]
"#;

#[test]
fn zero_state_stays_at_zero() {
    let mut spec = example(1);
    for x in &mut spec.initial_states {
        x.fill(0.0);
    }
    for s in Strategy::ALL {
        let trace = run(&spec, s).unwrap();
        assert!(trace.feasible(), "{s}");
        for snapshot in &trace.states {
            for x in snapshot {
                assert!(x.amax() <= 1e-9, "{s}: {x}");
            }
        }
        assert!(sse_report(&trace).total <= 1e-12);
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    for n in [1, 2] {
        let spec = example(n);
        let a = run(&spec, Strategy::Dswmpc).unwrap();
        let b = run(&spec, Strategy::Dswmpc).unwrap();
        assert!(a.same_as(&b));
        assert_eq!(a.max_deviation(&b), 0.0);
    }
}

#[test]
fn decoupled_network_makes_distributed_and_decentralized_agree() {
    let spec = parse_config(DECOUPLED).unwrap().to_spec().unwrap();
    let d = run(&spec, Strategy::Dswmpc).unwrap();
    let e = run(&spec, Strategy::Deswmpc).unwrap();
    assert!(d.feasible() && e.feasible());
    assert!(d.same_as(&e), "deviation {}", d.max_deviation(&e));
    assert!(audit_trace(&d, &spec).passed);
}

#[test]
fn centralized_refuses_unknown_modes() {
    for n in [2, 3] {
        let err = run(&example(n), Strategy::Cswmpc).unwrap_err();
        assert!(err.to_string().contains(REFUSAL_MODES_NOT_ENUMERABLE), "{err}");
    }
}

#[test]
fn decentralized_example3_is_recorded_as_infeasible() {
    let spec = example(3);
    let trace = run(&spec, Strategy::Deswmpc).unwrap();
    let failure = trace.first_failure.as_ref().expect("failure flag");
    assert_eq!(failure.t, 0);
    assert!(failure.cause.starts_with("no feasible control action"), "{}", failure.cause);
    assert!(!trace.is_complete());
    let audit = audit_trace(&trace, &spec);
    assert!(!audit.check("ocp_feasibility").unwrap().passed);
}

#[test]
fn every_feasible_example_trace_passes_its_audit() {
    for n in 1..=3 {
        let spec = example(n);
        for s in Strategy::ALL {
            let Ok(trace) = run(&spec, s) else { continue };
            if trace.feasible() {
                let audit = audit_trace(&trace, &spec);
                assert!(audit.passed, "example {n}, {s}: {audit:?}");
            }
        }
    }
}

fn example1_trace() -> (ExperimentSpec, SimulationTrace) {
    let spec = example(1);
    let trace = run(&spec, Strategy::Dswmpc).unwrap();
    (spec, trace)
}

#[test]
fn audit_flags_an_input_above_its_bound() {
    let (spec, mut trace) = example1_trace();
    trace.steps[4].subsystems[0].u = vec![0.6];
    let audit = audit_trace(&trace, &spec);
    let check = audit.check("input_constraints").unwrap();
    assert!(!check.passed && !audit.passed);
    let v = check.first_violation.as_ref().unwrap();
    assert_eq!((v.t, v.index), (4, 0));
    assert!((v.amount - 0.1).abs() < 1e-9);
}

#[test]
fn audit_flags_a_dwell_violation() {
    let (spec, mut trace) = example1_trace();
    // leave mode 2 after two steps instead of three
    for step in &mut trace.steps[7..10] {
        step.mode = 2;
    }
    let audit = audit_trace(&trace, &spec);
    let check = audit.check("dwell_time").unwrap();
    assert!(!check.passed);
    assert_eq!(check.first_violation.as_ref().unwrap().t, 7);
}

#[test]
fn audit_flags_a_state_outside_the_tube() {
    let (spec, mut trace) = example1_trace();
    trace.steps[2].subsystems[1].x[0] += 0.5;
    let audit = audit_trace(&trace, &spec);
    assert!(!audit.check("tube_membership").unwrap().passed);
}

#[test]
fn square_errors_include_the_initial_sample() {
    let states = vec![vec![DVector::from_vec(vec![-0.55, 0.9])]];
    let sse = sse_from_states(&states);
    assert!((sse.per_state[0][0] - 0.3025).abs() < 1e-15);
    assert!((sse.per_state[0][1] - 0.81).abs() < 1e-15);
    assert!((sse.total - 1.1125).abs() < 1e-15);
    let zero = sse_from_states(&vec![vec![DVector::zeros(2); 3]; 4]);
    assert_eq!(zero.total, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn scaled_initial_states_stay_feasible_and_audited(scale in 0.0f64..1.0) {
        let mut spec = example(1);
        for x in &mut spec.initial_states {
            *x *= scale;
        }
        let trace = run(&spec, Strategy::Dswmpc).unwrap();
        prop_assert!(trace.feasible());
        prop_assert!(audit_trace(&trace, &spec).passed);
    }
}
