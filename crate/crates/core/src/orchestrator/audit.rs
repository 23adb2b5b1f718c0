use nalgebra::DVector;
use serde::Serialize;

use super::{ExperimentSpec, SimulationTrace};
use crate::geometry::Polytope;
use crate::model::validate_signal;

pub const DEFAULT_AUDIT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub t: usize,
    /// Subsystem or controller index, depending on the property.
    pub index: usize,
    pub amount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<Violation>,
    /// Reported but not part of the overall verdict.
    pub warn_only: bool,
    pub note: Option<String>,
    #[serde(skip)]
    tol: f64,
}

impl PropertyCheck {
    fn new(name: &'static str, tol: f64) -> Self {
        PropertyCheck {
            tol,
            name,
            passed: true,
            checked: 0,
            violations: 0,
            first_violation: None,
            warn_only: false,
            note: None,
        }
    }

    fn observe(&mut self, t: usize, index: usize, amount: f64) {
        self.checked += 1;
        if amount > self.tol {
            self.passed = false;
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(Violation { t, index, amount });
            }
        }
    }

    fn member(&mut self, t: usize, index: usize, set: &Polytope, v: &DVector<f64>) {
        self.observe(t, index, set.violation(v).max(0.0));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub checks: Vec<PropertyCheck>,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Checks the properties the closed loop is supposed to guarantee, step by
/// step, and reports the first violation of each.
pub fn audit_trace(trace: &SimulationTrace, spec: &ExperimentSpec) -> AuditReport {
    audit_trace_with(trace, spec, DEFAULT_AUDIT_TOL)
}

/// [`audit_trace`] with an explicit membership tolerance.
pub fn audit_trace_with(trace: &SimulationTrace, spec: &ExperimentSpec, tol: f64) -> AuditReport {
    let sets = &trace.sets;
    let mut state = PropertyCheck::new("state_constraints", tol);
    let mut input = PropertyCheck::new("input_constraints", tol);
    let mut tube = PropertyCheck::new("tube_membership", tol);
    let mut fidelity = PropertyCheck::new("reference_fidelity", tol);
    let mut terminal = PropertyCheck::new("terminal_membership", tol);
    let mut feasible = PropertyCheck::new("ocp_feasibility", tol);
    let mut dwell = PropertyCheck::new("dwell_time", tol);
    let mut initial = PropertyCheck::new("initial_condition", tol);
    initial.warn_only = true;

    for (t, snapshot) in trace.states.iter().enumerate() {
        for (i, x) in snapshot.iter().enumerate() {
            state.member(t, i, &sets.state_sets[i], x);
        }
    }
    for step in &trace.steps {
        let t = step.t;
        for (i, s) in step.subsystems.iter().enumerate() {
            input.member(t, i, &sets.input_sets[i], &vec(&s.u));
            if let Some((xr, ur)) = &s.reference {
                fidelity.member(t, i, &sets.e[i], &(vec(&s.x) - vec(xr)));
                fidelity.member(t, i, &sets.eu[i], &(vec(&s.u) - vec(ur)));
            }
        }
        for (c, (cs, ctrl)) in step.controllers.iter().zip(&sets.controllers).enumerate() {
            feasible.observe(t, c, if cs.feasible { 0.0 } else { f64::INFINITY });
            let Some(nominal) = &cs.nominal else {
                continue;
            };
            let x: Vec<f64> = ctrl.members.iter().flat_map(|&i| step.subsystems[i].x.iter().copied()).collect();
            tube.member(t, c, &ctrl.z[cs.design_mode], &(vec(&x) - vec(&nominal[0])));
            for xk in nominal.iter().skip(cs.terminal_from) {
                terminal.member(t, c, &ctrl.terminal[cs.design_mode], &vec(xk));
            }
        }
    }

    if let (Some(f), true) = (&trace.first_failure, feasible.passed) {
        feasible.checked += 1;
        feasible.passed = false;
        feasible.violations += 1;
        feasible.first_violation = Some(Violation {
            t: f.t,
            index: f.controller,
            amount: f64::INFINITY,
        });
    }
    if let Some(f) = &trace.first_failure {
        feasible.note = Some(f.cause.clone());
    }

    let modes: Vec<usize> = trace.steps.iter().map(|s| s.mode).collect();
    dwell.checked = modes.len();
    if let Err(v) = validate_signal(&modes, &spec.signal.graph) {
        dwell.passed = false;
        dwell.violations = 1;
        dwell.first_violation = Some(Violation {
            t: v.index(),
            index: 0,
            amount: 1.0,
        });
        dwell.note = Some(v.to_string());
    }

    for (c, ok) in trace.initial_condition.iter().enumerate() {
        initial.checked += 1;
        if *ok != Some(true) {
            initial.passed = false;
            initial.violations += 1;
            if initial.first_violation.is_none() {
                initial.first_violation = Some(Violation {
                    t: 0,
                    index: c,
                    amount: 1.0,
                });
            }
            if ok.is_none() {
                initial.note = Some("family could not be computed".into());
            }
        }
    }

    let checks = vec![state, input, tube, fidelity, terminal, feasible, dwell, initial];
    AuditReport {
        passed: checks.iter().all(|c| c.passed || c.warn_only),
        checks,
    }
}
