//! Closed-loop experiments: distributed, centralized and decentralized
//! switched tube MPC on a coupled network, with square-error reports and
//! trace audits.

mod audit;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{
    self, control_input, shift_reference, solve_local_ocp, DesignError, DesignOptions, DesignRequest, LocalDesign,
    LocalTuning, ModeInput, OcpError, PredecessorKind, ReferenceTrajectory,
};
use crate::geometry::Polytope;
use crate::invariants::SwitchGraph;
use crate::linalg;
use crate::model::{
    remaining_dwell_update, DwellState, ModeTopology, ModelError, NetworkModel, SwitchingSignal, Visibility,
};
use crate::qp;

pub use audit::{audit_trace, audit_trace_with, AuditReport, PropertyCheck, Violation, DEFAULT_AUDIT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Dswmpc,
    Cswmpc,
    Deswmpc,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Cswmpc, Strategy::Deswmpc, Strategy::Dswmpc];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dswmpc => "dswmpc",
            Strategy::Cswmpc => "cswmpc",
            Strategy::Deswmpc => "deswmpc",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dswmpc" => Ok(Strategy::Dswmpc),
            "cswmpc" => Ok(Strategy::Cswmpc),
            "deswmpc" => Ok(Strategy::Deswmpc),
            other => Err(format!("unknown strategy '{other}' (expected dswmpc, cswmpc or deswmpc)")),
        }
    }
}

/// One closed-loop experiment.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub network: NetworkModel,
    pub signal: SwitchingSignal,
    pub t_sim: usize,
    pub initial_states: Vec<DVector<f64>>,
    /// Per subsystem.
    pub tuning: Vec<LocalTuning>,
    pub options: DesignOptions,
}

#[derive(Debug, Error, Clone)]
pub enum RunError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("design failed: {0}")]
    Design(#[from] DesignError),
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const REFUSAL_MODES_NOT_ENUMERABLE: &str = "modes not enumerable";

impl ExperimentSpec {
    pub fn check(&self) -> Result<(), RunError> {
        let m = self.network.len();
        if self.initial_states.len() != m || self.tuning.len() != m {
            return Err(RunError::Spec(format!(
                "{m} subsystems, {} initial states, {} tunings",
                self.initial_states.len(),
                self.tuning.len()
            )));
        }
        for (i, (x0, s)) in self.initial_states.iter().zip(self.network.subsystems()).enumerate() {
            if x0.len() != s.n_x() {
                return Err(RunError::Spec(format!("initial state of subsystem {i} has the wrong length")));
            }
        }
        for topo in &self.signal.topologies {
            topo.check(&self.network)?;
        }
        if self.options.horizon == 0 {
            return Err(RunError::Spec("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Neighbours a local design must be robust against, per design mode,
    /// together with the design graph and the global-to-design mode map.
    fn local_mode_structure(&self, i: usize) -> (Vec<BTreeSet<usize>>, SwitchGraph, Vec<usize>) {
        let sig = &self.signal;
        let modes = sig.topologies.len();
        let single = |set: BTreeSet<usize>| {
            let graph = SwitchGraph::new(vec![sig.graph.max_dwell()], []).expect("single mode graph");
            (vec![set], graph, vec![0; modes])
        };
        match sig.visibility {
            Visibility::TimesAndModesKnown => (
                sig.topologies.iter().map(|t| t.neighbors[i].clone()).collect(),
                sig.graph.clone(),
                (0..modes).collect(),
            ),
            Visibility::ModesRestricted => {
                let set = sig
                    .allowable
                    .as_ref()
                    .map(|a| a[i].clone())
                    .unwrap_or_else(|| self.network.subsystem(i).couplings.keys().copied().collect());
                single(set)
            }
            Visibility::FullyUnknown => single(self.network.subsystem(i).couplings.keys().copied().collect()),
        }
    }
}

/// A controller and the subsystems whose state it owns.
#[derive(Clone, Debug)]
pub struct ControllerSlot {
    pub design: LocalDesign,
    pub members: Vec<usize>,
    /// Takes part in reference exchange.
    pub exchange: bool,
}

/// Offline designs for one strategy.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub strategy: Strategy,
    pub controllers: Vec<ControllerSlot>,
}

pub fn prepare(spec: &ExperimentSpec, strategy: Strategy) -> Result<Prepared, RunError> {
    spec.check()?;
    let controllers = match strategy {
        Strategy::Dswmpc | Strategy::Deswmpc => design_local(spec, strategy)?,
        Strategy::Cswmpc => vec![design_centralized(spec)?],
    };
    Ok(Prepared { strategy, controllers })
}

fn design_local(spec: &ExperimentSpec, strategy: Strategy) -> Result<Vec<ControllerSlot>, RunError> {
    let net = &spec.network;
    let exchange = strategy == Strategy::Dswmpc;
    let (bound_x, bound_u): (Vec<Polytope>, Vec<Polytope>) = if exchange {
        spec.tuning.iter().map(|t| (t.e.clone(), t.eu.clone())).unzip()
    } else {
        net.subsystems().iter().map(|s| (s.state_set.clone(), s.input_set.clone())).unzip()
    };
    (0..net.len())
        .into_par_iter()
        .map(|i| {
            let sub = net.subsystem(i);
            let (neighbours, graph, mode_map) = spec.local_mode_structure(i);
            let modes = neighbours
                .iter()
                .map(|set| {
                    Ok(ModeInput {
                        a: sub.a.clone(),
                        b: sub.b.clone(),
                        w: net.interaction_disturbance_set(i, set, &bound_x, &bound_u)?,
                    })
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let design = controller::design_controller(
                DesignRequest {
                    index: i,
                    modes,
                    state_set: sub.state_set.clone(),
                    input_set: sub.input_set.clone(),
                    tuning: spec.tuning[i].clone(),
                    graph,
                    mode_map,
                    couplings: sub.couplings.clone(),
                    uses_references: exchange && net.is_anyones_neighbour(i),
                    predecessor: PredecessorKind::Controlled,
                },
                &spec.options,
            )?;
            Ok(ControllerSlot {
                design,
                members: vec![i],
                exchange,
            })
        })
        .collect()
}

/// Stacked system matrices of one topology.
pub fn stacked_dynamics(net: &NetworkModel, neighbors: &[BTreeSet<usize>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx: Vec<usize> = net.subsystems().iter().map(|s| s.n_x()).collect();
    let nu: Vec<usize> = net.subsystems().iter().map(|s| s.n_u()).collect();
    let off = |dims: &[usize], i: usize| dims[..i].iter().sum::<usize>();
    let mut a = DMatrix::zeros(nx.iter().sum(), nx.iter().sum());
    let mut b = DMatrix::zeros(nx.iter().sum(), nu.iter().sum());
    for (i, s) in net.subsystems().iter().enumerate() {
        a.view_mut((off(&nx, i), off(&nx, i)), (nx[i], nx[i])).copy_from(&s.a);
        b.view_mut((off(&nx, i), off(&nu, i)), (nx[i], nu[i])).copy_from(&s.b);
        for &j in &neighbors[i] {
            let c = &s.couplings[&j];
            a.view_mut((off(&nx, i), off(&nx, j)), (nx[i], nx[j])).copy_from(&c.a);
            b.view_mut((off(&nx, i), off(&nu, j)), (nx[i], nu[j])).copy_from(&c.b);
        }
    }
    (a, b)
}

fn product(sets: impl Iterator<Item = Polytope>) -> Polytope {
    sets.reduce(|acc, s| acc.cartesian_product(&s)).expect("at least one subsystem")
}

fn design_centralized(spec: &ExperimentSpec) -> Result<ControllerSlot, RunError> {
    if spec.signal.visibility != Visibility::TimesAndModesKnown {
        return Err(RunError::Refused(REFUSAL_MODES_NOT_ENUMERABLE.into()));
    }
    let net = &spec.network;
    let state_set = product(net.subsystems().iter().map(|s| s.state_set.clone()));
    let input_set = product(net.subsystems().iter().map(|s| s.input_set.clone()));
    let n = state_set.dim();
    let modes = spec
        .signal
        .topologies
        .iter()
        .map(|t| {
            let (a, b) = stacked_dynamics(net, &t.neighbors);
            ModeInput {
                a,
                b,
                w: Polytope::origin(n),
            }
        })
        .collect();
    let blocks = |f: &dyn Fn(&LocalTuning) -> DMatrix<f64>| linalg::block_diag(&spec.tuning.iter().map(f).collect::<Vec<_>>());
    let tuning = LocalTuning {
        q: blocks(&|t| t.q.clone()),
        r: blocks(&|t| t.r.clone()),
        e: product(spec.tuning.iter().map(|t| t.e.clone())),
        eu: product(spec.tuning.iter().map(|t| t.eu.clone())),
    };
    let design = controller::design_controller(
        DesignRequest {
            index: 0,
            modes,
            state_set,
            input_set,
            tuning,
            graph: spec.signal.graph.clone(),
            mode_map: (0..spec.signal.topologies.len()).collect(),
            couplings: BTreeMap::new(),
            uses_references: false,
            predecessor: PredecessorKind::ClosedLoop,
        },
        &spec.options,
    )?;
    Ok(ControllerSlot {
        design,
        members: (0..net.len()).collect(),
        exchange: false,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsystemStep {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Nominal initial state of the owning controller, restricted to this
    /// subsystem.
    pub xhat: Option<Vec<f64>>,
    pub feasible: bool,
    pub cost: f64,
    pub solve_ms: f64,
    /// Broadcast reference `(x̃(t), ũ(t))` the subsystem was held to; `None`
    /// when no neighbour relies on it.
    pub reference: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControllerStep {
    pub design_mode: usize,
    /// First nominal step required to lie in the terminal set.
    pub terminal_from: usize,
    /// Optimal nominal states `x̂(0..=N | t)`.
    pub nominal: Option<Vec<Vec<f64>>>,
    pub feasible: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub mode: usize,
    pub delta: usize,
    pub subsystems: Vec<SubsystemStep>,
    pub controllers: Vec<ControllerStep>,
}

/// Sets needed to audit a trace.
#[derive(Clone, Debug)]
pub struct ControllerSets {
    pub members: Vec<usize>,
    pub mode_map: Vec<usize>,
    pub z: Vec<Polytope>,
    pub terminal: Vec<Polytope>,
}

#[derive(Clone, Debug)]
pub struct TraceSets {
    pub state_sets: Vec<Polytope>,
    pub input_sets: Vec<Polytope>,
    pub e: Vec<Polytope>,
    pub eu: Vec<Polytope>,
    pub controllers: Vec<ControllerSets>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RuntimeFailure {
    pub t: usize,
    pub controller: usize,
    pub cause: String,
}

#[derive(Clone, Debug)]
pub struct SimulationTrace {
    pub strategy: Strategy,
    pub t_sim: usize,
    /// `x_i(t)` for `t = 0..=t_sim`.
    pub states: Vec<Vec<DVector<f64>>>,
    pub steps: Vec<StepRecord>,
    pub sets: TraceSets,
    pub first_failure: Option<RuntimeFailure>,
    /// Initial-condition test per controller; `None` when it could not be
    /// evaluated.
    pub initial_condition: Vec<Option<bool>>,
}

impl SimulationTrace {
    /// A run that never got a controller: only the initial state is known.
    pub fn unstarted(spec: &ExperimentSpec, strategy: Strategy, failure: RuntimeFailure) -> Self {
        SimulationTrace {
            strategy,
            t_sim: spec.t_sim,
            states: vec![spec.initial_states.clone()],
            steps: vec![],
            sets: TraceSets {
                state_sets: spec.network.subsystems().iter().map(|s| s.state_set.clone()).collect(),
                input_sets: spec.network.subsystems().iter().map(|s| s.input_set.clone()).collect(),
                e: spec.tuning.iter().map(|t| t.e.clone()).collect(),
                eu: spec.tuning.iter().map(|t| t.eu.clone()).collect(),
                controllers: vec![],
            },
            first_failure: Some(failure),
            initial_condition: vec![],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.states.len() == self.t_sim + 1
    }

    pub fn feasible(&self) -> bool {
        self.first_failure.is_none()
    }

    pub fn inputs(&self, t: usize) -> Vec<DVector<f64>> {
        self.steps[t].subsystems.iter().map(|s| DVector::from_vec(s.u.clone())).collect()
    }

    /// True when states, inputs, nominal states, flags and costs agree
    /// bit for bit (wall times excluded).
    pub fn same_as(&self, other: &SimulationTrace) -> bool {
        let strip = |t: &SimulationTrace| {
            t.steps
                .iter()
                .map(|s| {
                    let subs: Vec<_> = s
                        .subsystems
                        .iter()
                        .map(|x| (x.x.clone(), x.u.clone(), x.xhat.clone(), x.feasible, x.cost.to_bits(), x.reference.clone()))
                        .collect();
                    (s.t, s.mode, s.delta, subs)
                })
                .collect::<Vec<_>>()
        };
        self.states == other.states && strip(self) == strip(other)
    }

    /// Largest absolute difference of states and inputs between two traces.
    pub fn max_deviation(&self, other: &SimulationTrace) -> f64 {
        let mut d: f64 = 0.0;
        for (a, b) in self.states.iter().flatten().zip(other.states.iter().flatten()) {
            d = d.max((a - b).amax());
        }
        for (a, b) in self.steps.iter().zip(&other.steps) {
            for (p, q) in a.subsystems.iter().zip(&b.subsystems) {
                for (x, y) in p.u.iter().zip(&q.u) {
                    d = d.max((x - y).abs());
                }
            }
        }
        d
    }
}

pub fn run_dswmpc(spec: &ExperimentSpec) -> Result<SimulationTrace, RunError> {
    run(spec, Strategy::Dswmpc)
}

pub fn run_cswmpc(spec: &ExperimentSpec) -> Result<SimulationTrace, RunError> {
    run(spec, Strategy::Cswmpc)
}

pub fn run_deswmpc(spec: &ExperimentSpec) -> Result<SimulationTrace, RunError> {
    run(spec, Strategy::Deswmpc)
}

/// Runs one strategy. The decentralized controller treats an empty
/// tightened set as "no feasible control action": the run is recorded as
/// failed at `t = 0` instead of being rejected at design time.
pub fn run(spec: &ExperimentSpec, strategy: Strategy) -> Result<SimulationTrace, RunError> {
    match prepare(spec, strategy) {
        Ok(prepared) => prepared.simulate(spec),
        Err(RunError::Design(e)) if strategy == Strategy::Deswmpc => Ok(SimulationTrace::unstarted(
            spec,
            strategy,
            RuntimeFailure {
                t: 0,
                controller: design_error_subsystem(&e).unwrap_or(0),
                cause: format!("no feasible control action: {e}"),
            },
        )),
        Err(e) => Err(e),
    }
}

fn design_error_subsystem(e: &DesignError) -> Option<usize> {
    match e {
        DesignError::EmptySet { subsystem, .. }
        | DesignError::TerminalNotConverged { subsystem, .. }
        | DesignError::Invariant { subsystem, .. } => Some(*subsystem),
        _ => None,
    }
}

fn stack(parts: &[DVector<f64>], members: &[usize]) -> DVector<f64> {
    let data: Vec<f64> = members.iter().flat_map(|&i| parts[i].iter().copied()).collect();
    DVector::from_vec(data)
}

fn unstack(v: &DVector<f64>, members: &[usize], dims: &[usize]) -> Vec<(usize, DVector<f64>)> {
    let mut off = 0;
    members
        .iter()
        .map(|&i| {
            let part = v.rows(off, dims[i]).into_owned();
            off += dims[i];
            (i, part)
        })
        .collect()
}

/// Plan of an OCP at time 0 without own-reference constraints, published as
/// the reference for times `0..N`.
fn initial_plan(
    design: &LocalDesign,
    x: &DVector<f64>,
    neighbours: &BTreeMap<usize, &ReferenceTrajectory>,
    mode: usize,
    delta: usize,
) -> Result<ReferenceTrajectory, OcpError> {
    let sol = solve_local_ocp(design, x, None, neighbours, mode, delta)?;
    let horizon = sol.inputs.len();
    Ok(ReferenceTrajectory {
        states: sol.states[..horizon].to_vec(),
        inputs: sol.inputs,
    })
}

const BOOTSTRAP_SWEEPS: usize = 100;
const BOOTSTRAP_TOL: f64 = 1e-12;

fn plan_distance(a: &ReferenceTrajectory, b: &ReferenceTrajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .chain(a.inputs.iter().zip(&b.inputs))
        .map(|(p, q)| (p - q).amax())
        .fold(0.0, f64::max)
}

struct Outcome {
    u: DVector<f64>,
    next_reference: Option<ReferenceTrajectory>,
    nominal: Option<Vec<DVector<f64>>>,
    cost: f64,
    solve_ms: f64,
    error: Option<String>,
}

impl Prepared {
    /// Mutually consistent time-0 references: every exchanging controller
    /// re-plans against its neighbours' latest plans (Jacobi sweeps, starting
    /// from uncoupled plans) until no plan moves.
    fn bootstrap_references(
        &self,
        x: &[DVector<f64>],
        topo: &ModeTopology,
        mode: usize,
        delta: usize,
    ) -> Vec<Option<Result<ReferenceTrajectory, OcpError>>> {
        let sweep = |prev: Option<&[Option<Result<ReferenceTrajectory, OcpError>>]>| {
            self.controllers
                .par_iter()
                .map(|c| {
                    if !c.exchange {
                        return None;
                    }
                    let mut neighbours = BTreeMap::new();
                    if let Some(prev) = prev {
                        for &j in &topo.neighbors[c.members[0]] {
                            if let Some(Some(Ok(r))) = prev.get(j) {
                                neighbours.insert(j, r);
                            }
                        }
                    }
                    Some(initial_plan(&c.design, &stack(x, &c.members), &neighbours, mode, delta))
                })
                .collect::<Vec<_>>()
        };
        let mut plans = sweep(None);
        for _ in 0..BOOTSTRAP_SWEEPS {
            if plans.iter().any(|p| matches!(p, Some(Err(_)))) {
                break;
            }
            let next = sweep(Some(&plans));
            let moved = plans
                .iter()
                .zip(&next)
                .map(|(a, b)| match (a, b) {
                    (Some(Ok(a)), Some(Ok(b))) => plan_distance(a, b),
                    (None, None) => 0.0,
                    _ => f64::INFINITY,
                })
                .fold(0.0, f64::max);
            plans = next;
            if moved <= BOOTSTRAP_TOL {
                break;
            }
        }
        plans
    }

    pub fn trace_sets(&self, spec: &ExperimentSpec) -> TraceSets {
        TraceSets {
            state_sets: spec.network.subsystems().iter().map(|s| s.state_set.clone()).collect(),
            input_sets: spec.network.subsystems().iter().map(|s| s.input_set.clone()).collect(),
            e: spec.tuning.iter().map(|t| t.e.clone()).collect(),
            eu: spec.tuning.iter().map(|t| t.eu.clone()).collect(),
            controllers: self
                .controllers
                .iter()
                .map(|c| ControllerSets {
                    members: c.members.clone(),
                    mode_map: c.design.mode_map.clone(),
                    z: c.design.modes.iter().map(|b| b.sets.z.clone()).collect(),
                    terminal: c.design.modes.iter().map(|b| b.terminal.clone()).collect(),
                })
                .collect(),
        }
    }

    /// Initial-condition test of every controller against its maximal
    /// switch-invariant family.
    pub fn initial_conditions(&self, spec: &ExperimentSpec) -> Vec<Option<bool>> {
        let mode0 = spec.signal.mode_at(0);
        let delta0 = spec.signal.graph.dwell(mode0);
        self.controllers
            .par_iter()
            .map(|c| {
                let family = c.design.maximal_family(spec.options.max_iter).ok()?;
                let x0 = stack(&spec.initial_states, &c.members);
                c.design.initial_condition_ok(&family, &x0, mode0, delta0).ok()
            })
            .collect()
    }

    pub fn simulate(&self, spec: &ExperimentSpec) -> Result<SimulationTrace, RunError> {
        spec.check()?;
        let net = &spec.network;
        let sig = &spec.signal;
        let dims_x: Vec<usize> = net.subsystems().iter().map(|s| s.n_x()).collect();
        let dims_u: Vec<usize> = net.subsystems().iter().map(|s| s.n_u()).collect();
        let mut x = spec.initial_states.clone();
        let mut states = vec![x.clone()];
        let mut steps = Vec::with_capacity(spec.t_sim);
        let mut first_failure: Option<RuntimeFailure> = None;
        let mut fail = |t: usize, c: usize, cause: String| {
            if first_failure.is_none() {
                first_failure = Some(RuntimeFailure { t, controller: c, cause });
            }
        };

        let mode0 = sig.mode_at(0);
        let mut dwell = DwellState::entering(mode0, &sig.graph);
        let mut refs: Vec<Option<ReferenceTrajectory>> = vec![None; self.controllers.len()];
        let boot = self.bootstrap_references(&x, &sig.topologies[mode0], mode0, dwell.delta);
        for (c, b) in boot.into_iter().enumerate() {
            match b {
                Some(Ok(r)) => refs[c] = Some(r),
                Some(Err(e)) => {
                    fail(0, c, format!("reference bootstrap: {e}"));
                    // fall back to the unforced closed loop as the plan
                    let d = &self.controllers[c].design;
                    let bundle = d.bundle(mode0);
                    let mut s = stack(&x, &self.controllers[c].members);
                    let mut r = ReferenceTrajectory { states: vec![], inputs: vec![] };
                    for _ in 0..d.horizon {
                        r.inputs.push(&bundle.k * &s);
                        r.states.push(s.clone());
                        s = &bundle.f * &s;
                    }
                    refs[c] = Some(r);
                }
                None => {}
            }
        }

        for t in 0..spec.t_sim {
            let mode = sig.mode_at(t);
            if t > 0 {
                dwell = remaining_dwell_update(dwell, mode, sig.graph.dwell_times());
            }
            let topo = &sig.topologies[mode];
            let delta = dwell.delta;

            let outcomes: Vec<Outcome> = self
                .controllers
                .par_iter()
                .enumerate()
                .map(|(c, slot)| {
                    let d = &slot.design;
                    let xc = stack(&x, &slot.members);
                    let own = if d.uses_references { refs[c].as_ref() } else { None };
                    let mut neighbours = BTreeMap::new();
                    if slot.exchange {
                        let i = slot.members[0];
                        for &j in &topo.neighbors[i] {
                            if let Some(r) = refs[j].as_ref() {
                                neighbours.insert(j, r);
                            }
                        }
                    }
                    let bundle = d.bundle(mode);
                    let clock = Instant::now();
                    let result = solve_local_ocp(d, &xc, own, &neighbours, mode, delta);
                    let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
                    match result {
                        Ok(sol) => Outcome {
                            u: control_input(&xc, &sol, &bundle.k),
                            next_reference: slot.exchange.then(|| shift_reference(&sol, &bundle.k)),
                            cost: sol.cost,
                            nominal: Some(sol.states),
                            solve_ms,
                            error: None,
                        },
                        Err(e) => {
                            // track the stale reference with the tube feedback
                            let raw = match &refs[c] {
                                Some(r) => &r.inputs[0] + &bundle.k * (&xc - &r.states[0]),
                                None => &bundle.k * &xc,
                            };
                            let u = qp::project_onto(&d.input_set, &raw).unwrap_or(raw);
                            Outcome {
                                u,
                                next_reference: refs[c].as_ref().map(|r| r.advance(&bundle.f, &bundle.k)),
                                nominal: None,
                                cost: f64::NAN,
                                solve_ms,
                                error: Some(e.to_string()),
                            }
                        }
                    }
                })
                .collect();

            let mut inputs = vec![DVector::zeros(0); net.len()];
            let mut subsystems: Vec<Option<SubsystemStep>> = vec![None; net.len()];
            let mut controllers = Vec::with_capacity(self.controllers.len());
            for (c, (slot, out)) in self.controllers.iter().zip(&outcomes).enumerate() {
                let feasible = out.error.is_none();
                if let Some(e) = &out.error {
                    fail(t, c, e.clone());
                }
                let xhat = out.nominal.as_ref().map(|n| unstack(&n[0], &slot.members, &dims_x));
                let held = refs[c].as_ref().filter(|_| slot.design.uses_references);
                let reference = held.map(|r| {
                    (
                        unstack(&r.states[0], &slot.members, &dims_x),
                        unstack(&r.inputs[0], &slot.members, &dims_u),
                    )
                });
                for (k, (i, ui)) in unstack(&out.u, &slot.members, &dims_u).into_iter().enumerate() {
                    subsystems[i] = Some(SubsystemStep {
                        x: x[i].as_slice().to_vec(),
                        u: ui.as_slice().to_vec(),
                        xhat: xhat.as_ref().map(|v| v[k].1.as_slice().to_vec()),
                        feasible,
                        cost: out.cost,
                        solve_ms: out.solve_ms,
                        reference: reference
                            .as_ref()
                            .map(|(s, u)| (s[k].1.as_slice().to_vec(), u[k].1.as_slice().to_vec())),
                    });
                    inputs[i] = ui;
                }
                controllers.push(ControllerStep {
                    design_mode: slot.design.mode_map[mode],
                    terminal_from: controller::terminal_start(&slot.design, mode, delta),
                    nominal: out.nominal.as_ref().map(|n| n.iter().map(|v| v.as_slice().to_vec()).collect()),
                    feasible,
                    error: out.error.clone(),
                });
            }
            for (c, out) in outcomes.into_iter().enumerate() {
                if out.next_reference.is_some() {
                    refs[c] = out.next_reference;
                }
            }
            steps.push(StepRecord {
                t,
                mode,
                delta,
                subsystems: subsystems.into_iter().map(|s| s.expect("every subsystem has a controller")).collect(),
                controllers,
            });
            x = net.plant_step(&x, &inputs, topo)?;
            states.push(x.clone());
        }

        Ok(SimulationTrace {
            strategy: self.strategy,
            t_sim: spec.t_sim,
            states,
            steps,
            sets: self.trace_sets(spec),
            first_failure,
            initial_condition: self.initial_conditions(spec),
        })
    }
}

/// Square errors `Σ_t x_ij(t)²` over `t = 0..=t_sim`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SseReport {
    pub per_state: Vec<Vec<f64>>,
    pub per_subsystem: Vec<f64>,
    pub total: f64,
}

pub fn sse_from_states(states: &[Vec<DVector<f64>>]) -> SseReport {
    let m = states.first().map_or(0, |s| s.len());
    let mut per_state: Vec<Vec<f64>> = (0..m).map(|i| vec![0.0; states[0][i].len()]).collect();
    for snapshot in states {
        for (i, x) in snapshot.iter().enumerate() {
            for (j, v) in x.iter().enumerate() {
                per_state[i][j] += v * v;
            }
        }
    }
    let per_subsystem: Vec<f64> = per_state.iter().map(|s| s.iter().sum()).collect();
    let total = per_subsystem.iter().sum();
    SseReport {
        per_state,
        per_subsystem,
        total,
    }
}

pub fn sse_report(trace: &SimulationTrace) -> SseReport {
    sse_from_states(&trace.states)
}
