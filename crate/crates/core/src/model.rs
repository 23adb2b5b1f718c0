//! The plant: coupled discrete-time linear subsystems whose neighbour sets
//! are switched by an exogenous signal subject to dwell-time and transition
//! restrictions.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Polytope};
use crate::invariants::SwitchGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("subsystem {0} does not exist")]
    UnknownSubsystem(usize),
    #[error("subsystem {i} has no coupling to neighbour {j}")]
    MissingCoupling { i: usize, j: usize },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Influence of neighbour `j` on subsystem `i`: `A_ij x_j + B_ij u_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Subsystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub couplings: BTreeMap<usize, Coupling>,
    pub state_set: Polytope,
    pub input_set: Polytope,
}

impl Subsystem {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Clone, Debug)]
pub struct NetworkModel {
    subsystems: Vec<Subsystem>,
}

impl NetworkModel {
    /// Checks matrix shapes, self-coupling and that each constraint set is
    /// bounded with the origin in its interior.
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self> {
        for (i, s) in subsystems.iter().enumerate() {
            let (n, m) = (s.n_x(), s.n_u());
            if s.a.ncols() != n || s.b.nrows() != n {
                return Err(ModelError::Dimensions(format!(
                    "subsystem {i}: A is {}x{}, B is {}x{}",
                    s.a.nrows(),
                    s.a.ncols(),
                    s.b.nrows(),
                    s.b.ncols()
                )));
            }
            if s.state_set.dim() != n || s.input_set.dim() != m {
                return Err(ModelError::Dimensions(format!("subsystem {i}: constraint set dimensions")));
            }
            for (label, set) in [("state", &s.state_set), ("input", &s.input_set)] {
                if !set.is_bounded() || set.is_empty() {
                    return Err(ModelError::Invalid(format!("subsystem {i}: {label} set must be bounded and nonempty")));
                }
                if set.violation(&DVector::zeros(set.dim())) > -1e-9 {
                    return Err(ModelError::Invalid(format!(
                        "subsystem {i}: {label} set must contain the origin in its interior"
                    )));
                }
            }
            for (&j, c) in &s.couplings {
                if j == i {
                    return Err(ModelError::Invalid(format!("subsystem {i} couples to itself")));
                }
                let other = subsystems.get(j).ok_or(ModelError::UnknownSubsystem(j))?;
                if c.a.shape() != (n, other.n_x()) || c.b.shape() != (n, other.n_u()) {
                    return Err(ModelError::Dimensions(format!(
                        "coupling of subsystems {i},{j}: A is {}x{}, B is {}x{}, expected {}x{} and {}x{}",
                        c.a.nrows(),
                        c.a.ncols(),
                        c.b.nrows(),
                        c.b.ncols(),
                        n,
                        other.n_x(),
                        n,
                        other.n_u()
                    )));
                }
            }
        }
        Ok(NetworkModel { subsystems })
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn subsystem(&self, i: usize) -> &Subsystem {
        &self.subsystems[i]
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    fn coupling(&self, i: usize, j: usize) -> Result<&Coupling> {
        self.subsystems
            .get(i)
            .ok_or(ModelError::UnknownSubsystem(i))?
            .couplings
            .get(&j)
            .ok_or(ModelError::MissingCoupling { i, j })
    }

    /// Whether any subsystem declares a coupling on `j`.
    pub fn is_anyones_neighbour(&self, j: usize) -> bool {
        self.subsystems.iter().any(|s| s.couplings.contains_key(&j))
    }

    /// One simultaneous step of every subsystem under `topo`.
    pub fn plant_step(
        &self,
        states: &[DVector<f64>],
        inputs: &[DVector<f64>],
        topo: &ModeTopology,
    ) -> Result<Vec<DVector<f64>>> {
        if states.len() != self.len() || inputs.len() != self.len() || topo.neighbors.len() != self.len() {
            return Err(ModelError::Dimensions(format!(
                "{} subsystems, {} states, {} inputs, {} neighbour sets",
                self.len(),
                states.len(),
                inputs.len(),
                topo.neighbors.len()
            )));
        }
        let mut next = Vec::with_capacity(self.len());
        for (i, s) in self.subsystems.iter().enumerate() {
            if states[i].len() != s.n_x() || inputs[i].len() != s.n_u() {
                return Err(ModelError::Dimensions(format!("state or input of subsystem {i}")));
            }
            let mut x = &s.a * &states[i] + &s.b * &inputs[i];
            for &j in &topo.neighbors[i] {
                let c = self.coupling(i, j)?;
                x += &c.a * &states[j] + &c.b * &inputs[j];
            }
            next.push(x);
        }
        Ok(next)
    }

    /// `⊕_{j ∈ neighbours} (A_ij E_j ⊕ B_ij Eu_j)`.
    pub fn interaction_disturbance_set(
        &self,
        i: usize,
        neighbors: &BTreeSet<usize>,
        e: &[Polytope],
        eu: &[Polytope],
    ) -> Result<Polytope> {
        let n = self.subsystems.get(i).ok_or(ModelError::UnknownSubsystem(i))?.n_x();
        let mut w = Polytope::origin(n);
        for &j in neighbors {
            let c = self.coupling(i, j)?;
            let (ej, euj) = (
                e.get(j).ok_or(ModelError::UnknownSubsystem(j))?,
                eu.get(j).ok_or(ModelError::UnknownSubsystem(j))?,
            );
            for (m, set) in [(&c.a, ej), (&c.b, euj)] {
                if m.iter().all(|&v| v == 0.0) {
                    continue;
                }
                w = w.minkowski_sum(&set.affine_image(m)?)?;
            }
        }
        Ok(w)
    }

    /// Disturbance set for the full allowable neighbourhood of `i`.
    pub fn worst_case_disturbance_set(
        &self,
        i: usize,
        allowable: &BTreeSet<usize>,
        e: &[Polytope],
        eu: &[Polytope],
    ) -> Result<Polytope> {
        self.interaction_disturbance_set(i, allowable, e, eu)
    }
}

/// Neighbour sets of one network topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTopology {
    pub neighbors: Vec<BTreeSet<usize>>,
}

impl ModeTopology {
    pub fn decoupled(m: usize) -> Self {
        ModeTopology {
            neighbors: vec![BTreeSet::new(); m],
        }
    }

    /// Each neighbour set must only name declared couplings.
    pub fn check(&self, model: &NetworkModel) -> Result<()> {
        if self.neighbors.len() != model.len() {
            return Err(ModelError::Dimensions(format!(
                "topology lists {} subsystems, model has {}",
                self.neighbors.len(),
                model.len()
            )));
        }
        for (i, set) in self.neighbors.iter().enumerate() {
            for &j in set {
                model.coupling(i, j)?;
            }
        }
        Ok(())
    }
}

/// What the local controllers know about future topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Every topology is known in advance; switch times are not.
    TimesAndModesKnown,
    /// Only each subsystem's allowable neighbourhood is known.
    ModesRestricted,
    /// Nothing is known; any other subsystem may become a neighbour.
    FullyUnknown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SignalViolation {
    UndeclaredMode { index: usize, mode: usize },
    Dwell { index: usize, mode: usize, run: usize, required: usize },
    Transition { index: usize, from: usize, to: usize },
}

impl SignalViolation {
    /// Position in the sequence where the violation shows.
    pub fn index(&self) -> usize {
        match *self {
            SignalViolation::UndeclaredMode { index, .. }
            | SignalViolation::Dwell { index, .. }
            | SignalViolation::Transition { index, .. } => index,
        }
    }
}

impl std::fmt::Display for SignalViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SignalViolation::UndeclaredMode { index, mode } => write!(f, "undeclared mode {} at t={index}", mode + 1),
            SignalViolation::Dwell {
                index,
                mode,
                run,
                required,
            } => write!(f, "mode {} left at t={index} after {run} steps, dwell time is {required}", mode + 1),
            SignalViolation::Transition { index, from, to } => {
                write!(f, "transition {} -> {} at t={index} is not allowed", from + 1, to + 1)
            }
        }
    }
}

/// Checks membership of a mode sequence in the admissible signal set: every
/// completed run of mode `i` lasts at least `d_i` steps and every change is
/// an edge of the graph. The final run may be cut short by the end of the
/// sequence.
pub fn validate_signal(seq: &[usize], graph: &SwitchGraph) -> std::result::Result<(), SignalViolation> {
    let mut run = 0usize;
    for (t, &mode) in seq.iter().enumerate() {
        if mode >= graph.num_modes() {
            return Err(SignalViolation::UndeclaredMode { index: t, mode });
        }
        if t > 0 && mode != seq[t - 1] {
            let prev = seq[t - 1];
            if run < graph.dwell(prev) {
                return Err(SignalViolation::Dwell {
                    index: t,
                    mode: prev,
                    run,
                    required: graph.dwell(prev),
                });
            }
            if !graph.has_edge(prev, mode) {
                return Err(SignalViolation::Transition {
                    index: t,
                    from: prev,
                    to: mode,
                });
            }
            run = 0;
        }
        run += 1;
    }
    Ok(())
}

/// Remaining dwell time bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DwellState {
    pub delta: usize,
    pub current_mode: usize,
}

impl DwellState {
    /// State right after entering `mode`.
    pub fn entering(mode: usize, graph: &SwitchGraph) -> Self {
        DwellState {
            delta: graph.dwell(mode),
            current_mode: mode,
        }
    }
}

pub fn remaining_dwell_update(state: DwellState, next_mode: usize, dwell: &[usize]) -> DwellState {
    if next_mode == state.current_mode {
        DwellState {
            delta: state.delta.saturating_sub(1),
            current_mode: next_mode,
        }
    } else {
        DwellState {
            delta: dwell[next_mode],
            current_mode: next_mode,
        }
    }
}

/// Exogenous switching signal: the topology of each mode, the admissible
/// transitions and the realized schedule.
#[derive(Clone, Debug)]
pub struct SwitchingSignal {
    pub topologies: Vec<ModeTopology>,
    pub graph: SwitchGraph,
    /// `(time, mode)` pairs, strictly increasing in time, first at `t = 0`.
    pub changes: Vec<(usize, usize)>,
    pub visibility: Visibility,
    /// Per subsystem, the neighbours it may ever have (restricted visibility).
    pub allowable: Option<Vec<BTreeSet<usize>>>,
}

impl SwitchingSignal {
    pub fn new(
        topologies: Vec<ModeTopology>,
        graph: SwitchGraph,
        changes: Vec<(usize, usize)>,
        visibility: Visibility,
        allowable: Option<Vec<BTreeSet<usize>>>,
    ) -> Result<Self> {
        if topologies.len() != graph.num_modes() {
            return Err(ModelError::Invalid(format!(
                "{} topologies but the switch graph has {} modes",
                topologies.len(),
                graph.num_modes()
            )));
        }
        if changes.first().is_none_or(|&(t, _)| t != 0) {
            return Err(ModelError::Invalid("schedule must start at t = 0".into()));
        }
        if changes.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ModelError::Invalid("schedule times must increase".into()));
        }
        if let Some(&(_, mode)) = changes.iter().find(|&&(_, m)| m >= topologies.len()) {
            return Err(ModelError::Invalid(format!("schedule uses undeclared mode {mode}")));
        }
        if let Some(allowable) = &allowable {
            for (m, topo) in topologies.iter().enumerate() {
                for (i, set) in topo.neighbors.iter().enumerate() {
                    if !allowable.get(i).is_some_and(|a| set.is_subset(a)) {
                        return Err(ModelError::Invalid(format!(
                            "mode {m} gives subsystem {i} neighbours outside its allowable set"
                        )));
                    }
                }
            }
        }
        Ok(SwitchingSignal {
            topologies,
            graph,
            changes,
            visibility,
            allowable,
        })
    }

    /// One mode forever.
    pub fn constant(topology: ModeTopology, dwell: usize) -> Self {
        SwitchingSignal {
            topologies: vec![topology],
            graph: SwitchGraph::new(vec![dwell], []).expect("one mode"),
            changes: vec![(0, 0)],
            visibility: Visibility::TimesAndModesKnown,
            allowable: None,
        }
    }

    pub fn mode_at(&self, t: usize) -> usize {
        self.changes.iter().rev().find(|&&(s, _)| s <= t).map(|&(_, m)| m).unwrap_or(0)
    }

    pub fn sequence(&self, len: usize) -> Vec<usize> {
        (0..len).map(|t| self.mode_at(t)).collect()
    }

    pub fn topology_at(&self, t: usize) -> &ModeTopology {
        &self.topologies[self.mode_at(t)]
    }

    /// Random member of the admissible signal set: after the dwell time has
    /// elapsed, switch with probability `p_switch` to a uniformly chosen
    /// successor.
    pub fn random_schedule(graph: &SwitchGraph, start: usize, len: usize, p_switch: f64, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut changes = vec![(0, start)];
        let mut mode = start;
        let mut run = 0;
        for t in 1..len {
            run += 1;
            let succ: Vec<usize> = graph.successors(mode).filter(|&j| j != mode).collect();
            if run >= graph.dwell(mode) && !succ.is_empty() && rng.random_bool(p_switch) {
                mode = succ[rng.random_range(0..succ.len())];
                changes.push((t, mode));
                run = 0;
            }
        }
        changes
    }
}
