//! TOML experiment files: parsing, whole-file validation with field paths,
//! and a canonical dumper.
//!
//! Subsystem and mode numbers are 1-based in files and 0-based everywhere
//! else.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{DesignOptions, LocalTuning};
use crate::geometry::Polytope;
use crate::invariants::{SwitchGraph, DEFAULT_MAX_ITER};
use crate::model::{
    validate_signal, Coupling, ModeTopology, NetworkModel, Subsystem, SwitchingSignal, Visibility,
};
use crate::orchestrator::{ExperimentSpec, Strategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub run: RunBlock,
    pub controller: ControllerBlock,
    pub signal: SignalBlock,
    #[serde(rename = "subsystem")]
    pub subsystems: Vec<SubsystemBlock>,
    #[serde(rename = "topology")]
    pub topologies: Vec<TopologyBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub t_sim: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

fn default_strategies() -> Vec<String> {
    vec!["dswmpc".into()]
}

/// A scalar applied to every component, or one value per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Widths {
    Uniform(f64),
    PerComponent(Vec<f64>),
}

impl Widths {
    fn expand(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            Widths::Uniform(w) => Some(vec![*w; n]),
            Widths::PerComponent(v) if v.len() == n => Some(v.clone()),
            Widths::PerComponent(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerBlock {
    pub horizon: usize,
    /// Stage weights; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    /// Half-widths of the reference deviation boxes `E` and `Eu`.
    pub tube_state: Widths,
    pub tube_input: Widths,
    #[serde(default = "default_eps")]
    pub mrpi_eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_eps() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalBlock {
    /// One dwell time for all modes or one per mode.
    pub dwell: DwellSpec,
    /// `"cycle"`, `"complete"`, or explicit `edges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    /// `[time, mode]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSchedule>,
    pub visibility: Visibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowable: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DwellSpec {
    Uniform(i64),
    PerMode(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSchedule {
    pub start: usize,
    pub p_switch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<Vec<f64>>,
    /// General halfspace constraints instead of boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_constraints: Option<HalfspaceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_constraints: Option<HalfspaceBlock>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube_state: Option<Widths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube_input: Option<Widths>,
    #[serde(default, rename = "coupling", skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceBlock {
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    pub neighbor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    /// Neighbour list of each subsystem.
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn field_errors(&self) -> &[FieldError] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

struct Collector(Vec<FieldError>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn matrix(&mut self, path: &str, rows: &[Vec<f64>], shape: Option<(usize, usize)>) -> Option<DMatrix<f64>> {
        let Some(m) = matrix(rows) else {
            self.push(path, "rows have different lengths");
            return None;
        };
        if m.iter().any(|v| !v.is_finite()) {
            self.push(path, "entries must be finite");
            return None;
        }
        if let Some((r, c)) = shape {
            if m.shape() != (r, c) {
                self.push(path, format!("expected a {r}x{c} matrix, found {}x{}", m.nrows(), m.ncols()));
                return None;
            }
        }
        Some(m)
    }
}

fn box_set(lo: &[f64], hi: &[f64]) -> Option<Polytope> {
    Polytope::bounds(lo, hi).ok()
}

impl ExperimentConfig {
    pub fn num_modes(&self) -> usize {
        self.topologies.len()
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>, String> {
        self.run.strategies.iter().map(|s| s.parse()).collect()
    }

    fn dwell_times(&self) -> Vec<i64> {
        match &self.signal.dwell {
            DwellSpec::Uniform(d) => vec![*d; self.num_modes()],
            DwellSpec::PerMode(v) => v.clone(),
        }
    }

    /// Every problem in the file, each with its field path.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut c = Collector(vec![]);
        let m = self.subsystems.len();
        let modes = self.num_modes();
        if m == 0 {
            c.push("subsystem", "at least one subsystem is required");
        }
        if modes == 0 {
            c.push("topology", "at least one topology is required");
        }
        if self.run.t_sim == 0 {
            c.push("run.t_sim", "must be positive");
        }
        for (k, s) in self.run.strategies.iter().enumerate() {
            if let Err(e) = s.parse::<Strategy>() {
                c.push(format!("run.strategies[{k}]"), e);
            }
        }
        let ctl = &self.controller;
        if ctl.horizon == 0 {
            c.push("controller.horizon", "must be positive");
        }
        if !(ctl.mrpi_eps > 0.0 && ctl.mrpi_eps < 1.0) {
            c.push("controller.mrpi_eps", "must lie in (0, 1)");
        }
        if ctl.max_iter == 0 {
            c.push("controller.max_iter", "must be positive");
        }

        let mut dims = vec![None; m];
        for (i, s) in self.subsystems.iter().enumerate() {
            let p = format!("subsystem[{}]", i + 1);
            let a = c.matrix(&format!("{p}.a"), &s.a, None);
            let n = match &a {
                Some(a) if a.is_square() && a.nrows() > 0 => Some(a.nrows()),
                Some(_) => {
                    c.push(format!("{p}.a"), "must be square and non-empty");
                    None
                }
                None => None,
            };
            let b = c.matrix(&format!("{p}.b"), &s.b, None);
            if let (Some(n), Some(b)) = (n, &b) {
                if b.nrows() != n || b.ncols() == 0 {
                    c.push(format!("{p}.b"), format!("expected {n} rows and at least one column, found {}x{}", b.nrows(), b.ncols()));
                } else {
                    dims[i] = Some((n, b.ncols()));
                }
            }
            if s.x0.len() != n.unwrap_or(s.x0.len()) {
                c.push(format!("{p}.x0"), format!("expected {} entries", n.unwrap_or(0)));
            }
            let nu = b.as_ref().map(|b| b.ncols());
            for (kind, lo, hi, general, dim) in [
                ("x", &s.x_min, &s.x_max, &s.state_constraints, n),
                ("u", &s.u_min, &s.u_max, &s.input_constraints, nu),
            ] {
                let name = if kind == "x" { "state_constraints" } else { "input_constraints" };
                match (lo, hi, general) {
                    (Some(lo), Some(hi), None) => {
                        if dim.is_some_and(|d| lo.len() != d || hi.len() != d) {
                            c.push(format!("{p}.{kind}_min"), format!("bounds must have {} entries", dim.unwrap()));
                        } else if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                            c.push(format!("{p}.{kind}_min"), "lower bounds must lie strictly below upper bounds");
                        }
                    }
                    (None, None, Some(h)) => {
                        if h.rows.len() != h.offsets.len() {
                            c.push(format!("{p}.{name}"), "rows and offsets differ in length");
                        }
                        if let Some(d) = dim {
                            if h.rows.iter().any(|r| r.len() != d) {
                                c.push(format!("{p}.{name}.rows"), format!("every row needs {d} entries"));
                            }
                        }
                    }
                    _ => c.push(
                        format!("{p}.{kind}_min"),
                        format!("give either {kind}_min and {kind}_max or {name}"),
                    ),
                }
            }
            if let (Some(q), Some(n)) = (&s.q, n) {
                c.matrix(&format!("{p}.q"), q, Some((n, n)));
            }
            if let (Some(r), Some(nu)) = (&s.r, nu) {
                c.matrix(&format!("{p}.r"), r, Some((nu, nu)));
            }
            for (k, w) in [("tube_state", &s.tube_state), ("tube_input", &s.tube_input)] {
                if let Some(w) = w {
                    check_widths(&mut c, &format!("{p}.{k}"), w, if k == "tube_state" { n } else { nu });
                }
            }
            let mut seen = BTreeSet::new();
            for (k, cp) in s.couplings.iter().enumerate() {
                let cpath = format!("{p}.coupling[{}]", k + 1);
                if cp.neighbor == 0 || cp.neighbor > m {
                    c.push(format!("{cpath}.neighbor"), format!("must name a subsystem in 1..={m}"));
                    continue;
                }
                if cp.neighbor == i + 1 {
                    c.push(format!("{cpath}.neighbor"), "a subsystem cannot couple to itself");
                }
                if !seen.insert(cp.neighbor) {
                    c.push(format!("{cpath}.neighbor"), format!("duplicate coupling to subsystem {}", cp.neighbor));
                }
                if cp.a.is_none() && cp.b.is_none() {
                    c.push(cpath.clone(), "needs a or b");
                }
            }
        }
        // coupling shapes need both ends
        for (i, s) in self.subsystems.iter().enumerate() {
            for cp in &s.couplings {
                let j = cp.neighbor.wrapping_sub(1);
                let (Some(Some((ni, _))), Some(Some((nj, uj)))) = (dims.get(i), dims.get(j)) else {
                    continue;
                };
                let path = format!("subsystem[{}].coupling(neighbor {})", i + 1, j + 1);
                if let Some(a) = &cp.a {
                    if let Some(mat) = matrix(a) {
                        if mat.shape() != (*ni, *nj) {
                            c.push(
                                format!("{path}.a"),
                                format!(
                                    "A_{}{} must be {ni}x{nj} (subsystems {} and {}), found {}x{}",
                                    i + 1,
                                    j + 1,
                                    i + 1,
                                    j + 1,
                                    mat.nrows(),
                                    mat.ncols()
                                ),
                            );
                        }
                    } else {
                        c.push(format!("{path}.a"), "rows have different lengths");
                    }
                }
                if let Some(b) = &cp.b {
                    if matrix(b).is_none_or(|mat| mat.shape() != (*ni, *uj)) {
                        c.push(
                            format!("{path}.b"),
                            format!("B_{}{} must be {ni}x{uj} (subsystems {} and {})", i + 1, j + 1, i + 1, j + 1),
                        );
                    }
                }
            }
        }

        let common_n = dims.iter().flatten().map(|d| d.0).collect::<BTreeSet<_>>();
        let common_u = dims.iter().flatten().map(|d| d.1).collect::<BTreeSet<_>>();
        if let Some(q) = &ctl.q {
            if common_n.len() == 1 && self.subsystems.iter().any(|s| s.q.is_none()) {
                let n = *common_n.first().unwrap();
                c.matrix("controller.q", q, Some((n, n)));
            } else if self.subsystems.iter().any(|s| s.q.is_none()) {
                c.push("controller.q", "state dimensions differ between subsystems; give q per subsystem");
            }
        }
        if let Some(r) = &ctl.r {
            if common_u.len() == 1 && self.subsystems.iter().any(|s| s.r.is_none()) {
                let nu = *common_u.first().unwrap();
                c.matrix("controller.r", r, Some((nu, nu)));
            } else if self.subsystems.iter().any(|s| s.r.is_none()) {
                c.push("controller.r", "input dimensions differ between subsystems; give r per subsystem");
            }
        }
        for (i, s) in self.subsystems.iter().enumerate() {
            if let Some(Some((n, nu))) = dims.get(i) {
                if s.tube_state.is_none() {
                    check_widths(&mut c, "controller.tube_state", &ctl.tube_state, Some(*n));
                }
                if s.tube_input.is_none() {
                    check_widths(&mut c, "controller.tube_input", &ctl.tube_input, Some(*nu));
                }
            }
        }

        for (k, t) in self.topologies.iter().enumerate() {
            let p = format!("topology[{}]", k + 1);
            if t.neighbors.len() != m {
                c.push(format!("{p}.neighbors"), format!("expected {m} neighbour lists, found {}", t.neighbors.len()));
                continue;
            }
            for (i, list) in t.neighbors.iter().enumerate() {
                for &j in list {
                    let declared = self.subsystems[i].couplings.iter().any(|cp| cp.neighbor == j);
                    if j == 0 || j > m || j == i + 1 || !declared {
                        c.push(
                            format!("{p}.neighbors[{}]", i + 1),
                            format!("subsystem {} has no declared coupling to {j}", i + 1),
                        );
                    }
                }
            }
        }

        let sig = &self.signal;
        let dwell = self.dwell_times();
        if dwell.len() != modes {
            c.push("signal.dwell", format!("expected {modes} dwell times, found {}", dwell.len()));
        }
        for (k, &d) in dwell.iter().enumerate() {
            if d < 1 {
                let path = match sig.dwell {
                    DwellSpec::Uniform(_) => "signal.dwell".to_string(),
                    DwellSpec::PerMode(_) => format!("signal.dwell[{}]", k + 1),
                };
                c.push(path, format!("dwell time must be at least 1, found {d}"));
                if matches!(sig.dwell, DwellSpec::Uniform(_)) {
                    break;
                }
            }
        }
        match (&sig.graph, &sig.edges) {
            (Some(g), None) if g == "cycle" || g == "complete" => {}
            (Some(g), None) => c.push("signal.graph", format!("unknown graph '{g}' (cycle or complete)")),
            (None, Some(edges)) => {
                for (k, e) in edges.iter().enumerate() {
                    if e.iter().any(|&v| v == 0 || v > modes) || e[0] == e[1] {
                        c.push(format!("signal.edges[{}]", k + 1), format!("edge must join two distinct modes in 1..={modes}"));
                    }
                }
            }
            _ => c.push("signal.graph", "give exactly one of graph or edges"),
        }
        match (&sig.schedule, &sig.random) {
            (Some(s), None) => {
                for (k, &[t, mode]) in s.iter().enumerate() {
                    if mode == 0 || mode > modes {
                        c.push(format!("signal.schedule[{}]", k + 1), format!("mode {mode} is not declared"));
                    }
                    if k == 0 && t != 0 {
                        c.push("signal.schedule[1]", "the schedule must start at t = 0");
                    }
                    if k > 0 && t <= s[k - 1][0] {
                        c.push(format!("signal.schedule[{}]", k + 1), "switch times must increase");
                    }
                }
                if s.is_empty() {
                    c.push("signal.schedule", "must not be empty");
                }
            }
            (None, Some(r)) => {
                if r.start == 0 || r.start > modes {
                    c.push("signal.random.start", format!("mode {} is not declared", r.start));
                }
                if !(0.0..=1.0).contains(&r.p_switch) {
                    c.push("signal.random.p_switch", "must lie in [0, 1]");
                }
            }
            _ => c.push("signal.schedule", "give exactly one of schedule or random"),
        }
        if let Some(allow) = &sig.allowable {
            if allow.len() != m {
                c.push("signal.allowable", format!("expected {m} lists, found {}", allow.len()));
            } else {
                for (i, list) in allow.iter().enumerate() {
                    for &j in list {
                        if !self.subsystems[i].couplings.iter().any(|cp| cp.neighbor == j) {
                            c.push(
                                format!("signal.allowable[{}]", i + 1),
                                format!("subsystem {} has no declared coupling to {j}", i + 1),
                            );
                        }
                    }
                }
            }
        } else if sig.visibility == Visibility::ModesRestricted {
            c.push("signal.allowable", "required when visibility is modes_restricted");
        }

        if c.0.is_empty() {
            // realized schedule must be admissible
            if let Ok(graph) = self.graph() {
                let changes = self.schedule(&graph);
                let seq: Vec<usize> = (0..self.run.t_sim)
                    .map(|t| changes.iter().rev().find(|&&(s, _)| s <= t).map_or(0, |&(_, m)| m))
                    .collect();
                if let Err(v) = validate_signal(&seq, &graph) {
                    c.push("signal.schedule", format!("not admissible: {v}"));
                }
            }
        }
        if c.0.is_empty() {
            if let Err(e) = self.build_network() {
                c.push("subsystem", e);
            }
        }
        c.0
    }

    fn graph(&self) -> Result<SwitchGraph, String> {
        let dwell: Vec<usize> = self.dwell_times().iter().map(|&d| d as usize).collect();
        let n = self.num_modes();
        let g = match (&self.signal.graph, &self.signal.edges) {
            (Some(g), _) if g == "cycle" => SwitchGraph::cycle(n, 1),
            (Some(_), _) => SwitchGraph::complete(n, 1),
            (None, Some(edges)) => SwitchGraph::new(dwell.clone(), edges.iter().map(|e| (e[0] - 1, e[1] - 1))),
            (None, None) => return Err("no graph".into()),
        }
        .map_err(|e| e.to_string())?;
        SwitchGraph::new(dwell, g.edges().collect::<Vec<_>>()).map_err(|e| e.to_string())
    }

    /// Realized `(time, mode)` changes, 0-based modes.
    fn schedule(&self, graph: &SwitchGraph) -> Vec<(usize, usize)> {
        match (&self.signal.schedule, &self.signal.random) {
            (Some(s), _) => s.iter().map(|&[t, m]| (t, m - 1)).collect(),
            (None, Some(r)) => SwitchingSignal::random_schedule(graph, r.start - 1, self.run.t_sim, r.p_switch, self.run.seed),
            (None, None) => vec![(0, 0)],
        }
    }

    fn build_network(&self) -> Result<NetworkModel, String> {
        let mut subs = vec![];
        for s in &self.subsystems {
            let a = matrix(&s.a).ok_or("bad A")?;
            let b = matrix(&s.b).ok_or("bad B")?;
            let set = |lo: &Option<Vec<f64>>, hi: &Option<Vec<f64>>, h: &Option<HalfspaceBlock>, dim: usize| match h {
                Some(h) => Polytope::from_rows(dim, &h.rows, &h.offsets).map_err(|e| e.to_string()),
                None => box_set(lo.as_deref().unwrap_or(&[]), hi.as_deref().unwrap_or(&[])).ok_or_else(|| "bad bounds".to_string()),
            };
            let state_set = set(&s.x_min, &s.x_max, &s.state_constraints, a.nrows())?;
            let input_set = set(&s.u_min, &s.u_max, &s.input_constraints, b.ncols())?;
            let couplings: BTreeMap<usize, Coupling> = s
                .couplings
                .iter()
                .map(|cp| {
                    let j = cp.neighbor - 1;
                    let sj = &self.subsystems[j];
                    let (nj, uj) = (sj.a.len(), sj.b.first().map_or(0, |r| r.len()));
                    let a = cp.a.as_deref().and_then(matrix).unwrap_or_else(|| DMatrix::zeros(a.nrows(), nj));
                    let b = cp.b.as_deref().and_then(matrix).unwrap_or_else(|| DMatrix::zeros(a.nrows(), uj));
                    (j, Coupling { a, b })
                })
                .collect();
            subs.push(Subsystem {
                a,
                b,
                couplings,
                state_set,
                input_set,
            });
        }
        NetworkModel::new(subs).map_err(|e| e.to_string())
    }

    /// Builds the experiment; the config must have passed validation.
    pub fn to_spec(&self) -> Result<ExperimentSpec, ConfigError> {
        let invalid = |msg: String| ConfigError::Invalid(vec![FieldError { path: "".into(), message: msg }]);
        let errors = self.validate();
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let network = self.build_network().map_err(invalid)?;
        let graph = self.graph().map_err(invalid)?;
        let changes = self.schedule(&graph);
        let topologies = self
            .topologies
            .iter()
            .map(|t| ModeTopology {
                neighbors: t.neighbors.iter().map(|l| l.iter().map(|j| j - 1).collect()).collect(),
            })
            .collect();
        let allowable = self
            .signal
            .allowable
            .as_ref()
            .map(|a| a.iter().map(|l| l.iter().map(|j| j - 1).collect()).collect());
        let signal = SwitchingSignal::new(topologies, graph, changes, self.signal.visibility, allowable)
            .map_err(|e| invalid(e.to_string()))?;
        let ctl = &self.controller;
        let tuning = self
            .subsystems
            .iter()
            .zip(network.subsystems())
            .map(|(s, sub)| {
                let (n, nu) = (sub.n_x(), sub.n_u());
                let q = s.q.as_ref().or(ctl.q.as_ref()).and_then(|q| matrix(q)).unwrap_or_else(|| DMatrix::identity(n, n));
                let r = s.r.as_ref().or(ctl.r.as_ref()).and_then(|r| matrix(r)).unwrap_or_else(|| DMatrix::identity(nu, nu));
                let e = s.tube_state.as_ref().unwrap_or(&ctl.tube_state).expand(n).expect("validated");
                let eu = s.tube_input.as_ref().unwrap_or(&ctl.tube_input).expand(nu).expect("validated");
                Ok(LocalTuning {
                    q,
                    r,
                    e: Polytope::centered_box(&e).map_err(|e| invalid(e.to_string()))?,
                    eu: Polytope::centered_box(&eu).map_err(|e| invalid(e.to_string()))?,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Ok(ExperimentSpec {
            network,
            signal,
            t_sim: self.run.t_sim,
            initial_states: self.subsystems.iter().map(|s| DVector::from_vec(s.x0.clone())).collect(),
            tuning,
            options: DesignOptions {
                horizon: ctl.horizon,
                mrpi_eps: ctl.mrpi_eps,
                max_iter: ctl.max_iter,
            },
        })
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }
}

fn check_widths(c: &mut Collector, path: &str, w: &Widths, dim: Option<usize>) {
    let values = match (w, dim) {
        (Widths::PerComponent(v), Some(d)) if v.len() != d => {
            c.push(path, format!("expected {d} half-widths, found {}", v.len()));
            return;
        }
        (Widths::Uniform(x), _) => vec![*x],
        (Widths::PerComponent(v), _) => v.clone(),
    };
    if values.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        c.push(path, "half-widths must be positive and finite");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[run]
t_sim = 4

[controller]
horizon = 3
tube_state = 0.1
tube_input = 0.05

[signal]
dwell = 2
graph = "complete"
schedule = [[0, 1], [2, 2]]
visibility = "times_and_modes_known"

[[subsystem]]
a = [[1.0]]
b = [[1.0]]
x_min = [-1.0]
x_max = [1.0]
u_min = [-1.0]
u_max = [1.0]
x0 = [0.5]
[[subsystem.coupling]]
neighbor = 2
a = [[0.1]]

[[subsystem]]
a = [[0.5]]
b = [[1.0]]
x_min = [-1.0]
x_max = [1.0]
u_min = [-1.0]
u_max = [1.0]
x0 = [-0.5]

[[topology]]
neighbors = [[], []]
[[topology]]
neighbors = [[2], []]
"#;

    #[test]
    fn small_config_parses_and_builds() {
        let cfg = parse_config(SMALL).unwrap();
        let spec = cfg.to_spec().unwrap();
        assert_eq!(spec.network.len(), 2);
        assert_eq!(spec.signal.mode_at(3), 1);
        assert!(spec.signal.topologies[1].neighbors[0].contains(&1));
    }

    #[test]
    fn canonical_dump_round_trips() {
        let cfg = parse_config(SMALL).unwrap();
        let again = parse_config(&cfg.to_canonical_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = parse_config("[run]\nt_sim = 4\n[controller\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_errors_are_reported() {
        let bad = SMALL.replace("dwell = 2", "dwell = 0").replace("horizon = 3", "horizon = 0");
        let err = parse_config(&bad).unwrap_err();
        let paths: Vec<&str> = err.field_errors().iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"signal.dwell"), "{paths:?}");
        assert!(paths.contains(&"controller.horizon"), "{paths:?}");
    }
}
