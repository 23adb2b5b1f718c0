//! Invariant-set engine: one-step and k-step predecessor sets, outer
//! approximations of the minimal robust positively invariant set, maximal
//! control invariant sets and the switch-robust control invariant family for
//! dwell-time constrained switching.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, Polytope, SET_TOL};
use crate::linalg;

/// Iteration cap for fixed-point computations.
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone)]
pub enum InvariantError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("matrix is not Schur (spectral radius {radius:.6})")]
    NotSchur { radius: f64 },
    #[error("disturbance set must contain the origin")]
    DisturbanceExcludesOrigin,
    #[error("disturbance set must be bounded")]
    UnboundedDisturbance,
    #[error("input constraint set is empty")]
    EmptyInputSet,
    #[error("fixed point not reached after {iterations} iterations")]
    NotConverged { iterations: usize, last: Box<Polytope> },
    #[error("switch-invariant family is empty for mode {mode}")]
    EmptyFamily { mode: usize },
    #[error("seed for mode {mode} is not contained in the state constraints")]
    SeedNotAdmissible { mode: usize },
    #[error("invalid switch graph: {0}")]
    InvalidGraph(String),
    #[error("unknown mode {0}")]
    UnknownMode(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, InvariantError>;

/// Something with a state constraint set and a predecessor operator.
pub trait Predecessor {
    fn state_dim(&self) -> usize;
    fn state_set(&self) -> &Polytope;
    /// States of the constraint set that can be moved into `target` in one step.
    fn pre(&self, target: &Polytope) -> Result<Polytope>;

    /// `k`-fold predecessor, intersected with the state constraints at every
    /// step; order zero returns the target itself.
    fn pre_k(&self, target: &Polytope, k: usize) -> Result<Polytope> {
        let mut set = target.clone();
        for _ in 0..k {
            set = self.pre(&set)?;
            if set.is_empty() {
                break;
            }
        }
        Ok(set)
    }
}

/// Linear mode `x+ = A x + B u` with state and input constraints.
#[derive(Clone, Debug)]
pub struct ModeDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_set: Polytope,
    pub input_set: Polytope,
}

impl ModeDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, state_set: Polytope, input_set: Polytope) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || state_set.dim() != n || input_set.dim() != b.ncols() {
            return Err(InvariantError::Dimensions(format!(
                "A {}x{}, B {}x{}, X dim {}, U dim {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                state_set.dim(),
                input_set.dim()
            )));
        }
        Ok(ModeDynamics {
            a,
            b,
            state_set,
            input_set,
        })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
}

impl Predecessor for ModeDynamics {
    fn state_dim(&self) -> usize {
        self.n_x()
    }

    fn state_set(&self) -> &Polytope {
        &self.state_set
    }

    fn pre(&self, target: &Polytope) -> Result<Polytope> {
        pre_set(target, self)
    }
}

/// Closed loop `x+ = (A + B K) x` with the input constraint folded into the
/// admissible state set `X ∩ {x : K x ∈ U}`. Its predecessor needs no
/// projection, which keeps high-dimensional fixed points tractable.
#[derive(Clone, Debug)]
pub struct ClosedLoopDynamics {
    pub f: DMatrix<f64>,
    pub admissible: Polytope,
}

impl ClosedLoopDynamics {
    pub fn new(dynamics: &ModeDynamics, gain: &DMatrix<f64>) -> Result<Self> {
        if gain.nrows() != dynamics.n_u() || gain.ncols() != dynamics.n_x() {
            return Err(InvariantError::Dimensions(format!(
                "gain is {}x{}, expected {}x{}",
                gain.nrows(),
                gain.ncols(),
                dynamics.n_u(),
                dynamics.n_x()
            )));
        }
        let f = &dynamics.a + &dynamics.b * gain;
        let admissible = dynamics.state_set.intersect(&dynamics.input_set.preimage(gain)?)?;
        Ok(ClosedLoopDynamics { f, admissible })
    }
}

impl Predecessor for ClosedLoopDynamics {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn state_set(&self) -> &Polytope {
        &self.admissible
    }

    fn pre(&self, target: &Polytope) -> Result<Polytope> {
        Ok(target.preimage(&self.f)?.intersect(&self.admissible)?)
    }
}

/// `{x ∈ X : ∃u ∈ U, A x + B u ∈ target}`.
pub fn pre_set(target: &Polytope, dynamics: &ModeDynamics) -> Result<Polytope> {
    let (n, m) = (dynamics.n_x(), dynamics.n_u());
    if target.dim() != n {
        return Err(InvariantError::Dimensions(format!(
            "target dim {} but state dim {}",
            target.dim(),
            n
        )));
    }
    if dynamics.input_set.is_empty() {
        return Err(InvariantError::EmptyInputSet);
    }
    if target.is_empty() {
        return Ok(Polytope::empty(n));
    }
    if m == 0 {
        return Ok(target.preimage(&dynamics.a)?.intersect(&dynamics.state_set)?);
    }
    // lift to (x, u): target rows composed with [A B], input rows on u
    let ab = {
        let mut ab = DMatrix::zeros(n, n + m);
        ab.view_mut((0, 0), (n, n)).copy_from(&dynamics.a);
        ab.view_mut((0, n), (n, m)).copy_from(&dynamics.b);
        ab
    };
    let lifted_target = target.preimage(&ab)?;
    let lifted_input = Polytope::whole_space(n).cartesian_product(&dynamics.input_set);
    let lifted = lifted_target.intersect(&lifted_input)?;
    if lifted.is_empty() {
        return Ok(Polytope::empty(n));
    }
    let projected = lifted.project_out(&(n..n + m).collect::<Vec<_>>())?;
    Ok(projected.intersect(&dynamics.state_set)?)
}

/// `k`-step predecessor of `target` under `dynamics`.
pub fn pre_k(target: &Polytope, dynamics: &ModeDynamics, k: usize) -> Result<Polytope> {
    dynamics.pre_k(target, k)
}

/// Invariance-certified outer approximation of the minimal RPI set of
/// `x+ = F x + w`, `w ∈ W`.
///
/// Picks the smallest `s` with `F^s W ⊆ α W` where `α` satisfies
/// `α ≤ eps / (eps + M(s))`, `M(s)` bounding the partial sum in the infinity
/// norm, and returns `(1 - α)^{-1} (W ⊕ F W ⊕ … ⊕ F^{s-1} W)`. The result is
/// RPI and lies within `eps` (infinity norm) of the minimal RPI set.
pub fn mrpi_approx(f: &DMatrix<f64>, w: &Polytope, eps: f64) -> Result<Polytope> {
    let n = f.nrows();
    if f.ncols() != n || w.dim() != n {
        return Err(InvariantError::Dimensions(format!(
            "F is {}x{}, W dim {}",
            f.nrows(),
            f.ncols(),
            w.dim()
        )));
    }
    assert!(eps > 0.0, "approximation accuracy must be positive");
    let radius = linalg::spectral_radius(f);
    if radius >= 1.0 - linalg::SCHUR_MARGIN {
        return Err(InvariantError::NotSchur { radius });
    }
    if w.is_empty() || !w.contains(&DVector::zeros(n), 1e-12) {
        return Err(InvariantError::DisturbanceExcludesOrigin);
    }
    let (lo, hi) = w.bounding_box().map_err(|_| InvariantError::UnboundedDisturbance)?;
    if lo.amax().max(hi.amax()) <= 1e-14 {
        return Ok(Polytope::origin(n));
    }

    let rows: Vec<(DVector<f64>, f64)> = (0..w.num_rows())
        .map(|k| (w.normals().row(k).transpose(), w.offsets()[k]))
        .collect();
    // running per-axis partial sums of support values of F^i W
    let mut sum_pos = DVector::<f64>::zeros(n);
    let mut sum_neg = DVector::<f64>::zeros(n);
    let mut power = DMatrix::identity(n, n);
    let mut s = 0usize;
    let alpha = loop {
        for j in 0..n {
            let e = power.row(j).transpose();
            sum_pos[j] += w.support(&e)?;
            sum_neg[j] += w.support(&(-&e))?;
        }
        power = f * &power;
        s += 1;
        let m_s = sum_pos.amax().max(sum_neg.amax());
        let mut alpha: f64 = 0.0;
        for (normal, offset) in &rows {
            let h = w.support(&(power.transpose() * normal))?;
            if *offset <= 1e-14 {
                if h > 1e-14 {
                    alpha = f64::INFINITY;
                }
            } else {
                alpha = alpha.max(h / offset);
            }
        }
        if alpha <= eps / (eps + m_s) {
            break alpha;
        }
        if s > 10_000 {
            return Err(InvariantError::NotConverged {
                iterations: s,
                last: Box::new(w.clone()),
            });
        }
    };

    let mut sum = w.clone();
    let mut power = DMatrix::identity(n, n);
    for _ in 1..s {
        power = f * &power;
        sum = sum.minkowski_sum(&w.affine_image(&power)?)?;
    }
    Ok(sum.scale(1.0 / (1.0 - alpha)))
}

/// Check `F Z ⊕ W ⊆ Z` at `tol`.
pub fn certify_rpi(f: &DMatrix<f64>, w: &Polytope, z: &Polytope, tol: f64) -> Result<bool> {
    let image = z.affine_image(f)?.minkowski_sum(w)?;
    Ok(image.is_subset(z, tol)?)
}

/// Greatest fixed point of `Ω ↦ Ω ∩ Pre(Ω)` starting from the state set.
pub fn max_control_invariant<P: Predecessor>(dynamics: &P, max_iter: usize) -> Result<Polytope> {
    fixed_point_from(dynamics, dynamics.state_set().clone(), max_iter, SET_TOL)
}

/// Greatest fixed point below `seed`.
pub fn fixed_point_from<P: Predecessor>(dynamics: &P, seed: Polytope, max_iter: usize, tol: f64) -> Result<Polytope> {
    let mut omega = seed;
    for _ in 0..max_iter {
        if omega.is_empty() {
            return Ok(omega);
        }
        let next = omega.intersect(&dynamics.pre(&omega)?)?;
        if omega.is_subset(&next, tol)? {
            return Ok(next);
        }
        omega = next;
    }
    Err(InvariantError::NotConverged {
        iterations: max_iter,
        last: Box::new(omega),
    })
}

/// Directed mode-transition graph with per-mode minimum dwell times.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchGraph {
    dwell: Vec<usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl SwitchGraph {
    pub fn new(dwell: Vec<usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if dwell.is_empty() {
            return Err(InvariantError::InvalidGraph("no modes".into()));
        }
        if let Some(i) = dwell.iter().position(|&d| d == 0) {
            return Err(InvariantError::InvalidGraph(format!("mode {i} has zero dwell time")));
        }
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= dwell.len() || j >= dwell.len()) {
            return Err(InvariantError::InvalidGraph(format!("edge ({i}, {j}) uses an undeclared mode")));
        }
        Ok(SwitchGraph { dwell, edges })
    }

    /// Cycle `0 -> 1 -> ... -> n-1 -> 0` with a common dwell time.
    pub fn cycle(n: usize, dwell: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = if n > 1 { (0..n).map(|i| (i, (i + 1) % n)).collect() } else { vec![] };
        Self::new(vec![dwell; n], edges)
    }

    /// Every ordered pair of distinct modes.
    pub fn complete(n: usize, dwell: usize) -> Result<Self> {
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
        Self::new(vec![dwell; n], edges)
    }

    pub fn num_modes(&self) -> usize {
        self.dwell.len()
    }

    pub fn dwell(&self, mode: usize) -> usize {
        self.dwell[mode]
    }

    pub fn dwell_times(&self) -> &[usize] {
        &self.dwell
    }

    pub fn max_dwell(&self) -> usize {
        self.dwell.iter().copied().max().unwrap_or(1)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn successors(&self, mode: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(i, _)| *i == mode).map(|&(_, j)| j)
    }
}

#[derive(Clone, Debug)]
pub struct SwitchRciResult {
    pub sets: Vec<Polytope>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterates `Ω^0, Ω^1, …` when requested.
    pub history: Vec<Vec<Polytope>>,
}

#[derive(Clone, Copy, Debug)]
pub struct SwitchRciOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub keep_history: bool,
}

impl Default for SwitchRciOptions {
    fn default() -> Self {
        SwitchRciOptions {
            max_iter: DEFAULT_MAX_ITER,
            tol: SET_TOL,
            keep_history: false,
        }
    }
}

/// Switch-robust control invariant family by fixed-point iteration:
///
/// `Ω_i ← Ω_i ∩ Pre_i(Ω_i) ∩ ⋂_{(i,j)∈E} Pre_j^{d_j}(Ω_j)`
///
/// from `Ω_i = seeds[i]` until no set changes (bidirectional containment at
/// `opts.tol`). Seeding with the state sets gives the maximal family; seeding
/// with terminal regions gives a terminal family. A result that is not
/// converged is still returned, flagged.
pub fn switch_rci<P: Predecessor + Sync>(
    dynamics: &[P],
    graph: &SwitchGraph,
    seeds: &[Polytope],
    opts: SwitchRciOptions,
) -> Result<SwitchRciResult> {
    let modes = graph.num_modes();
    if dynamics.len() != modes || seeds.len() != modes {
        return Err(InvariantError::InvalidGraph(format!(
            "{} modes in graph, {} dynamics, {} seeds",
            modes,
            dynamics.len(),
            seeds.len()
        )));
    }
    for (i, (seed, dynamics)) in seeds.iter().zip(dynamics).enumerate() {
        if seed.dim() != dynamics.state_dim() {
            return Err(InvariantError::Dimensions(format!("seed {i} has dim {}", seed.dim())));
        }
        if !seed.is_subset(dynamics.state_set(), opts.tol)? {
            return Err(InvariantError::SeedNotAdmissible { mode: i });
        }
    }

    let mut omega: Vec<Polytope> = seeds.to_vec();
    let mut history = vec![];
    if opts.keep_history {
        history.push(omega.clone());
    }
    for iteration in 1..=opts.max_iter {
        // reachability targets Pre_j^{d_j}(Ω_j), shared by every predecessor of j
        let reach: Vec<Option<Polytope>> = (0..modes)
            .into_par_iter()
            .map(|j| {
                if graph.edges().any(|(_, to)| to == j) {
                    dynamics[j].pre_k(&omega[j], graph.dwell(j)).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let next: Vec<Polytope> = (0..modes)
            .into_par_iter()
            .map(|i| {
                let mut set = omega[i].intersect(&dynamics[i].pre(&omega[i])?)?;
                for j in graph.successors(i) {
                    let target = reach[j].as_ref().expect("successor has reach set");
                    set = set.intersect(target)?;
                }
                Ok(set)
            })
            .collect::<Result<_>>()?;
        if let Some(mode) = next.iter().position(|s| s.is_empty()) {
            return Err(InvariantError::EmptyFamily { mode });
        }
        let mut unchanged = true;
        for (old, new) in omega.iter().zip(&next) {
            if !old.is_subset(new, opts.tol)? {
                unchanged = false;
                break;
            }
        }
        omega = next;
        if opts.keep_history {
            history.push(omega.clone());
        }
        if unchanged {
            return Ok(SwitchRciResult {
                sets: omega,
                iterations: iteration,
                converged: true,
                history,
            });
        }
    }
    Ok(SwitchRciResult {
        sets: omega,
        iterations: opts.max_iter,
        converged: false,
        history,
    })
}

/// Outcome of the switch-RCI membership conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchCertificate {
    /// `C_i ⊆ X_i` and `C_i ⊆ Pre_i(C_i)` per mode.
    pub invariant: Vec<bool>,
    /// `C_i ⊆ Pre_j^{d_j}(C_j)` per edge.
    pub reachable: Vec<((usize, usize), bool)>,
}

impl SwitchCertificate {
    pub fn passed(&self) -> bool {
        self.invariant.iter().all(|&b| b) && self.reachable.iter().all(|(_, b)| *b)
    }
}

pub fn certify_switch_rci<P: Predecessor>(
    sets: &[Polytope],
    dynamics: &[P],
    graph: &SwitchGraph,
    tol: f64,
) -> Result<SwitchCertificate> {
    let mut invariant = vec![];
    for (set, dynamics) in sets.iter().zip(dynamics) {
        let inside = set.is_subset(dynamics.state_set(), tol)?;
        invariant.push(inside && set.is_subset(&dynamics.pre(set)?, tol)?);
    }
    let mut reachable = vec![];
    for (i, j) in graph.edges() {
        let target = dynamics[j].pre_k(&sets[j], graph.dwell(j))?;
        reachable.push(((i, j), sets[i].is_subset(&target, tol)?));
    }
    Ok(SwitchCertificate { invariant, reachable })
}

/// Initial-condition test: `x0 ∈ Pre_{mode0}^{delta0}(C_{mode0})`.
pub fn initial_condition_ok<P: Predecessor>(
    family: &SwitchRciResult,
    dynamics: &[P],
    x0: &DVector<f64>,
    mode0: usize,
    delta0: usize,
) -> Result<bool> {
    let set = family.sets.get(mode0).ok_or(InvariantError::UnknownMode(mode0))?;
    let dynamics = dynamics.get(mode0).ok_or(InvariantError::UnknownMode(mode0))?;
    let reach = dynamics.pre_k(set, delta0)?;
    Ok(reach.contains(x0, 1e-9))
}
