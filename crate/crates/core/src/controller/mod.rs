//! Per-subsystem tube-based switched MPC: offline design of gains, weights
//! and mode-indexed sets, and the online local optimal control problem.

mod ocp;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{GeometryError, Polytope, SET_TOL};
use crate::invariants::{
    self, certify_switch_rci, ClosedLoopDynamics, InvariantError, ModeDynamics, SwitchCertificate, SwitchGraph,
    SwitchRciOptions, SwitchRciResult,
};
use crate::linalg;
use crate::lp;
use crate::model::Coupling;

pub use ocp::{
    control_input, shift_reference, solve_local_ocp, terminal_start, ConstraintFamily, LocalSolution, OcpError, ReferenceTrajectory,
};

#[derive(Debug, Error, Clone)]
pub enum DesignError {
    #[error("pair (A, B) is not stabilizable")]
    Unstabilizable,
    #[error("Riccati iteration did not converge")]
    RiccatiNotConverged,
    #[error("closed loop is not Schur (spectral radius {0:.6})")]
    NotSchur(f64),
    /// `set` is one of `Xhat`, `Uhat`, `dE`, `dU`, `Xf` (terminal region)
    /// and `T` (terminal switch set).
    #[error("subsystem {}, mode {}: {set} is empty", .subsystem + 1, .mode + 1)]
    EmptySet {
        subsystem: usize,
        mode: usize,
        set: &'static str,
    },
    #[error("subsystem {}: terminal family did not converge in {iterations} iterations", .subsystem + 1)]
    TerminalNotConverged { subsystem: usize, iterations: usize },
    #[error("subsystem {}: {source}", .subsystem + 1)]
    Invariant {
        subsystem: usize,
        #[source]
        source: InvariantError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, DesignError>;

/// Infinite-horizon LQ gain with `u = K x`.
pub fn design_feedback_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if m == 0 {
        let radius = linalg::spectral_radius(a);
        return if radius < 1.0 - linalg::SCHUR_MARGIN {
            Ok(DMatrix::zeros(0, n))
        } else {
            Err(DesignError::Unstabilizable)
        };
    }
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let gain = s.lu().solve(&(&btp * a)).ok_or(DesignError::RiccatiNotConverged)?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e14 {
            return Err(DesignError::Unstabilizable);
        }
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-13 * (1.0 + p.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DesignError::RiccatiNotConverged);
    }
    let btp = b.transpose() * &p;
    let k = -(r + &btp * b).lu().solve(&(&btp * a)).ok_or(DesignError::RiccatiNotConverged)?;
    let radius = linalg::spectral_radius(&(a + b * &k));
    if radius >= 1.0 - linalg::SCHUR_MARGIN {
        return Err(DesignError::Unstabilizable);
    }
    Ok(k)
}

/// `P` with `F' P F - P = -(Q + K' R K)`.
pub fn terminal_weight(f: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let radius = linalg::spectral_radius(f);
    if radius >= 1.0 - linalg::SCHUR_MARGIN {
        return Err(DesignError::NotSchur(radius));
    }
    let stage = q + k.transpose() * r * k;
    linalg::discrete_lyapunov(f, &stage).ok_or(DesignError::NotSchur(radius))
}

/// Tube and tightened sets of one mode.
#[derive(Clone, Debug)]
pub struct ModeSets {
    pub w: Polytope,
    pub z: Polytope,
    pub kz: Polytope,
    pub xhat: Polytope,
    pub uhat: Polytope,
    /// Allowed deviation from the broadcast reference (state, input); absent
    /// when no reference is exchanged.
    pub de: Option<Polytope>,
    pub du: Option<Polytope>,
}

/// Reference-deviation budgets `E`, `Eu`, when references are exchanged.
#[derive(Clone, Copy, Debug)]
pub struct TubeBudget<'a> {
    pub e: &'a Polytope,
    pub eu: &'a Polytope,
}

#[allow(clippy::too_many_arguments)]
pub fn compute_mode_sets(
    subsystem: usize,
    mode: usize,
    f: &DMatrix<f64>,
    k: &DMatrix<f64>,
    state_set: &Polytope,
    input_set: &Polytope,
    w: &Polytope,
    budget: Option<TubeBudget<'_>>,
    eps: f64,
) -> Result<ModeSets> {
    let empty = |set| DesignError::EmptySet { subsystem, mode, set };
    let z = invariants::mrpi_approx(f, w, eps).map_err(|source| DesignError::Invariant { subsystem, source })?;
    let kz = z.affine_image(k)?;
    let xhat = state_set.pontryagin_diff(&z)?;
    if xhat.is_empty() {
        return Err(empty("Xhat"));
    }
    let uhat = input_set.pontryagin_diff(&kz)?;
    if uhat.is_empty() {
        return Err(empty("Uhat"));
    }
    let (de, du) = match budget {
        Some(TubeBudget { e, eu }) => {
            let de = e.pontryagin_diff(&z)?;
            if de.is_empty() {
                return Err(empty("dE"));
            }
            let du = eu.pontryagin_diff(&kz)?;
            if du.is_empty() {
                return Err(empty("dU"));
            }
            (Some(de), Some(du))
        }
        None => (None, None),
    };
    Ok(ModeSets {
        w: w.clone(),
        z,
        kz,
        xhat,
        uhat,
        de,
        du,
    })
}

/// Maximal positively invariant set of `x+ = F x` inside
/// `Xhat ∩ {x : K x ∈ Uhat}`.
pub fn terminal_region_seed(
    f: &DMatrix<f64>,
    k: &DMatrix<f64>,
    xhat: &Polytope,
    uhat: &Polytope,
    max_iter: usize,
) -> std::result::Result<Polytope, InvariantError> {
    let admissible = xhat.intersect(&uhat.preimage(k)?)?;
    let closed = ClosedLoopDynamics {
        f: f.clone(),
        admissible: admissible.clone(),
    };
    invariants::fixed_point_from(&closed, admissible, max_iter, SET_TOL)
}

/// Which predecessor operator the terminal family is built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredecessorKind {
    /// `∃u ∈ Û` (projection based; low state dimension).
    Controlled,
    /// `u = K x` folded into the constraints (any dimension).
    ClosedLoop,
}

/// Data for one design mode.
#[derive(Clone, Debug)]
pub struct ModeInput {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: Polytope,
}

#[derive(Clone, Debug)]
pub struct ModeBundle {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub sets: ModeSets,
    pub seed: Polytope,
    pub terminal: Polytope,
}

#[derive(Clone, Debug)]
pub struct DesignOptions {
    pub horizon: usize,
    pub mrpi_eps: f64,
    pub max_iter: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            horizon: 5,
            mrpi_eps: 1e-3,
            max_iter: invariants::DEFAULT_MAX_ITER,
        }
    }
}

/// Weights and tube budgets of one controller.
#[derive(Clone, Debug)]
pub struct LocalTuning {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub e: Polytope,
    pub eu: Polytope,
}

/// Everything a local controller needs online.
#[derive(Clone, Debug)]
pub struct LocalDesign {
    pub index: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub state_set: Polytope,
    pub input_set: Polytope,
    pub e: Polytope,
    pub eu: Polytope,
    pub couplings: BTreeMap<usize, Coupling>,
    pub modes: Vec<ModeBundle>,
    /// Global mode to design mode.
    pub mode_map: Vec<usize>,
    pub graph: SwitchGraph,
    pub uses_references: bool,
    pub predecessor: PredecessorKind,
    pub terminal_iterations: usize,
}

/// Inputs of [`design_controller`] beyond the per-mode data.
#[derive(Clone, Debug)]
pub struct DesignRequest {
    pub index: usize,
    pub modes: Vec<ModeInput>,
    pub state_set: Polytope,
    pub input_set: Polytope,
    pub tuning: LocalTuning,
    pub graph: SwitchGraph,
    pub mode_map: Vec<usize>,
    pub couplings: BTreeMap<usize, Coupling>,
    pub uses_references: bool,
    pub predecessor: PredecessorKind,
}

pub fn design_controller(req: DesignRequest, opts: &DesignOptions) -> Result<LocalDesign> {
    let i = req.index;
    let budget = req.uses_references.then_some(TubeBudget {
        e: &req.tuning.e,
        eu: &req.tuning.eu,
    });
    let mut bundles = Vec::with_capacity(req.modes.len());
    for (m, input) in req.modes.iter().enumerate() {
        let k = design_feedback_gain(&input.a, &input.b, &req.tuning.q, &req.tuning.r)?;
        let f = &input.a + &input.b * &k;
        let p = terminal_weight(&f, &req.tuning.q, &req.tuning.r, &k)?;
        let sets = compute_mode_sets(i, m, &f, &k, &req.state_set, &req.input_set, &input.w, budget, opts.mrpi_eps)?;
        let seed = terminal_region_seed(&f, &k, &sets.xhat, &sets.uhat, opts.max_iter)
            .map_err(|source| DesignError::Invariant { subsystem: i, source })?;
        if seed.is_empty() {
            return Err(DesignError::EmptySet {
                subsystem: i,
                mode: m,
                set: "Xf",
            });
        }
        bundles.push(ModeBundle {
            a: input.a.clone(),
            b: input.b.clone(),
            k,
            f,
            p,
            sets,
            terminal: seed.clone(),
            seed,
        });
    }
    let seeds: Vec<Polytope> = bundles.iter().map(|b| b.seed.clone()).collect();
    let family = terminal_switch_sets(&bundles, &seeds, &req.graph, req.predecessor, opts.max_iter)
        .map_err(|source| match source {
            InvariantError::EmptyFamily { mode } => DesignError::EmptySet {
                subsystem: i,
                mode,
                set: "T",
            },
            source => DesignError::Invariant { subsystem: i, source },
        })?;
    if !family.converged {
        return Err(DesignError::TerminalNotConverged {
            subsystem: i,
            iterations: family.iterations,
        });
    }
    for (bundle, t) in bundles.iter_mut().zip(family.sets) {
        bundle.terminal = t;
    }
    Ok(LocalDesign {
        index: i,
        q: req.tuning.q,
        r: req.tuning.r,
        horizon: opts.horizon,
        state_set: req.state_set,
        input_set: req.input_set,
        e: req.tuning.e,
        eu: req.tuning.eu,
        couplings: req.couplings,
        modes: bundles,
        mode_map: req.mode_map,
        graph: req.graph,
        uses_references: req.uses_references,
        predecessor: req.predecessor,
        terminal_iterations: family.iterations,
    })
}

/// Nominal dynamics of each bundle with its tightened constraints.
pub fn nominal_dynamics(bundles: &[ModeBundle]) -> Vec<ModeDynamics> {
    bundles
        .iter()
        .map(|b| {
            ModeDynamics::new(b.a.clone(), b.b.clone(), b.sets.xhat.clone(), b.sets.uhat.clone())
                .expect("bundle dimensions are consistent")
        })
        .collect()
}

fn closed_loop_dynamics(bundles: &[ModeBundle]) -> std::result::Result<Vec<ClosedLoopDynamics>, InvariantError> {
    nominal_dynamics(bundles)
        .iter()
        .zip(bundles)
        .map(|(d, b)| ClosedLoopDynamics::new(d, &b.k))
        .collect()
}

/// Terminal switch family: the switch-invariant iteration seeded with the
/// terminal regions.
pub fn terminal_switch_sets(
    bundles: &[ModeBundle],
    seeds: &[Polytope],
    graph: &SwitchGraph,
    kind: PredecessorKind,
    max_iter: usize,
) -> std::result::Result<SwitchRciResult, InvariantError> {
    let opts = SwitchRciOptions {
        max_iter,
        ..Default::default()
    };
    match kind {
        PredecessorKind::Controlled => invariants::switch_rci(&nominal_dynamics(bundles), graph, seeds, opts),
        PredecessorKind::ClosedLoop => invariants::switch_rci(&closed_loop_dynamics(bundles)?, graph, seeds, opts),
    }
}

/// Design-time certificates.
#[derive(Clone, Debug)]
pub struct DesignCertificates {
    /// `F Z ⊕ W ⊆ Z` per mode.
    pub rpi: Vec<bool>,
    /// `ΔE ⊕ Z ⊆ E` and `ΔU ⊕ K Z ⊆ Eu` per mode (true when unused).
    pub budgets: Vec<bool>,
    pub terminal: SwitchCertificate,
}

impl DesignCertificates {
    pub fn passed(&self) -> bool {
        self.rpi.iter().all(|&b| b) && self.budgets.iter().all(|&b| b) && self.terminal.passed()
    }
}

impl LocalDesign {
    pub fn bundle(&self, global_mode: usize) -> &ModeBundle {
        &self.modes[self.mode_map[global_mode]]
    }

    pub fn n_x(&self) -> usize {
        self.state_set.dim()
    }

    pub fn n_u(&self) -> usize {
        self.input_set.dim()
    }

    pub fn certify(&self, tol: f64) -> std::result::Result<DesignCertificates, InvariantError> {
        let mut rpi = vec![];
        let mut budgets = vec![];
        for b in &self.modes {
            rpi.push(invariants::certify_rpi(&b.f, &b.sets.w, &b.sets.z, tol)?);
            let ok = match (&b.sets.de, &b.sets.du) {
                (Some(de), Some(du)) => {
                    de.minkowski_sum(&b.sets.z)?.is_subset(&self.e, tol)?
                        && du.minkowski_sum(&b.sets.kz)?.is_subset(&self.eu, tol)?
                }
                _ => true,
            };
            budgets.push(ok);
        }
        let terminals: Vec<Polytope> = self.modes.iter().map(|b| b.terminal.clone()).collect();
        let terminal = match self.predecessor {
            PredecessorKind::Controlled => {
                certify_switch_rci(&terminals, &nominal_dynamics(&self.modes), &self.graph, tol)?
            }
            PredecessorKind::ClosedLoop => {
                certify_switch_rci(&terminals, &closed_loop_dynamics(&self.modes)?, &self.graph, tol)?
            }
        };
        Ok(DesignCertificates { rpi, budgets, terminal })
    }

    /// Maximal switch-invariant family of the tightened nominal dynamics.
    pub fn maximal_family(&self, max_iter: usize) -> std::result::Result<SwitchRciResult, InvariantError> {
        let seeds: Vec<Polytope> = self.modes.iter().map(|b| b.sets.xhat.clone()).collect();
        let opts = SwitchRciOptions {
            max_iter,
            ..Default::default()
        };
        match self.predecessor {
            PredecessorKind::Controlled => invariants::switch_rci(&nominal_dynamics(&self.modes), &self.graph, &seeds, opts),
            PredecessorKind::ClosedLoop => {
                let closed = closed_loop_dynamics(&self.modes)?;
                let seeds: Vec<Polytope> = closed.iter().map(|c| c.admissible.clone()).collect();
                invariants::switch_rci(&closed, &self.graph, &seeds, opts)
            }
        }
    }

    /// Initial-condition test on the real state: some nominal state within
    /// the tube around `x0` reaches the family set of the current mode in
    /// `delta0` steps through the tightened sets, i.e.
    /// `x0 ∈ Pre^δ0(C) ⊕ Z`. Decided exactly by one linear program.
    pub fn initial_condition_ok(
        &self,
        family: &SwitchRciResult,
        x0: &DVector<f64>,
        global_mode: usize,
        delta0: usize,
    ) -> std::result::Result<bool, InvariantError> {
        let m = self.mode_map[global_mode];
        let target = family.sets.get(m).ok_or(InvariantError::UnknownMode(m))?;
        Ok(can_reach(&self.modes[m], x0, target, delta0)?)
    }
}

/// Whether `x0 ∈ Pre^steps(target) ⊕ Z` for the nominal dynamics of
/// `bundle` constrained to its tightened sets.
pub fn can_reach(
    bundle: &ModeBundle,
    x0: &DVector<f64>,
    target: &Polytope,
    steps: usize,
) -> std::result::Result<bool, GeometryError> {
    if target.is_empty() {
        return Ok(false);
    }
    let n = bundle.a.nrows();
    let m = bundle.b.ncols();
    let nz = n + steps * m;
    let sets = &bundle.sets;
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = vec![];
    // x̂_k = Φ_k z with z = (x̂0, u_0, ..., u_{steps-1})
    let mut phi = DMatrix::zeros(n, nz);
    phi.view_mut((0, 0), (n, n)).fill_with_identity();
    rows.push((-(sets.z.normals() * &phi), sets.z.offsets() - sets.z.normals() * x0));
    for k in 0..steps {
        let mut sel = DMatrix::zeros(m, nz);
        sel.view_mut((0, n + k * m), (m, m)).fill_with_identity();
        rows.push((sets.xhat.normals() * &phi, sets.xhat.offsets().clone()));
        rows.push((sets.uhat.normals() * &sel, sets.uhat.offsets().clone()));
        phi = &bundle.a * &phi + &bundle.b * &sel;
    }
    rows.push((target.normals() * &phi, target.offsets().clone()));
    let total: usize = rows.iter().map(|r| r.0.nrows()).sum();
    let mut a = DMatrix::zeros(total, nz);
    let mut b = DVector::zeros(total);
    let mut at = 0;
    for (ra, rb) in rows {
        a.view_mut((at, 0), (ra.nrows(), nz)).copy_from(&ra);
        b.rows_mut(at, ra.nrows()).copy_from(&rb);
        at += ra.nrows();
    }
    let (_, margin) = lp::max_margin(&a, &b, 1.0).map_err(GeometryError::from)?;
    Ok(margin >= -1e-9)
}
