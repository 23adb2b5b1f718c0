use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use super::LocalDesign;
use crate::geometry::Polytope;
use crate::qp::{self, QpError, QpProblem};

/// Constraint families of the local problem, in the order they are added
/// when an infeasibility is traced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// Real state inside the tube around the nominal initial state.
    Tube,
    /// Nominal state and input inside the tightened sets.
    Tightened,
    /// Nominal state close to the broadcast state reference.
    ReferenceState,
    /// Nominal input close to the broadcast input reference.
    ReferenceInput,
    /// Nominal state in the terminal set once the dwell time has elapsed.
    Terminal,
}

impl ConstraintFamily {
    pub const ORDER: [ConstraintFamily; 5] = [
        ConstraintFamily::Tube,
        ConstraintFamily::Tightened,
        ConstraintFamily::ReferenceState,
        ConstraintFamily::ReferenceInput,
        ConstraintFamily::Terminal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintFamily::Tube => "tube",
            ConstraintFamily::Tightened => "tightened",
            ConstraintFamily::ReferenceState => "reference_state",
            ConstraintFamily::ReferenceInput => "reference_input",
            ConstraintFamily::Terminal => "terminal",
        }
    }
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone)]
pub enum OcpError {
    #[error("local problem infeasible once the {family} constraints are added")]
    Infeasible { family: ConstraintFamily },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("QP solver: {0}")]
    Solver(QpError),
}

/// Broadcast plan: `N` states and `N` inputs, entry `k` belongs to time
/// `t + k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LocalSolution {
    /// `x̂(0..=N)`.
    pub states: Vec<DVector<f64>>,
    /// `û(0..N)`.
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
    pub qp_iterations: usize,
}

impl LocalSolution {
    pub fn nominal_initial(&self) -> &DVector<f64> {
        &self.states[0]
    }
}

struct Rows {
    family: ConstraintFamily,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Affine map `z ↦ Φ z + γ`.
struct Affine {
    phi: DMatrix<f64>,
    gamma: DVector<f64>,
}

/// `G (Φ z + γ − shift) ≤ g` as rows in `z`.
fn rows_over(set: &Polytope, map: &Affine, shift: Option<&DVector<f64>>) -> (DMatrix<f64>, DVector<f64>) {
    let mut rhs = set.offsets() - set.normals() * &map.gamma;
    if let Some(s) = shift {
        rhs += set.normals() * s;
    }
    (set.normals() * &map.phi, rhs)
}

/// Tube-based local problem at the current real state `x` in global mode
/// `mode` with remaining dwell `delta`.
///
/// `own_reference` activates the reference-fidelity constraints,
/// `neighbor_references` supplies the predicted coupling injection
/// `Σ_j A_ij x̃_j(k) + B_ij ũ_j(k)`.
pub fn solve_local_ocp(
    design: &LocalDesign,
    x: &DVector<f64>,
    own_reference: Option<&ReferenceTrajectory>,
    neighbor_references: &BTreeMap<usize, &ReferenceTrajectory>,
    mode: usize,
    delta: usize,
) -> Result<LocalSolution, OcpError> {
    let n = design.n_x();
    let m = design.n_u();
    let horizon = design.horizon;
    let bundle = design.bundle(mode);
    let sets = &bundle.sets;
    if x.len() != n {
        return Err(OcpError::Dimensions(format!("state has length {}, expected {n}", x.len())));
    }
    for (name, r) in own_reference.map(|r| ("own", r)).into_iter().chain(neighbor_references.values().map(|r| ("neighbour", *r))) {
        if r.states.len() < horizon || r.inputs.len() < horizon {
            return Err(OcpError::Dimensions(format!("{name} reference shorter than the horizon")));
        }
    }

    let mut injection = vec![DVector::zeros(n); horizon];
    for (&j, r) in neighbor_references {
        let c = design
            .couplings
            .get(&j)
            .ok_or_else(|| OcpError::Dimensions(format!("no coupling declared for neighbour {j}")))?;
        for (k, inj) in injection.iter_mut().enumerate() {
            *inj += &c.a * &r.states[k] + &c.b * &r.inputs[k];
        }
    }

    // a singleton tube pins the nominal initial state to the real one
    let pinned = sets.z.bounding_box().map(|(lo, hi)| (hi - lo).amax() <= 1e-12).unwrap_or(false);
    let free_x0 = if pinned { 0 } else { n };
    let nz = free_x0 + horizon * m;
    let input_sel = |k: usize| {
        let mut s = DMatrix::zeros(m, nz);
        s.view_mut((0, free_x0 + k * m), (m, m)).fill_with_identity();
        s
    };

    let mut maps = Vec::with_capacity(horizon + 1);
    maps.push(if pinned {
        Affine {
            phi: DMatrix::zeros(n, nz),
            gamma: x.clone(),
        }
    } else {
        let mut phi = DMatrix::zeros(n, nz);
        phi.view_mut((0, 0), (n, n)).fill_with_identity();
        Affine {
            phi,
            gamma: DVector::zeros(n),
        }
    });
    for k in 0..horizon {
        let prev = &maps[k];
        maps.push(Affine {
            phi: &bundle.a * &prev.phi + &bundle.b * input_sel(k),
            gamma: &bundle.a * &prev.gamma + &injection[k],
        });
    }

    let mut h = DMatrix::zeros(nz, nz);
    let mut f = DVector::zeros(nz);
    let mut constant = 0.0;
    for k in 0..=horizon {
        let w = if k == horizon { &bundle.p } else { &design.q };
        let map = &maps[k];
        let wphi = w * &map.phi;
        h += map.phi.transpose() * &wphi * 2.0;
        f += wphi.transpose() * &map.gamma * 2.0;
        constant += map.gamma.dot(&(w * &map.gamma));
        if k < horizon {
            let s = input_sel(k);
            h += s.transpose() * &design.r * &s * 2.0;
        }
    }
    let h = (&h + h.transpose()) * 0.5;

    let mut families: Vec<Rows> = vec![];
    let mut push = |family, (a, b): (DMatrix<f64>, DVector<f64>)| families.push(Rows { family, a, b });
    if !pinned {
        // G_Z (x − x̂0) ≤ g_Z
        let tube = Affine {
            phi: -&maps[0].phi,
            gamma: x.clone(),
        };
        push(ConstraintFamily::Tube, rows_over(&sets.z, &tube, None));
    }
    for k in 0..horizon {
        push(ConstraintFamily::Tightened, rows_over(&sets.xhat, &maps[k], None));
        let u_map = Affine {
            phi: input_sel(k),
            gamma: DVector::zeros(m),
        };
        push(ConstraintFamily::Tightened, rows_over(&sets.uhat, &u_map, None));
        if let (Some(r), Some(de), Some(du)) = (own_reference, &sets.de, &sets.du) {
            push(ConstraintFamily::ReferenceState, rows_over(de, &maps[k], Some(&r.states[k])));
            push(ConstraintFamily::ReferenceInput, rows_over(du, &u_map, Some(&r.inputs[k])));
        }
    }
    let first_terminal = terminal_start(design, mode, delta);
    for map in maps.iter().skip(first_terminal) {
        push(ConstraintFamily::Terminal, rows_over(&bundle.terminal, map, None));
    }

    // rows without decision variables are checked directly
    let mut kept: Vec<Rows> = vec![];
    for rows in families {
        let mut keep = vec![];
        for r in 0..rows.a.nrows() {
            if rows.a.row(r).amax() <= 1e-14 {
                if rows.b[r] < -1e-9 {
                    return Err(OcpError::Infeasible { family: rows.family });
                }
            } else {
                keep.push(r);
            }
        }
        kept.push(Rows {
            family: rows.family,
            a: rows.a.select_rows(&keep),
            b: rows.b.select_rows(&keep),
        });
    }

    let build = |upto: Option<usize>| {
        let chosen: Vec<&Rows> = kept
            .iter()
            .filter(|r| upto.is_none_or(|u| ConstraintFamily::ORDER[..=u].contains(&r.family)))
            .collect();
        let total: usize = chosen.iter().map(|r| r.a.nrows()).sum();
        let mut a = DMatrix::zeros(total, nz);
        let mut b = DVector::zeros(total);
        let mut row = 0;
        for r in chosen {
            a.view_mut((row, 0), (r.a.nrows(), nz)).copy_from(&r.a);
            b.rows_mut(row, r.a.nrows()).copy_from(&r.b);
            row += r.a.nrows();
        }
        QpProblem::new(h.clone(), f.clone()).with_inequalities(a, b)
    };

    let sol = match qp::solve_qp(&build(None)) {
        Ok(sol) => sol,
        Err(QpError::Infeasible) => {
            for (idx, family) in ConstraintFamily::ORDER.iter().enumerate() {
                if matches!(qp::solve_qp(&build(Some(idx))), Err(QpError::Infeasible)) {
                    return Err(OcpError::Infeasible { family: *family });
                }
            }
            return Err(OcpError::Infeasible {
                family: ConstraintFamily::Terminal,
            });
        }
        Err(e) => return Err(OcpError::Solver(e)),
    };

    let states: Vec<DVector<f64>> = maps.iter().map(|map| &map.phi * &sol.x + &map.gamma).collect();
    let inputs: Vec<DVector<f64>> = (0..horizon).map(|k| sol.x.rows(free_x0 + k * m, m).into_owned()).collect();
    Ok(LocalSolution {
        states,
        inputs,
        cost: sol.objective + constant,
        qp_iterations: sol.iterations,
    })
}

/// First prediction step bound to the terminal set: the remaining dwell
/// time, or the horizon end when the design has no other mode to switch to.
pub fn terminal_start(design: &LocalDesign, mode: usize, delta: usize) -> usize {
    let current = design.mode_map[mode];
    if design.graph.successors(current).any(|j| j != current) {
        delta.min(design.horizon)
    } else {
        design.horizon
    }
}

/// `u = û(0) + K (x − x̂(0))`.
pub fn control_input(x: &DVector<f64>, solution: &LocalSolution, k: &DMatrix<f64>) -> DVector<f64> {
    &solution.inputs[0] + k * (x - solution.nominal_initial())
}

/// Next broadcast plan: the optimal nominal trajectory advanced one step,
/// padded with the terminal feedback.
pub fn shift_reference(solution: &LocalSolution, k: &DMatrix<f64>) -> ReferenceTrajectory {
    let horizon = solution.inputs.len();
    let states = solution.states[1..=horizon].to_vec();
    let mut inputs = solution.inputs[1..].to_vec();
    inputs.push(k * &solution.states[horizon]);
    ReferenceTrajectory { states, inputs }
}

impl ReferenceTrajectory {
    /// Advance a stale plan one step by propagating its last state with the
    /// closed loop `F`.
    pub fn advance(&self, f: &DMatrix<f64>, k: &DMatrix<f64>) -> ReferenceTrajectory {
        let last = self.states.last().cloned().unwrap_or_else(|| DVector::zeros(f.nrows()));
        let mut states = self.states[1..].to_vec();
        let mut inputs = self.inputs[1..].to_vec();
        inputs.push(k * &last);
        states.push(f * &last);
        ReferenceTrajectory { states, inputs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{design_controller, DesignOptions, DesignRequest, LocalTuning, ModeInput, PredecessorKind};
    use crate::invariants::SwitchGraph;

    fn scalar_design(w: f64, a: f64, horizon: usize) -> LocalDesign {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let unit = Polytope::bounds(&[-1.0], &[1.0]).unwrap();
        let w = if w == 0.0 { Polytope::origin(1) } else { Polytope::bounds(&[-w], &[w]).unwrap() };
        design_controller(
            DesignRequest {
                index: 0,
                modes: vec![ModeInput { a: s(a), b: s(1.0), w }],
                state_set: unit.clone(),
                input_set: unit.clone(),
                tuning: LocalTuning {
                    q: s(1.0),
                    r: s(1.0),
                    e: unit.scale(0.5),
                    eu: unit.scale(0.5),
                },
                graph: SwitchGraph::new(vec![1], []).unwrap(),
                mode_map: vec![0],
                couplings: BTreeMap::new(),
                uses_references: false,
                predecessor: PredecessorKind::Controlled,
            },
            &DesignOptions {
                horizon,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let d = scalar_design(0.0, 1.0, 5);
        let sol = solve_local_ocp(&d, &DVector::zeros(1), None, &BTreeMap::new(), 0, 1).unwrap();
        assert!(sol.cost.abs() < 1e-12);
        assert!(sol.inputs.iter().all(|u| u.amax() < 1e-12));
        let u = control_input(&DVector::zeros(1), &sol, &d.modes[0].k);
        assert!(u.amax() < 1e-12);
    }

    #[test]
    fn pinned_unconstrained_matches_riccati_feedback() {
        // with Z = {0}, a small state and N large the first input is the LQ gain
        let d = scalar_design(0.0, 1.2, 8);
        let x = DVector::from_element(1, 0.05);
        let sol = solve_local_ocp(&d, &x, None, &BTreeMap::new(), 0, 1).unwrap();
        let k = d.modes[0].k[(0, 0)];
        assert!((sol.inputs[0][0] - k * 0.05).abs() < 1e-9);
        assert!((sol.cost - d.modes[0].p[(0, 0)] * 0.0025).abs() < 1e-9);
    }

    #[test]
    fn shift_pads_with_feedback() {
        let sol = LocalSolution {
            states: (0..4).map(|k| DVector::from_element(1, k as f64)).collect(),
            inputs: (0..3).map(|k| DVector::from_element(1, 10.0 + k as f64)).collect(),
            cost: 0.0,
            qp_iterations: 0,
        };
        let r = shift_reference(&sol, &DMatrix::from_element(1, 1, -0.5));
        assert_eq!(r.states.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        assert_eq!(r.inputs.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![11.0, 12.0, -1.5]);
    }

    #[test]
    fn infeasibility_is_named() {
        let d = scalar_design(0.05, 1.0, 3);
        let far = DVector::from_element(1, 5.0);
        let err = solve_local_ocp(&d, &far, None, &BTreeMap::new(), 0, 1).unwrap_err();
        assert!(matches!(err, OcpError::Infeasible { family: ConstraintFamily::Tightened }), "{err:?}");
    }

    #[test]
    fn tube_constraint_holds() {
        let d = scalar_design(0.05, 1.0, 4);
        let x = DVector::from_element(1, 0.7);
        let sol = solve_local_ocp(&d, &x, None, &BTreeMap::new(), 0, 1).unwrap();
        let diff = &x - sol.nominal_initial();
        assert!(d.modes[0].sets.z.contains(&diff, 1e-7));
        for s in &sol.states[1..] {
            assert!(d.modes[0].terminal.contains(s, 1e-7));
        }
    }
}
