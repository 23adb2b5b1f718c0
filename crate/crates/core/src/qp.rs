//! Dense strictly convex quadratic programming.
//!
//! ```text
//! minimize    ½ x'Hx + f'x
//! subject to  A_eq x  = b_eq
//!             A_in x <= b_in
//! ```
//!
//! Solved with the dual active-set method of Goldfarb and Idnani: start from
//! the unconstrained minimizer and repeatedly add the most violated
//! constraint, dropping active constraints whose multipliers would turn
//! negative. No feasible starting point is needed and infeasibility is
//! detected when a violated constraint cannot be added. The final active set
//! is polished with one direct KKT solve.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::Polytope;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("active-set iteration limit ({0}) reached")]
    IterationLimit(usize),
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        QpProblem {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.dim();
        let ok = self.h.shape() == (n, n)
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_in.ncols() == n
            && self.a_in.nrows() == self.b_in.len();
        if !ok {
            return Err(QpError::Dimensions(format!(
                "H {}x{}, f {}, A_eq {}x{}, b_eq {}, A_in {}x{}, b_in {}",
                self.h.nrows(),
                self.h.ncols(),
                n,
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len(),
                self.a_in.nrows(),
                self.a_in.ncols(),
                self.b_in.len()
            )));
        }
        Ok(())
    }
}

/// Primal solution with multipliers in the convention
/// `H x + f + A_eq' λ_eq + A_in' λ_in = 0`, `λ_in ≥ 0`.
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Indices of active inequality rows.
    pub active: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    let grad = &p.h * &s.x + &p.f + p.a_eq.tr_mul(&s.lambda_eq) + p.a_in.tr_mul(&s.lambda_in);
    let eq = &p.a_eq * &s.x - &p.b_eq;
    let slack = &p.a_in * &s.x - &p.b_in;
    KktResiduals {
        stationarity: grad.amax(),
        primal: eq.amax().max(slack.iter().fold(0.0, |m, &v| m.max(v))),
        dual: s.lambda_in.iter().fold(0.0, |m, &v| m.max(-v)),
        complementarity: slack
            .iter()
            .zip(s.lambda_in.iter())
            .fold(0.0, |m, (&g, &l)| m.max((g * l).abs())),
    }
}

const FEAS_TOL: f64 = 1e-11;
const DEPENDENT_TOL: f64 = 1e-12;

/// One constraint in the internal form `n'x >= b`.
#[derive(Clone)]
struct Row {
    n: DVector<f64>,
    b: f64,
    /// Equality rows are never dropped; `sign` undoes the flip applied when
    /// they entered.
    equality: bool,
    sign: f64,
    source: usize,
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.check()?;
    let n = p.dim();
    let chol = p.h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let ginv = chol.inverse();

    let eq_rows: Vec<Row> = (0..p.a_eq.nrows())
        .map(|k| Row {
            n: p.a_eq.row(k).transpose(),
            b: p.b_eq[k],
            equality: true,
            sign: 1.0,
            source: k,
        })
        .collect();
    let in_rows: Vec<Row> = (0..p.a_in.nrows())
        .map(|k| Row {
            n: -p.a_in.row(k).transpose(),
            b: -p.b_in[k],
            equality: false,
            sign: 1.0,
            source: k,
        })
        .collect();

    let mut x = -(&ginv * &p.f);
    let mut active: Vec<Row> = vec![];
    let mut u: Vec<f64> = vec![];
    let limit = 50 * (p.a_in.nrows() + p.a_eq.nrows() + n) + 100;
    let mut iterations = 0usize;

    // equalities first: full steps, never dropped
    for row in &eq_rows {
        let mut row = row.clone();
        let s = row.n.dot(&x) - row.b;
        if s > 0.0 {
            row.n = -row.n;
            row.b = -row.b;
            row.sign = -1.0;
        }
        add_constraint(&ginv, &mut x, &mut active, &mut u, row, &mut iterations, limit)?;
    }

    let mut is_active = vec![false; in_rows.len()];
    loop {
        iterations += 1;
        if iterations > limit {
            return Err(QpError::IterationLimit(limit));
        }
        // most violated inequality, measured in the row norm
        let mut worst: Option<(usize, f64)> = None;
        for (k, row) in in_rows.iter().enumerate() {
            if is_active[k] {
                continue;
            }
            let norm = row.n.norm().max(1e-300);
            let s = (row.n.dot(&x) - row.b) / norm;
            if s < -FEAS_TOL * (1.0 + row.b.abs() / norm) && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((k, s));
            }
        }
        let Some((k, _)) = worst else { break };
        add_constraint(&ginv, &mut x, &mut active, &mut u, in_rows[k].clone(), &mut iterations, limit)?;
        is_active.iter_mut().for_each(|a| *a = false);
        for row in active.iter().filter(|r| !r.equality) {
            is_active[row.source] = true;
        }
    }

    polish(p, &mut x, &active, &mut u);

    let mut lambda_eq = DVector::zeros(p.a_eq.nrows());
    let mut lambda_in = DVector::zeros(p.a_in.nrows());
    let mut act = vec![];
    for (row, &mult) in active.iter().zip(&u) {
        if row.equality {
            // H x + f = u n  with  n = sign * a_eq
            lambda_eq[row.source] = -mult * row.sign;
        } else {
            lambda_in[row.source] = mult.max(0.0);
            act.push(row.source);
        }
    }
    act.sort_unstable();
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        lambda_eq,
        lambda_in,
        iterations,
        active: act,
    })
}

/// Step 2 of the dual method: bring `row` into the active set, dropping
/// blocking inequalities on the way.
fn add_constraint(
    ginv: &DMatrix<f64>,
    x: &mut DVector<f64>,
    active: &mut Vec<Row>,
    u: &mut Vec<f64>,
    row: Row,
    iterations: &mut usize,
    limit: usize,
) -> Result<(), QpError> {
    let mut u_new = 0.0;
    let scale = row.n.dot(&(ginv * &row.n)).max(1e-300);
    loop {
        *iterations += 1;
        if *iterations > limit {
            return Err(QpError::IterationLimit(limit));
        }
        let (z, r) = directions(ginv, active, &row.n);
        let s = row.n.dot(x) - row.b;
        if s >= 0.0 && !row.equality {
            // satisfied after earlier drops and steps
            return Ok(());
        }
        // dual step length: first inequality multiplier to hit zero
        let mut t1 = f64::INFINITY;
        let mut block = None;
        for (l, act) in active.iter().enumerate() {
            if !act.equality && r[l] > 0.0 {
                let t = u[l] / r[l];
                if t < t1 {
                    t1 = t;
                    block = Some(l);
                }
            }
        }
        let zn = z.dot(&row.n);
        if zn <= DEPENDENT_TOL * scale {
            // row is a combination of the active ones
            if row.equality && s.abs() <= 1e-9 * (1.0 + row.b.abs()) {
                return Ok(());
            }
            let Some(l) = block else {
                return Err(QpError::Infeasible);
            };
            for (k, uk) in u.iter_mut().enumerate() {
                *uk -= t1 * r[k];
            }
            u_new += t1;
            active.remove(l);
            u.remove(l);
            continue;
        }
        let t2 = -s / zn;
        let t = t1.min(t2);
        *x += &z * t;
        for (k, uk) in u.iter_mut().enumerate() {
            *uk -= t * r[k];
        }
        u_new += t;
        if t2 <= t1 {
            active.push(row);
            u.push(u_new);
            return Ok(());
        }
        let l = block.expect("finite partial step has a blocking row");
        active.remove(l);
        u.remove(l);
    }
}

/// Primal direction `z = H⁺ n` and multiplier change `r = N* n` for the
/// current active set.
fn directions(ginv: &DMatrix<f64>, active: &[Row], np: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let q = active.len();
    let gn = ginv * np;
    if q == 0 {
        return (gn, DVector::zeros(0));
    }
    let n = np.len();
    let mut nmat = DMatrix::zeros(n, q);
    for (k, row) in active.iter().enumerate() {
        nmat.set_column(k, &row.n);
    }
    let gnm = ginv * &nmat;
    let m = nmat.tr_mul(&gnm);
    let rhs = nmat.tr_mul(&gn);
    let r = match m.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
    };
    let z = gn - gnm * &r;
    (z, r)
}

/// Re-solve the KKT system of the final active set; keep the result only if
/// it is at least as consistent as the iterate.
fn polish(p: &QpProblem, x: &mut DVector<f64>, active: &[Row], u: &mut [f64]) {
    let n = p.dim();
    let q = active.len();
    let mut kkt = DMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-&p.f));
    for (k, row) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + k)] = -row.n[j];
            kkt[(n + k, j)] = row.n[j];
        }
        rhs[n + k] = row.b;
    }
    let Some(sol) = kkt.lu().solve(&rhs) else { return };
    let cand_x = sol.rows(0, n).into_owned();
    let cand_u: Vec<f64> = sol.rows(n, q).iter().copied().collect();
    if cand_x.iter().chain(cand_u.iter()).any(|v| !v.is_finite()) {
        return;
    }
    let dual_ok = active.iter().zip(&cand_u).all(|(r, &m)| r.equality || m >= -1e-10);
    let feas = |x: &DVector<f64>| {
        let eq = (&p.a_eq * x - &p.b_eq).amax();
        let ineq = (&p.a_in * x - &p.b_in).iter().fold(0.0f64, |m, &v| m.max(v));
        eq.max(ineq)
    };
    if dual_ok && feas(&cand_x) <= feas(x).max(1e-12) {
        *x = cand_x;
        u.copy_from_slice(&cand_u);
    }
}

/// Euclidean projection of `v` onto a bounded polytope.
pub fn project_onto(p: &Polytope, v: &DVector<f64>) -> Result<DVector<f64>, QpError> {
    let n = v.len();
    let problem = QpProblem::new(DMatrix::identity(n, n), -v.clone())
        .with_inequalities(p.normals().clone(), p.offsets().clone());
    Ok(solve_qp(&problem)?.x)
}
