//! Small dense linear programs.
//!
//! Every set operation in this crate reduces to problems of the form
//!
//! ```text
//!     maximize    c'x
//!     subject to  A x <= b        (x free)
//! ```
//!
//! with few variables (the ambient dimension, at most ~12 here) and possibly
//! many rows. The solver works on the dual
//!
//! ```text
//!     minimize    b'y
//!     subject to  A'y = c,  y >= 0
//! ```
//!
//! whose basis is only `n x n`, using a two-phase revised simplex with an
//! explicitly re-factored basis each pivot. The primal optimizer is recovered
//! as the simplex multipliers of the equality rows.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const REDUCED_COST_TOL: f64 = 1e-11;
/// Pricing tolerance once the objective has stopped improving: nearly
/// parallel rows can otherwise trade places forever on roundoff.
const STALLED_COST_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-9;
const PHASE_ONE_TOL: f64 = 1e-9;
/// Pivots without objective progress tolerated before switching to Bland's
/// rule for the rest of the phase; four times as many relax the pricing.
const DEGENERATE_STREAK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    /// The feasible region `A x <= b` is empty.
    #[error("linear program is infeasible")]
    Infeasible,
    /// The objective is unbounded above on a nonempty feasible region.
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    /// Loss of numerical accuracy (singular basis or inconsistent phase).
    #[error("simplex lost numerical accuracy")]
    Numerical,
    #[error("dimension mismatch: A is {rows}x{cols}, b has {b_len}, c has {c_len}")]
    Dimensions {
        rows: usize,
        cols: usize,
        b_len: usize,
        c_len: usize,
    },
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub value: f64,
}

/// Maximize `c'x` subject to `A x <= b`.
pub fn maximize(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<LpSolution, LpError> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(LpError::Dimensions {
            rows: m,
            cols: n,
            b_len: b.len(),
            c_len: c.len(),
        });
    }
    if n == 0 {
        return if b.iter().all(|&bi| bi >= -PHASE_ONE_TOL) {
            Ok(LpSolution {
                x: DVector::zeros(0),
                value: 0.0,
            })
        } else {
            Err(LpError::Infeasible)
        };
    }
    DualSimplex::new(a, b, c).solve()
}

/// Chebyshev-style margin problem: maximize `r` subject to
/// `a_k x + ||a_k|| r <= b_k`, `r <= cap`.
///
/// Always feasible; returns the center and the (possibly negative) margin.
/// A negative margin means `A x <= b` is empty, zero means it is flat.
pub fn max_margin(a: &DMatrix<f64>, b: &DVector<f64>, cap: f64) -> Result<(DVector<f64>, f64), LpError> {
    let (m, n) = a.shape();
    let mut lifted = DMatrix::zeros(m + 1, n + 1);
    let mut rhs = DVector::zeros(m + 1);
    for k in 0..m {
        let row = a.row(k);
        let norm = row.norm();
        for j in 0..n {
            lifted[(k, j)] = row[j];
        }
        lifted[(k, n)] = norm;
        rhs[k] = b[k];
    }
    lifted[(m, n)] = 1.0;
    rhs[m] = cap;
    let mut obj = DVector::zeros(n + 1);
    obj[n] = 1.0;
    let sol = maximize(&lifted, &rhs, &obj)?;
    let center = sol.x.rows(0, n).into_owned();
    Ok((center, sol.x[n]))
}

struct DualSimplex {
    /// Equality rows of the dual, one per primal variable, sign-normalized so
    /// that the right-hand side is nonnegative.
    cols: DMatrix<f64>,
    rhs: DVector<f64>,
    signs: DVector<f64>,
    costs: DVector<f64>,
    col_scale: Vec<f64>,
    n: usize,
    m: usize,
}

impl DualSimplex {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Self {
        let (m, n) = a.shape();
        let signs = DVector::from_fn(n, |r, _| if c[r] < 0.0 { -1.0 } else { 1.0 });
        // column j of the dual constraint matrix is row j of A, scaled by signs
        let mut cols = DMatrix::zeros(n, m);
        for j in 0..m {
            for r in 0..n {
                cols[(r, j)] = signs[r] * a[(j, r)];
            }
        }
        let rhs = c.component_mul(&signs);
        let col_scale = (0..m).map(|j| cols.column(j).amax()).collect();
        DualSimplex {
            col_scale,
            cols,
            rhs,
            signs,
            costs: b.clone(),
            n,
            m,
        }
    }

    /// Column `j` of the full matrix `[cols | I]`.
    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.m {
            self.cols.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.n);
            e[j - self.m] = 1.0;
            e
        }
    }

    fn basis_inverse(&self, basis: &[usize]) -> Result<DMatrix<f64>, LpError> {
        let mut bmat = DMatrix::zeros(self.n, self.n);
        for (pos, &j) in basis.iter().enumerate() {
            bmat.set_column(pos, &self.column(j));
        }
        bmat.try_inverse().ok_or(LpError::Numerical)
    }

    fn solve(&self) -> Result<LpSolution, LpError> {
        let limit = 50 * (self.m + self.n) + 1000;
        let mut basis: Vec<usize> = (self.m..self.m + self.n).collect();
        let mut iterations = 0usize;

        // phase one: drive artificials to zero
        let phase_one_cost = |j: usize| if j >= self.m { 1.0 } else { 0.0 };
        match self.run(&mut basis, &phase_one_cost, true, limit, &mut iterations)? {
            PhaseEnd::Optimal => {}
            // the phase-one objective is bounded below by zero, so this
            // only happens through roundoff
            PhaseEnd::Unbounded => return Err(LpError::Numerical),
        }
        let binv = self.basis_inverse(&basis)?;
        let xb = &binv * &self.rhs;
        let infeasibility: f64 = basis
            .iter()
            .zip(xb.iter())
            .filter(|(&j, _)| j >= self.m)
            .map(|(_, &v)| v)
            .sum();
        let scale = 1.0 + self.rhs.amax();
        if infeasibility > PHASE_ONE_TOL * scale {
            // dual infeasible: the primal is unbounded (or infeasible, which
            // callers rule out before asking for a bounded optimum)
            return Err(LpError::Unbounded);
        }
        self.expel_artificials(&mut basis)?;

        let phase_two_cost = |j: usize| if j >= self.m { 0.0 } else { self.costs[j] };
        match self.run(&mut basis, &phase_two_cost, false, limit, &mut iterations)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => return Err(LpError::Infeasible),
        }

        let binv = self.basis_inverse(&basis)?;
        let cb = DVector::from_iterator(self.n, basis.iter().map(|&j| phase_two_cost(j)));
        let pi = binv.transpose() * cb;
        let x = pi.component_mul(&self.signs);
        let value = basis
            .iter()
            .zip((&binv * &self.rhs).iter())
            .map(|(&j, &v)| phase_two_cost(j) * v)
            .sum();
        Ok(LpSolution { x, value })
    }

    /// Pivot basic artificials (at zero level) out of the basis where possible.
    /// Rows where no pivot exists are linearly dependent; their artificial
    /// stays basic at zero and never moves.
    fn expel_artificials(&self, basis: &mut [usize]) -> Result<(), LpError> {
        for pos in 0..self.n {
            if basis[pos] < self.m {
                continue;
            }
            let binv = self.basis_inverse(basis)?;
            let row = binv.row(pos);
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.m {
                if basis.contains(&j) {
                    continue;
                }
                let w = (row * self.cols.column(j))[(0, 0)].abs();
                if w > 1e-9 && best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((j, w));
                }
            }
            if let Some((j, _)) = best {
                basis[pos] = j;
            }
        }
        Ok(())
    }

    fn run(
        &self,
        basis: &mut [usize],
        cost: &dyn Fn(usize) -> f64,
        allow_artificial: bool,
        limit: usize,
        iterations: &mut usize,
    ) -> Result<PhaseEnd, LpError> {
        let total = if allow_artificial { self.m + self.n } else { self.m };
        let mut stalled = 0usize;
        let mut best = f64::INFINITY;
        let mut bland = false;
        loop {
            *iterations += 1;
            if *iterations > limit {
                return Err(LpError::IterationLimit(limit));
            }
            let binv = self.basis_inverse(basis)?;
            let xb = &binv * &self.rhs;
            let cb = DVector::from_iterator(self.n, basis.iter().map(|&j| cost(j)));
            let pi = binv.transpose() * &cb;
            let objective = cb.dot(&xb);
            if objective < best - 1e-12 * (1.0 + objective.abs()) {
                best = objective;
                stalled = 0;
            } else {
                stalled += 1;
            }
            bland |= stalled >= DEGENERATE_STREAK;
            let cost_tol = if stalled >= 4 * DEGENERATE_STREAK {
                STALLED_COST_TOL
            } else {
                REDUCED_COST_TOL
            };
            let mut is_basic = vec![false; self.m + self.n];
            for &j in basis.iter() {
                is_basic[j] = true;
            }
            let dots = self.cols.tr_mul(&pi);
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                if is_basic[j] {
                    continue;
                }
                let (dot, scale) = if j < self.m {
                    (dots[j], 1.0 + self.col_scale[j])
                } else {
                    (pi[j - self.m], 2.0)
                };
                let reduced = cost(j) - dot;
                if reduced < -cost_tol * scale {
                    if bland {
                        entering = Some((j, reduced));
                        break;
                    }
                    if entering.is_none_or(|(_, r)| reduced < r) {
                        entering = Some((j, reduced));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let w = &binv * self.column(q);
            let pivot_tol = PIVOT_TOL * w.amax().max(1.0);
            let mut leaving: Option<(usize, f64)> = None;
            for pos in 0..self.n {
                if w[pos] > pivot_tol {
                    let ratio = xb[pos].max(0.0) / w[pos];
                    let better = match leaving {
                        None => true,
                        Some((lp, lr)) => {
                            let tie = ratio <= lr + 1e-13;
                            let prefer = if bland { basis[pos] < basis[lp] } else { w[pos] > w[lp] };
                            ratio < lr - 1e-13 || (tie && prefer)
                        }
                    };
                    if better {
                        leaving = Some((pos, ratio));
                    }
                }
            }
            let Some((pos, _)) = leaving else {
                return Ok(PhaseEnd::Unbounded);
            };
            basis[pos] = q;
        }
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(dim: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(2 * dim, dim);
        for i in 0..dim {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
        }
        (a, DVector::from_element(2 * dim, 1.0))
    }

    #[test]
    fn box_support() {
        let (a, b) = unit_box(2);
        let sol = maximize(&a, &b, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(sol.value, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        let sol = maximize(&a, &b, &DVector::from_vec(vec![-3.0, 0.5])).unwrap();
        assert_abs_diff_eq!(sol.value, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn detects_unbounded() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0]);
        let err = maximize(&a, &b, &DVector::from_vec(vec![0.0, 1.0])).unwrap_err();
        assert_eq!(err, LpError::Unbounded);
    }

    #[test]
    fn detects_infeasible() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let err = maximize(&a, &b, &DVector::from_vec(vec![1.0])).unwrap_err();
        assert_eq!(err, LpError::Infeasible);
    }

    #[test]
    fn degenerate_vertex() {
        // many constraints through the optimal vertex (1, 1)
        let mut rows = vec![];
        let mut rhs = vec![];
        for k in 0..12 {
            let t = k as f64 / 11.0;
            rows.extend_from_slice(&[t, 1.0 - t]);
            rhs.push(1.0);
        }
        rows.extend_from_slice(&[-1.0, 0.0, 0.0, -1.0]);
        rhs.extend_from_slice(&[5.0, 5.0]);
        let a = DMatrix::from_row_slice(14, 2, &rows);
        let b = DVector::from_vec(rhs);
        let sol = maximize(&a, &b, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(sol.value, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn margin_flags_empty_and_flat() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let (_, r) = max_margin(&a, &DVector::from_vec(vec![1.0, -2.0]), 1.0).unwrap();
        assert!(r < -0.4);
        let (_, r) = max_margin(&a, &DVector::from_vec(vec![0.5, -0.5]), 1.0).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
        let (c, r) = max_margin(&a, &DVector::from_vec(vec![1.0, 1.0]), 10.0).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-12);
    }
}
