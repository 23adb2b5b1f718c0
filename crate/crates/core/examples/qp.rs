//! A strictly convex QP with equality and inequality constraints.

use dswmpc::qp::{kkt_residuals, solve_qp, QpError, QpProblem};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), QpError> {
    // minimize (x1 - 1)^2 + (x2 - 2.5)^2 subject to a triangle and x1 + x2 = 2
    let h = DMatrix::from_diagonal_element(2, 2, 2.0);
    let f = DVector::from_vec(vec![-2.0, -5.0]);
    let a_in = DMatrix::from_row_slice(3, 2, &[-1.0, 2.0, 1.0, 2.0, 1.0, -2.0]);
    let b_in = DVector::from_vec(vec![2.0, 6.0, 2.0]);
    let a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let b_eq = DVector::from_vec(vec![2.0]);
    let p = QpProblem::new(h, f).with_inequalities(a_in, b_in).with_equalities(a_eq, b_eq);
    let s = solve_qp(&p)?;
    println!("x = ({:.6}, {:.6}), objective {:.6}", s.x[0], s.x[1], p.objective(&s.x));
    println!("active inequalities {:?}", s.active);
    println!("KKT residuals {:?}", kkt_residuals(&p, &s));
    Ok(())
}
