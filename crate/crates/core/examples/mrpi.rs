//! Outer approximation of the minimal robust positively invariant set of
//! `x+ = F x + w` and its invariance certificate.

use dswmpc::geometry::Polytope;
use dswmpc::invariants::{certify_rpi, mrpi_approx, InvariantError};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), InvariantError> {
    let f = DMatrix::from_element(1, 1, 0.5);
    let w = Polytope::bounds(&[-1.0], &[1.0])?;
    let z = mrpi_approx(&f, &w, 1e-3)?;
    let (lo, hi) = z.bounding_box()?;
    println!("scalar F = 0.5, W = [-1, 1]: Z = [{:.4}, {:.4}] (exact [-2, 2])", lo[0], hi[0]);

    let f = DMatrix::from_row_slice(2, 2, &[0.6, 0.3, -0.2, 0.5]);
    let w = Polytope::centered_box(&[0.1, 0.05])?;
    for eps in [1e-1, 1e-2, 1e-3] {
        let z = mrpi_approx(&f, &w, eps)?;
        let width = z.support(&DVector::from_vec(vec![1.0, 0.0]))?;
        println!(
            "eps {eps:.0e}: {} facets, support along x1 {width:.5}, certified {}",
            z.num_rows(),
            certify_rpi(&f, &w, &z, 1e-9)?
        );
    }
    Ok(())
}
