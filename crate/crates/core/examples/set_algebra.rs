//! Minkowski sum, Pontryagin difference, linear image and projection of
//! small polytopes, printed as vertex lists.

use dswmpc::geometry::{GeometryError, Polytope};
use nalgebra::{DMatrix, DVector};

fn show(name: &str, p: &Polytope) -> Result<(), GeometryError> {
    let verts: Vec<String> = p.vertices_2d()?.iter().map(|v| format!("({:.3}, {:.3})", v[0], v[1])).collect();
    println!("{name:>10}: {}", verts.join(" "));
    Ok(())
}

fn main() -> Result<(), GeometryError> {
    let square = Polytope::centered_box(&[1.0, 1.0])?;
    let diamond = Polytope::from_rows(
        2,
        &[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]],
        &[0.25; 4],
    )?;
    show("square", &square)?;
    show("diamond", &diamond)?;
    show("sum", &square.minkowski_sum(&diamond)?)?;
    show("difference", &square.pontryagin_diff(&diamond)?)?;

    let shear = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    show("sheared", &square.affine_image(&shear)?)?;

    let (lo, hi) = square.affine_image(&shear)?.project_out(&[1])?.bounding_box()?;
    println!("projection of the sheared square on x1: [{:.3}, {:.3}]", lo[0], hi[0]);

    let x = DVector::from_vec(vec![0.9, 0.9]);
    println!("(0.9, 0.9) in square ⊖ diamond: {}", square.pontryagin_diff(&diamond)?.contains(&x, 1e-12));
    Ok(())
}
