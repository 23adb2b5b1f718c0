//! Dense matrix helpers shared by the design routines.

use nalgebra::DMatrix;

/// Margin below one that counts as Schur.
pub const SCHUR_MARGIN: f64 = 1e-9;

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn is_schur(m: &DMatrix<f64>) -> bool {
    spectral_radius(m) < 1.0 - SCHUR_MARGIN
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Solve the discrete Lyapunov equation `F' P F - P = -Q` by vectorization.
pub fn discrete_lyapunov(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let ft = f.transpose();
    // vec(F' P F) = (F' ⊗ F') vec(P)
    let kron = ft.kronecker(&ft);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let sol = lhs.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Some((&p + p.transpose()) * 0.5)
}
